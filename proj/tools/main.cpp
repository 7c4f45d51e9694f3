#include "tempoflow/cli.hpp"

int main(int argc, char** argv) { return tempoflow::run_cli(argc, argv); }
