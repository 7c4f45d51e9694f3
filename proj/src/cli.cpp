#include "tempoflow/cli.hpp"

#include <chrono>
#include <cstdio>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "tempoflow/consistency.hpp"
#include "tempoflow/errors.hpp"
#include "tempoflow/io.hpp"
#include "tempoflow/metrics.hpp"
#include "tempoflow/run_config.hpp"
#include "tempoflow/scene.hpp"

namespace tempoflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c == '\n' ? ' ' : c);
  }
  return out;
}

int fail(std::ostream& err, const char* cls, int code, const std::string& kind, const std::string& message) {
  err << "error class=" << cls << " code=" << code << " kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return code;
}

void write_json(const fs::path& path, const json& doc) { io::write_file(path, doc.dump(2) + "\n"); }

std::vector<Tensor> read_frames(const fs::path& dir) {
  std::vector<Tensor> frames;
  for (const auto& p : io::list_indexed(dir, "frame", "png")) frames.push_back(io::read_png(p));
  return frames;
}

std::vector<FlowField> read_flows(const fs::path& dir) {
  std::vector<FlowField> flows;
  for (const auto& p : io::list_indexed(dir, "flow", "flo")) flows.push_back(io::read_flo(p));
  return flows;
}

void write_frames(const fs::path& dir, std::span<const Tensor> frames) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < frames.size(); ++t) io::write_png(dir / io::indexed_name("frame", int(t), "png"), frames[t]);
}

// Optional per-run overrides of every OptimConfig field.
struct OptimOverrides {
  std::optional<int> frames, window, steps, gamma, keyframe_stride, epochs, early_stop_patience;
  std::optional<double> lr, early_stop_min_improvement;
  std::optional<std::uint64_t> seed;
  std::optional<bool> shared_init;

  void attach(CLI::App* cmd) {
    cmd->add_option("--frames", frames, "Number of frames T");
    cmd->add_option("--window", window, "Window size S (0 = T)");
    cmd->add_option("--steps", steps, "Diffusion steps L");
    cmd->add_option("--gamma", gamma, "Optimized noise level");
    cmd->add_option("--keyframe-stride", keyframe_stride, "Keyframe stride k");
    cmd->add_option("--epochs", epochs, "Epoch budget");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--seed", seed, "Noise seed");
    cmd->add_option("--shared-init", shared_init, "Replicate one noise draw across frames (true/false)");
    cmd->add_option("--early-stop-patience", early_stop_patience, "Early-stop window in epochs (0 disables)");
    cmd->add_option("--early-stop-min-improvement", early_stop_min_improvement, "Relative improvement threshold");
  }

  void apply(OptimConfig& o) const {
    if (frames) o.frames = *frames;
    if (window) o.window = *window;
    if (steps) o.steps = *steps;
    if (gamma) o.gamma = *gamma;
    if (keyframe_stride) o.keyframe_stride = *keyframe_stride;
    if (epochs) o.epochs = *epochs;
    if (lr) o.lr = *lr;
    if (seed) o.seed = *seed;
    if (shared_init) o.shared_init = *shared_init;
    if (early_stop_patience) o.early_stop_patience = *early_stop_patience;
    if (early_stop_min_improvement) o.early_stop_min_improvement = *early_stop_min_improvement;
  }
};

struct Run {
  RunConfig cfg;
  RunInputs inputs;
  DiffusionSchedule sched;
};

Run prepare_run(const fs::path& config_path, const OptimOverrides& overrides) {
  Run run;
  run.cfg = load_run_config(config_path);
  overrides.apply(run.cfg.optim);
  run.inputs = load_run_inputs(run.cfg);
  try {
    run.cfg.optim.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  run.sched = make_schedule(run.cfg.optim.steps, run.cfg.alpha_min);
  return run;
}

fs::path output_dir(const std::string& flag, const RunConfig& cfg) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  throw ConfigError("no output directory: pass --out or set output_dir");
}

int cmd_gen_scene(const std::string& spec_path, std::uint64_t seed, const fs::path& out) {
  SceneSpec spec = default_scene_spec();
  if (!spec_path.empty()) {
    json doc;
    try {
      doc = json::parse(io::read_file(spec_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(spec_path + ": " + e.what());
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    spec = scene_spec_from_json(doc);
  }
  SceneBundle bundle;
  try {
    bundle = generate(spec, seed);
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  fs::create_directories(out);
  write_frames(out, bundle.frames);
  for (std::size_t t = 0; t < bundle.depths.size(); ++t) {
    io::write_pfm(out / io::indexed_name("depth", int(t), "pfm"), bundle.depths[t]);
  }
  for (std::size_t t = 0; t < bundle.flows.size(); ++t) {
    io::write_flo(out / io::indexed_name("flow", int(t), "flo"), bundle.flows[t]);
    io::write_pgm(out / io::indexed_name("occ", int(t), "pgm"), bundle.occlusions[t]);
  }
  json scene = to_json(spec);
  scene["seed"] = seed;
  write_json(out / "scene.json", scene);
  write_json(out / "intrinsics.json", {{"fx", bundle.intrinsics.fx()}, {"fy", bundle.intrinsics.fy()}});
  return kExitOk;
}

int cmd_derive_normal(const fs::path& depth_dir, const std::string& intrinsics, const fs::path& out) {
  double fx = 0.0, fy = 0.0;
  char tail = 0;
  if (std::sscanf(intrinsics.c_str(), "%lf,%lf%c", &fx, &fy, &tail) != 2 || !(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("--intrinsics expects two positive numbers 'fx,fy', got '" + intrinsics + "'");
  }
  const CameraIntrinsics cam = CameraIntrinsics::from_focal(fx, fy);
  fs::create_directories(out);
  const auto files = io::list_indexed(depth_dir, "depth", "pfm");
  for (std::size_t t = 0; t < files.size(); ++t) {
    const NormalMap n = depth_to_normal(io::read_pfm(files[t]), cam);
    io::write_png(out / io::indexed_name("normal", int(t), "png"), n.as_tensor());
  }
  return kExitOk;
}

int cmd_derive_occlusion(const fs::path& frames_dir, const fs::path& flows_dir, double threshold,
                         const fs::path& out) {
  if (!(threshold > 0.0)) throw ConfigError("--threshold must be positive");
  const auto frames = read_frames(frames_dir);
  const auto flows = read_flows(flows_dir);
  if (flows.size() + 1 != frames.size()) throw DataError("count_mismatch", "need one flow fewer than frames");
  fs::create_directories(out);
  for (std::size_t t = 0; t < flows.size(); ++t) {
    if (flows[t].width() != frames[t].dim(2) || flows[t].height() != frames[t].dim(1)) {
      throw DataError("dimension_mismatch", "flow size differs from frames");
    }
    io::write_pgm(out / io::indexed_name("occ", int(t), "pgm"),
                  derive_occlusion(frames[t], frames[t + 1], flows[t], threshold));
  }
  return kExitOk;
}

int cmd_optimize(const fs::path& config_path, const OptimOverrides& overrides, const std::string& out_flag,
                 std::ostream& out) {
  Run run = prepare_run(config_path, overrides);
  const fs::path dir = output_dir(out_flag, run.cfg);
  const ToyGenerator gen(run.cfg.generator, run.inputs.cond.frames[0].dim(0));
  const OptimizationResult result =
      optimize(run.cfg.optim, run.inputs.cond, run.inputs.flows, run.inputs.occs, gen, run.sched);
  io::write_latents(dir / "latents", result.latents);
  write_frames(dir / "frames", result.frames);
  json report = to_json(result.report, false);
  report["config"] = to_json(run.cfg.optim);
  write_json(dir / "report.json", report);
  write_json(dir / "timing.json", {{"seconds", result.report.seconds}});
  out << "initial_objective=" << fmt(result.report.initial_objective) << "\n"
      << "final_objective=" << fmt(result.report.final_objective) << "\n"
      << "epochs_run=" << result.report.epochs_run << "\n"
      << "generator_calls_per_epoch=" << result.report.generator_calls_per_epoch << "\n";
  return kExitOk;
}

int cmd_render(const fs::path& config_path, const OptimOverrides& overrides, const std::string& latents_dir,
               const std::string& out_flag, std::ostream& out) {
  Run run = prepare_run(config_path, overrides);
  const fs::path dir = output_dir(out_flag, run.cfg);
  const Index h = run.inputs.cond.frames[0].dim(1), w = run.inputs.cond.frames[0].dim(2);
  LatentSequence latents;
  if (latents_dir.empty()) {
    latents = init_noise(run.cfg.optim, h, w);
  } else {
    latents = io::read_latents(latents_dir);
    if (static_cast<int>(latents.latents.size()) != run.cfg.optim.frames) {
      throw DataError("count_mismatch", "latent count differs from the frame count");
    }
    if (latents.level < 1 || latents.level > run.sched.steps) {
      throw DataError("bad_values", "latent level outside [1, steps]");
    }
    for (const auto& z : latents.latents) {
      if (z.shape() != Shape{3, h, w}) throw DataError("dimension_mismatch", "latent shape differs from frames");
    }
  }
  const ToyGenerator gen(run.cfg.generator, run.inputs.cond.frames[0].dim(0));
  const auto frames = render_frames(latents, run.inputs.cond, gen, run.sched);
  write_frames(dir / "frames", frames);
  const double err = warp_error(frames, run.inputs.flows, run.inputs.occs, run.cfg.optim.effective_window());
  write_json(dir / "render.json", {{"level", latents.level},
                                   {"generator_calls", gen.calls()},
                                   {"warp_error", err},
                                   {"config", to_json(run.cfg.optim)}});
  out << "generator_calls=" << gen.calls() << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::string frames, flows, occ, estimator, json_path;
  int window = 0;
  Index block = 4;
  Index radius = 3;
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (o.window < 0) throw ConfigError("--window must be >= 0");
  const auto frames = read_frames(o.frames);
  const auto flows = read_flows(o.flows);
  std::vector<OcclusionMask> occs;
  for (const auto& p : io::list_indexed(o.occ, "occ", "pgm")) occs.push_back(io::read_pgm(p));
  if (flows.size() + 1 != frames.size() || occs.size() != flows.size()) {
    throw DataError("count_mismatch", "need T frames, T - 1 flows and T - 1 masks");
  }
  const Index h = frames[0].dim(1), w = frames[0].dim(2);
  for (const auto& f : frames) {
    if (f.dim(1) != h || f.dim(2) != w) throw DataError("dimension_mismatch", "frames differ in size");
  }
  for (std::size_t t = 0; t < flows.size(); ++t) {
    if (flows[t].width() != w || flows[t].height() != h || occs[t].width != w || occs[t].height != h) {
      throw DataError("dimension_mismatch", "flow or mask size differs from frames");
    }
  }
  const int window = o.window > 0 ? o.window : static_cast<int>(frames.size());
  json report = {{"frames", frames.size()}, {"window", window}};
  report["warp_error"] = warp_error(frames, flows, occs, window);
  out << "frames=" << frames.size() << "\n"
      << "window=" << window << "\n"
      << "warp_error=" << fmt(report["warp_error"].get<double>()) << "\n";

  if (!o.estimator.empty()) {
    if (o.estimator != "block") throw ConfigError("unknown estimator '" + o.estimator + "' (expected block)");
    if (o.block < 1 || o.radius < 1) throw ConfigError("--block and --radius must be >= 1");
    if (w < o.block || h < o.block) throw ConfigError("--block exceeds the frame size");
    std::vector<FlowField> estimated;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
      estimated.push_back(block_match_flow(frames[t], frames[t + 1], o.block, o.radius));
    }
    const EpeResult all = sequence_epe(estimated, flows);
    const EpeResult masked = sequence_epe(estimated, flows, occs);
    report["estimator"] = {{"name", "block"}, {"block", o.block}, {"radius", o.radius}};
    report["epe"] = all.mean_epe;
    report["epe_per_frame"] = all.per_frame;
    report["epe_valid_fraction"] = all.valid_pixel_fraction;
    report["epe_occlusion_masked"] = masked.mean_epe;
    report["epe_occlusion_masked_per_frame"] = masked.per_frame;
    report["epe_occlusion_masked_valid_fraction"] = masked.valid_pixel_fraction;
    out << "epe=" << fmt(all.mean_epe) << "\n"
        << "epe_valid_fraction=" << fmt(all.valid_pixel_fraction) << "\n"
        << "epe_occlusion_masked=" << fmt(masked.mean_epe) << "\n"
        << "epe_occlusion_masked_valid_fraction=" << fmt(masked.valid_pixel_fraction) << "\n";
  }
  if (!o.json_path.empty()) write_json(o.json_path, report);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal-consistency optimization of diffusion noise latents", "tempoflow"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  std::uint64_t scene_seed = 0;
  auto* gen_scene = app.add_subcommand("gen-scene", "Render a procedural scene bundle");
  gen_scene->add_option("--spec", spec_path, "Scene spec JSON (default scene when omitted)");
  gen_scene->add_option("--seed", scene_seed, "Scene seed");
  gen_scene->add_option("--out", out_dir, "Output directory")->required();

  std::string depth_dir, intrinsics;
  auto* derive_normal = app.add_subcommand("derive-normal", "Convert depth maps to normal maps");
  derive_normal->add_option("--depth", depth_dir, "Directory of depth_NNNN.pfm")->required();
  derive_normal->add_option("--intrinsics", intrinsics, "Focal lengths 'fx,fy'")->required();
  derive_normal->add_option("--out", out_dir, "Output directory")->required();

  std::string frames_dir, flows_dir;
  double threshold = 1e-6;
  auto* derive_occ = app.add_subcommand("derive-occlusion", "Derive occlusion masks from frames and flows");
  derive_occ->add_option("--frames", frames_dir, "Directory of frame_NNNN.png")->required();
  derive_occ->add_option("--flows", flows_dir, "Directory of flow_NNNN.flo")->required();
  derive_occ->add_option("--threshold", threshold, "Mean squared colour difference threshold");
  derive_occ->add_option("--out", out_dir, "Output directory")->required();

  std::string config_path, latents_dir;
  OptimOverrides overrides;
  auto* optimize_cmd = app.add_subcommand("optimize", "Optimize noise latents for temporal consistency");
  optimize_cmd->add_option("--config", config_path, "Run config JSON")->required();
  optimize_cmd->add_option("--out", out_dir, "Output directory");
  overrides.attach(optimize_cmd);

  auto* render_cmd = app.add_subcommand("render", "Denoise latents without optimization");
  render_cmd->add_option("--config", config_path, "Run config JSON")->required();
  render_cmd->add_option("--latents", latents_dir, "Latent directory (fresh noise when omitted)");
  render_cmd->add_option("--out", out_dir, "Output directory");
  overrides.attach(render_cmd);

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Warp error and flow EPE of a frame sequence");
  eval_cmd->add_option("--frames", eval_opts.frames, "Directory of frame_NNNN.png")->required();
  eval_cmd->add_option("--flows", eval_opts.flows, "Directory of ground-truth flow_NNNN.flo")->required();
  eval_cmd->add_option("--occ", eval_opts.occ, "Directory of occ_NNNN.pgm")->required();
  eval_cmd->add_option("--window", eval_opts.window, "Window size S (0 = T)");
  eval_cmd->add_option("--estimator", eval_opts.estimator, "Flow estimator for EPE (block)");
  eval_cmd->add_option("--block", eval_opts.block, "Block size");
  eval_cmd->add_option("--radius", eval_opts.radius, "Search radius");
  eval_cmd->add_option("--json", eval_opts.json_path, "Write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "config", kExitConfig, "usage", e.what());
  }

  try {
    if (gen_scene->parsed()) return cmd_gen_scene(spec_path, scene_seed, out_dir);
    if (derive_normal->parsed()) return cmd_derive_normal(depth_dir, intrinsics, out_dir);
    if (derive_occ->parsed()) return cmd_derive_occlusion(frames_dir, flows_dir, threshold, out_dir);
    if (optimize_cmd->parsed()) return cmd_optimize(config_path, overrides, out_dir, out);
    if (render_cmd->parsed()) return cmd_render(config_path, overrides, latents_dir, out_dir, out);
    return cmd_eval(eval_opts, out);
  } catch (const ConfigError& e) {
    return fail(err, "config", kExitConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(err, "data", kExitData, e.kind(), e.what());
  } catch (const ContractViolation& e) {
    return fail(err, "data", kExitData, "contract", e.what());
  } catch (const NumericalError& e) {
    return fail(err, "numerical", kExitNumerical, "non_finite", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, "data", kExitData, "io", e.what());
  } catch (const std::exception& e) {
    return fail(err, "internal", kExitInternal, "internal", e.what());
  }
}

}  // namespace tempoflow
