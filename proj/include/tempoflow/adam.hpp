#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "tempoflow/tensor.hpp"

namespace tempoflow {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(Index size, AdamOptions opts)
      : first_moment(Eigen::ArrayXd::Zero(size)), second_moment(Eigen::ArrayXd::Zero(size)), options(opts) {}

  Eigen::ArrayXd first_moment;
  Eigen::ArrayXd second_moment;
  std::uint64_t step_count = 0;
  AdamOptions options;
};

// One bias-corrected Adam update of a leaf tensor from its accumulated
// gradient. The gradient is left in place; callers zero it before the next
// accumulation round.
void adam_step(Tensor& param, AdamState& state);

}  // namespace tempoflow
