#include "tempoflow/adam.hpp"

#include <cmath>

#include "tempoflow/errors.hpp"

namespace tempoflow {

void adam_step(Tensor& param, AdamState& state) {
  require(param.is_leaf() && param.requires_grad(), "adam_step: parameter must be a trainable leaf");
  if (!param.has_grad()) throw ContractViolation("adam_step: parameter has no gradient");
  require(state.first_moment.size() == param.numel() && state.second_moment.size() == param.numel(),
          "adam_step: state is not sized to the parameter");
  const AdamOptions& o = state.options;
  require(o.lr > 0.0, "adam_step: learning rate must be positive");

  const Eigen::ArrayXd& g = param.grad();
  state.step_count += 1;
  state.first_moment = o.beta1 * state.first_moment + (1.0 - o.beta1) * g;
  state.second_moment = o.beta2 * state.second_moment + (1.0 - o.beta2) * g.square();
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  param.mutable_data() -= o.lr * (state.first_moment / c1) / ((state.second_moment / c2).sqrt() + o.epsilon);
}

}  // namespace tempoflow
