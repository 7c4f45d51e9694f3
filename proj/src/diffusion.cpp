#include "tempoflow/diffusion.hpp"

#include <cmath>
#include <random>

#include "tempoflow/errors.hpp"

namespace tempoflow {

namespace {

void require_level(int level, const DiffusionSchedule& sched, int lowest) {
  if (level < lowest || level > sched.steps) {
    throw ContractViolation("noise level " + std::to_string(level) + " outside [" + std::to_string(lowest) +
                            ", " + std::to_string(sched.steps) + "]");
  }
}

Tensor seeded_kernel(std::mt19937_64& rng, Index out_ch, Index in_ch) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_ch * 9));
  Eigen::ArrayXd w(out_ch * in_ch * 9);
  for (Index i = 0; i < w.size(); ++i) w[i] = normal(rng) * scale;
  return Tensor::from_data({out_ch, in_ch, 3, 3}, std::move(w));
}

}  // namespace

DiffusionSchedule make_schedule(int steps, double alpha_min) {
  require(steps >= 1, "make_schedule: step count must be >= 1");
  require(alpha_min > 0.0 && alpha_min < 1.0, "make_schedule: alpha_min must lie in (0, 1)");
  DiffusionSchedule s;
  s.steps = steps;
  s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
  for (int l = 0; l <= steps; ++l) {
    s.alpha_bar[l] = 1.0 - (1.0 - alpha_min) * static_cast<double>(l) / static_cast<double>(steps);
  }
  s.alpha_bar[steps] = alpha_min;
  return s;
}

Tensor diffuse(const Tensor& z0, const Tensor& zL, int level, const DiffusionSchedule& sched) {
  require_level(level, sched, 0);
  if (z0.shape() != zL.shape()) throw ContractViolation("diffuse: shape mismatch");
  const double ab = sched.alpha_bar[level];
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * zL;
}

ToyGenerator::ToyGenerator(GeneratorSpec spec, Index cond_channels) : spec_(spec), cond_channels_(cond_channels) {
  require(spec.hidden_channels >= 1, "generator: hidden_channels must be positive");
  require(cond_channels >= 1, "generator: need at least one condition channel");
  std::mt19937_64 rng(spec.seed);
  conv1_ = seeded_kernel(rng, spec.hidden_channels, 3 + cond_channels + 1);
  conv2_ = seeded_kernel(rng, 3, spec.hidden_channels);
}

Tensor ToyGenerator::predict_clean(const Tensor& z, const Tensor& cond, int level,
                                   const DiffusionSchedule& sched) const {
  require_level(level, sched, 0);
  require(z.shape().size() == 3 && z.dim(0) == 3, "generator: latent must be [3,H,W]");
  require(cond.shape().size() == 3 && cond.dim(0) == cond_channels_, "generator: condition channel mismatch");
  if (z.dim(1) != cond.dim(1) || z.dim(2) != cond.dim(2)) {
    throw ContractViolation("generator: latent and condition dimensions differ");
  }
  const Tensor level_plane =
      Tensor::constant({1, z.dim(1), z.dim(2)}, static_cast<double>(level) / static_cast<double>(sched.steps));
  const Tensor input = concat_channels({z, cond, level_plane});
  return conv2d(tanh_act(conv2d(input, conv1_)), conv2_);
}

Tensor ToyGenerator::predict(const Tensor& z, const Tensor& cond, int level, const DiffusionSchedule& sched) const {
  require_level(level, sched, 1);
  const double ab = sched.alpha_bar[level];
  const Tensor x0 = predict_clean(z, cond, level, sched);
  return (z - std::sqrt(ab) * x0) * (1.0 / std::sqrt(1.0 - ab));
}

Tensor toy_generator(const Tensor& z, const Tensor& cond, int level, const GeneratorSpec& spec,
                     const DiffusionSchedule& sched) {
  require(cond.shape().size() == 3, "generator: condition must be [C,H,W]");
  const ToyGenerator gen(spec, cond.dim(0));
  return gen.predict_noise(z, cond, level, sched);
}

Tensor ddim_denoise(const Tensor& z_start, int start_level, const Tensor& cond, const Denoiser& gen,
                    const DiffusionSchedule& sched) {
  require_level(start_level, sched, 1);
  Tensor z = z_start;
  for (int l = start_level; l >= 1; --l) {
    const Tensor eps = gen.predict_noise(z, cond, l, sched);
    if (eps.shape() != z.shape()) throw ContractViolation("ddim_denoise: noise estimate has the wrong shape");
    const double ab = sched.alpha_bar[l];
    const double ab_prev = sched.alpha_bar[l - 1];
    const Tensor x0 = (z - std::sqrt(1.0 - ab) * eps) * (1.0 / std::sqrt(ab));
    z = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
  }
  return z;
}

Tensor frame_decode(const Tensor& z0) { return clamp(z0 * 0.5 + 0.5, 0.0, 1.0); }

Tensor renoise_to_level(const Tensor& z0, const Tensor& zL, int gamma, const DiffusionSchedule& sched) {
  require_level(gamma, sched, 1);
  return diffuse(z0, zL, gamma, sched);
}

}  // namespace tempoflow
