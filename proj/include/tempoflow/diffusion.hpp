#pragma once

// Deterministic (eta = 0) DDIM sampling over a pluggable noise predictor,
// the closed-form forward diffusion, and a fixed-weight convolutional toy
// generator. Latents live in pixel space: [3,H,W] tensors.

#include <atomic>
#include <cstdint>
#include <vector>

#include "tempoflow/tensor.hpp"

namespace tempoflow {

struct DiffusionSchedule {
  int steps = 0;                   // L
  std::vector<double> alpha_bar;   // steps + 1 entries, alpha_bar[0] == 1
  double eta = 0.0;
};

// alpha_bar[l] = 1 - (1 - alpha_min) * l / L.
DiffusionSchedule make_schedule(int steps, double alpha_min);

// sqrt(abar) * z0 + sqrt(1 - abar) * zL at `level`.
Tensor diffuse(const Tensor& z0, const Tensor& zL, int level, const DiffusionSchedule& sched);

// Predicts the noise component of z at a given level. Counts its calls.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  Tensor predict_noise(const Tensor& z, const Tensor& cond, int level, const DiffusionSchedule& sched) const {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return predict(z, cond, level, sched);
  }
  std::uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }
  void reset_calls() { calls_.store(0, std::memory_order_relaxed); }

 protected:
  virtual Tensor predict(const Tensor& z, const Tensor& cond, int level, const DiffusionSchedule& sched) const = 0;

 private:
  mutable std::atomic<std::uint64_t> calls_{0};
};

struct GeneratorSpec {
  std::uint64_t seed = 0;
  int hidden_channels = 8;
};

// Two 3x3 convolutions with a tanh in between over concat(z, cond, level
// plane). The network output is read as a clean-image estimate x0 and turned
// into the matching noise estimate (z - sqrt(abar) x0) / sqrt(1 - abar).
class ToyGenerator final : public Denoiser {
 public:
  ToyGenerator(GeneratorSpec spec, Index cond_channels);

  const GeneratorSpec& spec() const { return spec_; }
  Index cond_channels() const { return cond_channels_; }

  // Raw network output, [3,H,W].
  Tensor predict_clean(const Tensor& z, const Tensor& cond, int level, const DiffusionSchedule& sched) const;

 protected:
  Tensor predict(const Tensor& z, const Tensor& cond, int level, const DiffusionSchedule& sched) const override;

 private:
  GeneratorSpec spec_;
  Index cond_channels_;
  Tensor conv1_;
  Tensor conv2_;
};

// One-shot convenience wrapper around ToyGenerator.
Tensor toy_generator(const Tensor& z, const Tensor& cond, int level, const GeneratorSpec& spec,
                     const DiffusionSchedule& sched);

// Runs levels start_level .. 1 and returns z^0. Makes exactly start_level
// calls to the denoiser.
Tensor ddim_denoise(const Tensor& z_start, int start_level, const Tensor& cond, const Denoiser& gen,
                    const DiffusionSchedule& sched);

// clamp(z0 * 0.5 + 0.5, 0, 1).
Tensor frame_decode(const Tensor& z0);

// Diffuses a clean latent back to level gamma with the original noise zL.
Tensor renoise_to_level(const Tensor& z0, const Tensor& zL, int gamma, const DiffusionSchedule& sched);

enum class Modality { kDepth, kNormal };

struct ConditionStack {
  std::vector<Tensor> frames;  // [C_c,H,W] per frame, values in [0,1]
  Modality modality = Modality::kDepth;
};

struct LatentSequence {
  std::vector<Tensor> latents;  // [3,H,W] each
  int level = 0;
};

}  // namespace tempoflow
