#pragma once

// Temporal-consistency optimization of the initial noise latents fed to a
// fixed DDIM sampler.
//
// The objective compares each frame, warped back along the flow chain,
// against up to S earlier frames on the pixels where every correspondence in
// the chain is valid:
//
//   D(t)      = sum_{s=1..min(S,t)} nmse(frame[t-s], warp(frame[t]; flows t-1 .. t-s))
//   objective = sum_t D(t) / (min(S,t) + 1)
//
// Optimization runs one frame graph at a time. Frame t is compared against
// detached copies of the frames already generated in the current epoch, and
// frame 0 against the previous epoch's frames, so that every latent receives
// a gradient while only a single frame graph is alive.

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tempoflow/diffusion.hpp"
#include "tempoflow/flow.hpp"

namespace tempoflow {

struct OptimConfig {
  int frames = 8;            // T
  int window = 0;            // S; 0 means T
  int steps = 10;            // L
  int gamma = 10;            // optimized noise level, 1..L
  int keyframe_stride = 1;   // k
  int epochs = 300;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool shared_init = true;
  // Stop once the best objective improved by at most this fraction over the
  // last `early_stop_patience` epochs. A patience of 0 disables the rule.
  int early_stop_patience = 25;
  double early_stop_min_improvement = 1e-3;

  int effective_window() const { return window > 0 ? window : frames; }
  void validate() const;
};

struct ConsistencyReport {
  std::vector<double> objective_history;  // one entry per epoch, before its update
  double initial_objective = 0.0;
  double final_objective = 0.0;           // on the returned latents
  std::vector<double> final_discrepancy;  // D(t) on the returned latents
  int epochs_run = 0;
  std::uint64_t generator_calls = 0;      // all forward passes, including setup
  std::uint64_t generator_calls_per_epoch = 0;
  std::size_t optimized_latents = 0;
  int peak_live_graphs = 0;
  double seconds = 0.0;
};

struct OptimizationResult {
  LatentSequence latents;        // expanded, one per frame, at level gamma
  std::vector<Tensor> frames;    // decoded from `latents`
  ConsistencyReport report;
};

// Standard-normal latents at level cfg.steps. With shared_init a single draw
// is replicated across all frames.
LatentSequence init_noise(const OptimConfig& cfg, Index height, Index width);

// D(t). frames has T entries; flows and occs have T - 1.
Tensor discrepancy(std::span<const Tensor> frames, std::span<const FlowField> flows,
                   std::span<const OcclusionMask> occs, int t, int window);

Tensor objective(std::span<const Tensor> frames, std::span<const FlowField> flows,
                 std::span<const OcclusionMask> occs, int window);

struct FramewiseStats {
  std::vector<Tensor> frames;  // detached copies, one per frame
  double cached_loss = 0.0;    // value of the cached-reference objective
  int peak_live_graphs = 0;
};

// Builds, differentiates and frees one frame graph at a time, accumulating
// gradients into whatever leaves `render_frame` depends on. `previous_epoch`
// holds last epoch's detached frames (empty on the first epoch) and is
// replaced with this epoch's frames on return.
FramewiseStats accumulate_gradients_framewise(const std::function<Tensor(int)>& render_frame, int frame_count,
                                              std::span<const FlowField> flows,
                                              std::span<const OcclusionMask> occs, int window,
                                              std::vector<Tensor>& previous_epoch);

// Spherical interpolation between u and v; linear when the angle is below
// 1e-6. Differentiable in both endpoints.
Tensor slerp(const Tensor& u, const Tensor& v, double alpha);

// Frame indices that are optimization variables for stride k: multiples of
// k plus the trailing (T-1) mod k residual frames.
std::vector<int> keyframe_indices(int frame_count, int k);

// Fills in every non-keyframe entry by slerp between its neighbouring
// keyframes. `latents` has frame_count entries; entries that are not
// keyframes may be left undefined.
LatentSequence expand_keyframes(const LatentSequence& latents, int k, int frame_count);

OptimizationResult optimize(const OptimConfig& cfg, const ConditionStack& cond, std::span<const FlowField> flows,
                            std::span<const OcclusionMask> occs, const Denoiser& gen,
                            const DiffusionSchedule& sched, const LatentSequence* initial_noise = nullptr);

// Decodes frames from latents at `latents.level` without building graphs.
std::vector<Tensor> render_frames(const LatentSequence& latents, const ConditionStack& cond, const Denoiser& gen,
                                  const DiffusionSchedule& sched);

}  // namespace tempoflow
