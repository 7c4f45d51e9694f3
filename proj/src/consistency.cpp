#include "tempoflow/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "tempoflow/adam.hpp"
#include "tempoflow/errors.hpp"
#include "tempoflow/parallel.hpp"

namespace tempoflow {

namespace {

void require_sequence(std::span<const Tensor> frames, std::span<const FlowField> flows,
                      std::span<const OcclusionMask> occs) {
  require(!frames.empty(), "empty frame sequence");
  require(flows.size() + 1 == frames.size(), "need exactly T - 1 flow fields");
  require(occs.size() == flows.size(), "need exactly T - 1 occlusion masks");
}

// Sum over s = 1..terms of nmse(reference(s), moving pulled back s steps).
// Step s applies flows[chain_start - s + 1], so the chain walks backwards in
// time starting at flows[chain_start].
Tensor windowed_terms(const Tensor& moving, int chain_start, int terms, std::span<const FlowField> flows,
                      std::span<const OcclusionMask> occs, const std::function<const Tensor&(int)>& reference) {
  const Index w = moving.dim(2), h = moving.dim(1);
  WarpResult warped{moving, ValidityMask(w, h, true)};
  Tensor total;
  for (int s = 1; s <= terms; ++s) {
    const int j = chain_start - s + 1;
    warped = warp_step(warped, flows[j], occs[j]);
    Tensor term = masked_nmse(reference(s), warped.frame, warped.validity.valid);
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace

void OptimConfig::validate() const {
  require(frames >= 1, "config: frame count must be >= 1");
  require(window >= 0, "config: window must be >= 0");
  require(steps >= 1, "config: steps must be >= 1");
  require(gamma >= 1 && gamma <= steps, "config: gamma must lie in [1, steps]");
  require(keyframe_stride >= 1, "config: keyframe stride must be >= 1");
  require(epochs >= 0, "config: epochs must be >= 0");
  require(lr > 0.0, "config: learning rate must be positive");
  require(early_stop_patience >= 0, "config: early-stop patience must be >= 0");
}

LatentSequence init_noise(const OptimConfig& cfg, Index height, Index width) {
  require(cfg.frames >= 1, "init_noise: frame count must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = 3 * height * width;
  auto draw = [&] {
    Eigen::ArrayXd z(n);
    for (Index i = 0; i < n; ++i) z[i] = normal(rng);
    return Tensor::from_data({3, height, width}, std::move(z));
  };
  LatentSequence seq;
  seq.level = cfg.steps;
  if (cfg.shared_init) {
    const Tensor z = draw();
    for (int t = 0; t < cfg.frames; ++t) seq.latents.push_back(z.detach());
  } else {
    for (int t = 0; t < cfg.frames; ++t) seq.latents.push_back(draw());
  }
  return seq;
}

Tensor discrepancy(std::span<const Tensor> frames, std::span<const FlowField> flows,
                   std::span<const OcclusionMask> occs, int t, int window) {
  require_sequence(frames, flows, occs);
  require(window >= 1, "discrepancy: window must be >= 1");
  if (t < 0 || t >= static_cast<int>(frames.size())) throw ContractViolation("discrepancy: frame index out of range");
  const int terms = std::min(window, t);
  if (terms == 0) return Tensor::scalar(0.0);
  return windowed_terms(frames[t], t - 1, terms, flows, occs, [&](int s) -> const Tensor& { return frames[t - s]; });
}

Tensor objective(std::span<const Tensor> frames, std::span<const FlowField> flows,
                 std::span<const OcclusionMask> occs, int window) {
  require_sequence(frames, flows, occs);
  Tensor total = Tensor::scalar(0.0);
  for (int t = 1; t < static_cast<int>(frames.size()); ++t) {
    const double norm = 1.0 / (std::min(window, t) + 1);
    total = total + discrepancy(frames, flows, occs, t, window) * norm;
  }
  return total;
}

FramewiseStats accumulate_gradients_framewise(const std::function<Tensor(int)>& render_frame, int frame_count,
                                              std::span<const FlowField> flows,
                                              std::span<const OcclusionMask> occs, int window,
                                              std::vector<Tensor>& previous_epoch) {
  require(frame_count >= 1, "framewise: frame count must be >= 1");
  require(static_cast<int>(flows.size()) == frame_count - 1 && occs.size() == flows.size(),
          "framewise: need exactly T - 1 flows and occlusion masks");
  require(window >= 1, "framewise: window must be >= 1");
  require(previous_epoch.empty() || static_cast<int>(previous_epoch.size()) == frame_count,
          "framewise: previous-epoch cache has the wrong length");

  FramewiseStats stats;
  std::vector<std::weak_ptr<const void>> built;
  auto live_graphs = [&] {
    return static_cast<int>(std::count_if(built.begin(), built.end(), [](const auto& g) { return !g.expired(); }));
  };

  for (int t = 0; t < frame_count; ++t) {
    {
      const Tensor frame = render_frame(t);
      built.push_back(graph_handle(frame));
      stats.peak_live_graphs = std::max(stats.peak_live_graphs, live_graphs());

      Tensor loss;
      if (t == 0) {
        // Frame 0 has no earlier frame in this epoch; compare it against the
        // previous epoch's frames pulled back onto its grid.
        const int terms = std::min(window, frame_count - 1);
        if (!previous_epoch.empty() && terms > 0) {
          for (int s = 1; s <= terms; ++s) {
            std::vector<FlowField> chain;
            std::vector<OcclusionMask> chain_occ;
            for (int j = s - 1; j >= 0; --j) {
              chain.push_back(flows[j]);
              chain_occ.push_back(occs[j]);
            }
            const WarpResult warped = chain_warp(previous_epoch[s], chain, chain_occ);
            Tensor term = masked_nmse(warped.frame, frame, warped.validity.valid);
            loss = loss.defined() ? loss + term : term;
          }
          loss = loss * (1.0 / (terms + 1));
        }
      } else {
        const int terms = std::min(window, t);
        loss = windowed_terms(frame, t - 1, terms, flows, occs,
                              [&](int s) -> const Tensor& { return stats.frames[t - s]; });
        loss = loss * (1.0 / (terms + 1));
      }

      if (loss.defined()) {
        stats.cached_loss += loss.item();
        if (loss.requires_grad()) backward(loss);
      }
      stats.frames.push_back(frame.detach());
    }
    // The frame's graph is released here.
  }
  previous_epoch = stats.frames;
  return stats;
}

Tensor slerp(const Tensor& u, const Tensor& v, double alpha) {
  if (u.shape() != v.shape()) throw ContractViolation("slerp: shape mismatch");
  require(alpha >= 0.0 && alpha <= 1.0, "slerp: alpha must lie in [0, 1]");
  const Eigen::ArrayXd& a = u.data();
  const Eigen::ArrayXd& b = v.data();
  const double nu = std::sqrt(a.square().sum());
  const double nv = std::sqrt(b.square().sum());
  if (nu == 0.0 || nv == 0.0) throw ContractViolation("slerp: zero-norm input");
  const double c = std::clamp((a * b).sum() / (nu * nv), -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta > std::numbers::pi - 1e-6) throw ContractViolation("slerp: antiparallel inputs");

  if (theta < 1e-6) {
    return Tensor::make_result(u.shape(), (1.0 - alpha) * a + alpha * b, {u, v},
                               [alpha](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
                                 if (pg[0]) *pg[0] += (1.0 - alpha) * g;
                                 if (pg[1]) *pg[1] += alpha * g;
                               });
  }

  const double st = std::sin(theta);
  const double wu = std::sin((1.0 - alpha) * theta) / st;
  const double wv = std::sin(alpha * theta) / st;
  // Derivatives of the weights with respect to theta.
  const double dwu = ((1.0 - alpha) * std::cos((1.0 - alpha) * theta) * st - std::sin((1.0 - alpha) * theta) * std::cos(theta)) / (st * st);
  const double dwv = (alpha * std::cos(alpha * theta) * st - std::sin(alpha * theta) * std::cos(theta)) / (st * st);
  return Tensor::make_result(
      u.shape(), wu * a + wv * b, {u, v},
      [a, b, nu, nv, c, st, wu, wv, dwu, dwv](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
        // d theta / d c = -1 / sin(theta)
        const double gt = (g * (dwu * a + dwv * b)).sum() * (-1.0 / st);
        if (pg[0]) *pg[0] += wu * g + gt * (b / (nu * nv) - c * a / (nu * nu));
        if (pg[1]) *pg[1] += wv * g + gt * (a / (nu * nv) - c * b / (nv * nv));
      });
}

std::vector<int> keyframe_indices(int frame_count, int k) {
  require(frame_count >= 1 && k >= 1, "keyframe_indices: need T >= 1 and k >= 1");
  const int residual_start = frame_count - (frame_count - 1) % k;
  std::vector<int> out;
  for (int t = 0; t < frame_count; ++t) {
    if (t % k == 0 || t >= residual_start) out.push_back(t);
  }
  return out;
}

LatentSequence expand_keyframes(const LatentSequence& latents, int k, int frame_count) {
  require(k >= 1, "expand_keyframes: k must be >= 1");
  require(static_cast<int>(latents.latents.size()) == frame_count, "expand_keyframes: need one slot per frame");
  const int residual_start = frame_count - (frame_count - 1) % k;
  for (int t : keyframe_indices(frame_count, k)) {
    if (!latents.latents[t].defined()) {
      throw ContractViolation("expand_keyframes: missing keyframe latent " + std::to_string(t));
    }
  }
  LatentSequence out;
  out.level = latents.level;
  out.latents.resize(frame_count);
  for (int t = 0; t < frame_count; ++t) {
    if (t % k == 0 || t >= residual_start) {
      out.latents[t] = latents.latents[t];
    } else {
      const int lo = k * (t / k);
      const double alpha = static_cast<double>(t - lo) / k;
      out.latents[t] = slerp(latents.latents[lo], latents.latents[lo + k], alpha);
    }
  }
  return out;
}

std::vector<Tensor> render_frames(const LatentSequence& latents, const ConditionStack& cond, const Denoiser& gen,
                                  const DiffusionSchedule& sched) {
  require(latents.latents.size() == cond.frames.size(), "render: latent and condition counts differ");
  std::vector<Tensor> frames(latents.latents.size());
  parallel_for(frames.size(), [&](std::size_t t) {
    frames[t] = frame_decode(ddim_denoise(latents.latents[t].detach(), latents.level, cond.frames[t], gen, sched)).detach();
  });
  return frames;
}

OptimizationResult optimize(const OptimConfig& cfg, const ConditionStack& cond, std::span<const FlowField> flows,
                            std::span<const OcclusionMask> occs, const Denoiser& gen,
                            const DiffusionSchedule& sched, const LatentSequence* initial_noise) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  const int T = cfg.frames;
  require(static_cast<int>(cond.frames.size()) == T, "optimize: one condition per frame required");
  require(static_cast<int>(flows.size()) == T - 1 && occs.size() == flows.size(),
          "optimize: need exactly T - 1 flows and occlusion masks");
  require(cfg.steps == sched.steps, "optimize: config steps differ from the schedule");
  const Index h = cond.frames[0].dim(1), w = cond.frames[0].dim(2);
  for (const auto& f : flows) require(f.width() == w && f.height() == h, "optimize: flow dimensions differ");
  for (const auto& o : occs) require(o.width == w && o.height == h, "optimize: occlusion dimensions differ");

  const int window = cfg.effective_window();
  const int gamma = cfg.gamma;
  const int k = cfg.keyframe_stride;
  const std::uint64_t calls_before = gen.calls();

  const LatentSequence noise = initial_noise ? *initial_noise : init_noise(cfg, h, w);
  require(static_cast<int>(noise.latents.size()) == T, "optimize: need one initial latent per frame");
  require(noise.level == sched.steps, "optimize: initial latents must be at level L");

  // Optimization variables: keyframes plus residual frames, at level gamma.
  const std::vector<int> var_index = keyframe_indices(T, k);
  std::vector<Tensor> vars;
  std::vector<AdamState> adam;
  for (int t : var_index) {
    Tensor z = noise.latents[t].detach();
    if (gamma < sched.steps) {
      const Tensor clean = ddim_denoise(z, sched.steps, cond.frames[t], gen, sched).detach();
      z = renoise_to_level(clean, z, gamma, sched).detach();
    }
    z.set_requires_grad(true);
    vars.push_back(z);
    adam.emplace_back(z.numel(), AdamOptions{cfg.lr});
  }

  auto expanded = [&] {
    LatentSequence seq;
    seq.level = gamma;
    seq.latents.resize(T);
    for (std::size_t i = 0; i < var_index.size(); ++i) seq.latents[var_index[i]] = vars[i];
    return k == 1 ? seq : expand_keyframes(seq, k, T);
  };

  ConsistencyReport report;
  report.optimized_latents = vars.size();
  std::vector<Tensor> previous_epoch;
  std::vector<double> best_so_far;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& v : vars) v.zero_grad();
    const std::uint64_t epoch_start_calls = gen.calls();
    FramewiseStats stats = accumulate_gradients_framewise(
        [&](int t) {
          // Only the latents this frame depends on enter its graph.
          Tensor z;
          const auto it = std::find(var_index.begin(), var_index.end(), t);
          if (it != var_index.end()) {
            z = vars[it - var_index.begin()];
          } else {
            const int lo = k * (t / k);
            const auto ilo = std::find(var_index.begin(), var_index.end(), lo) - var_index.begin();
            const auto ihi = std::find(var_index.begin(), var_index.end(), lo + k) - var_index.begin();
            z = slerp(vars[ilo], vars[ihi], static_cast<double>(t - lo) / k);
          }
          return frame_decode(ddim_denoise(z, gamma, cond.frames[t], gen, sched));
        },
        T, flows, occs, window, previous_epoch);
    report.generator_calls_per_epoch = gen.calls() - epoch_start_calls;
    report.peak_live_graphs = std::max(report.peak_live_graphs, stats.peak_live_graphs);

    const double value = objective(stats.frames, flows, occs, window).item();
    if (!std::isfinite(value)) throw NumericalError("optimize: objective became non-finite");
    report.objective_history.push_back(value);
    report.epochs_run = epoch + 1;
    best_so_far.push_back(best_so_far.empty() ? value : std::min(best_so_far.back(), value));

    const int patience = cfg.early_stop_patience;
    if (patience > 0 && epoch >= patience) {
      const double before = best_so_far[epoch - patience];
      if (before - best_so_far.back() <= cfg.early_stop_min_improvement * before) break;
    }
    for (std::size_t i = 0; i < vars.size(); ++i) adam_step(vars[i], adam[i]);
  }

  OptimizationResult result;
  LatentSequence final_latents = expanded();
  for (auto& z : final_latents.latents) z = z.detach();
  result.frames = render_frames(final_latents, cond, gen, sched);
  result.latents = std::move(final_latents);

  report.initial_objective = report.objective_history.empty()
                                 ? objective(result.frames, flows, occs, window).item()
                                 : report.objective_history.front();
  report.final_objective = objective(result.frames, flows, occs, window).item();
  for (int t = 0; t < T; ++t) {
    report.final_discrepancy.push_back(discrepancy(result.frames, flows, occs, t, window).item());
  }
  report.generator_calls = gen.calls() - calls_before;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.report = std::move(report);
  return result;
}

}  // namespace tempoflow
