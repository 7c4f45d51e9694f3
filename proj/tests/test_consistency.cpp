#include <doctest.h>

#include <numbers>

#include "support.hpp"
#include "tempoflow/consistency.hpp"
#include "tempoflow/errors.hpp"
#include "tempoflow/metrics.hpp"
#include "tempoflow/scene.hpp"

using namespace tempoflow;
using namespace tftest;

namespace {

struct Toy {
  int T;
  Index h = 4, w = 4;
  DiffusionSchedule sched = make_schedule(3, 1e-3);
  ToyGenerator gen{GeneratorSpec{21, 6}, 1};
  std::vector<Tensor> cond;
  std::vector<FlowField> flows;
  std::vector<OcclusionMask> occs;

  Toy(int frames, std::uint64_t seed) : T(frames) {
    std::mt19937_64 rng(seed);
    for (int t = 0; t < T; ++t) cond.push_back(random_tensor(rng, {1, h, w}, 0, 1));
    for (int t = 0; t + 1 < T; ++t) {
      flows.push_back(random_flow(rng, w, h, 1));
      occs.push_back(random_occlusion(rng, w, h, 0.1));
    }
  }

  Tensor render(const Tensor& z, int t, int level) const {
    return frame_decode(ddim_denoise(z, level, cond[t], gen, sched));
  }
};

// Full-graph objective with cached references: frame t is live, everything
// it is compared against is a constant.
Tensor cached_reference_loss(const std::vector<Tensor>& live, const std::vector<Tensor>& previous,
                             std::span<const FlowField> flows, std::span<const OcclusionMask> occs, int window) {
  const int T = static_cast<int>(live.size());
  std::vector<Tensor> fixed;
  for (const auto& f : live) fixed.push_back(f.detach());
  Tensor total = Tensor::scalar(0.0);
  for (int t = 1; t < T; ++t) {
    std::vector<Tensor> frames = fixed;
    frames[t] = live[t];
    total = total + discrepancy(frames, flows, occs, t, window) * (1.0 / (std::min(window, t) + 1));
  }
  const int terms = std::min(window, T - 1);
  if (!previous.empty() && terms > 0) {
    Tensor f0;
    for (int s = 1; s <= terms; ++s) {
      std::vector<FlowField> chain;
      std::vector<OcclusionMask> chain_occ;
      for (int j = s - 1; j >= 0; --j) {
        chain.push_back(flows[j]);
        chain_occ.push_back(occs[j]);
      }
      const WarpResult w = chain_warp(previous[s], chain, chain_occ);
      const Tensor term = masked_nmse(w.frame, live[0], w.validity.valid);
      f0 = f0.defined() ? f0 + term : term;
    }
    total = total + f0 * (1.0 / (terms + 1));
  }
  return total;
}

}  // namespace

TEST_CASE("two-frame objective by hand") {
  const Tensor f0 = Tensor::from_values({1, 1, 3}, {1, 2, 3});
  const Tensor f1 = Tensor::from_values({1, 1, 3}, {2, 3, 9});
  const std::vector<Tensor> frames{f0, f1};
  const std::vector<FlowField> flows{FlowField::constant(3, 1, 1.0, 0.0)};
  const std::vector<OcclusionMask> occs{OcclusionMask(3, 1)};
  // warp(f1) = [3, 9, -] against [1, 2, -]: (4 + 49) / 2.
  CHECK(discrepancy(frames, flows, occs, 1, 2).item() == 26.5);
  CHECK(discrepancy(frames, flows, occs, 0, 2).item() == 0.0);
  CHECK(objective(frames, flows, occs, 2).item() == 13.25);
  CHECK(objective(frames, flows, occs, 1).item() == 13.25);
}

TEST_CASE("the window chains flows backwards from the compared frame") {
  // Row of 4 over three frames: flow 0 shifts by +1, flow 1 is static.
  const Tensor f0 = Tensor::from_values({1, 1, 4}, {1, 2, 3, 4});
  const Tensor f1 = Tensor::from_values({1, 1, 4}, {0, 1, 2, 3});
  const Tensor f2 = Tensor::from_values({1, 1, 4}, {0, 1, 2, 7});
  const std::vector<Tensor> frames{f0, f1, f2};
  const std::vector<FlowField> flows{FlowField::constant(4, 1, 1.0, 0.0), FlowField(4, 1)};
  const std::vector<OcclusionMask> occs{OcclusionMask(4, 1), OcclusionMask(4, 1)};
  // f2 -> grid 1 is f2 itself; against f1 only pixel 3 differs: 16 / 4.
  // Then onto grid 0: [1, 2, 7, -] against [1, 2, 3, -]: 16 / 3.
  CHECK(discrepancy(frames, flows, occs, 2, 1).item() == doctest::Approx(4.0));
  CHECK(discrepancy(frames, flows, occs, 2, 2).item() == doctest::Approx(4.0 + 16.0 / 3.0));
  // D(1): warp(f1) = [1, 2, 3, -] equals f0 on valid pixels.
  CHECK(discrepancy(frames, flows, occs, 1, 2).item() == 0.0);
  CHECK(objective(frames, flows, occs, 2).item() == doctest::Approx((4.0 + 16.0 / 3.0) / 3.0));
  CHECK(objective(frames, flows, occs, 1).item() == doctest::Approx(4.0 / 2.0));
}

TEST_CASE("objective is zero on a ground-truth scene and positive when corrupted") {
  const SceneBundle b = generate(default_scene_spec(), 3);
  CHECK(objective(b.frames, b.flows, b.occlusions, 8).item() == 0.0);
  std::vector<Tensor> frames = b.frames;
  std::mt19937_64 rng(1);
  frames[5] = random_tensor(rng, {3, 32, 32}, 0, 1);
  CHECK(objective(frames, b.flows, b.occlusions, 8).item() > 0.0);
  CHECK_THROWS_AS(objective(frames, std::span(b.flows).first(3), b.occlusions, 8), ContractViolation);
}

TEST_CASE("objective gradient through the sampler matches finite differences") {
  const Toy toy(3, 5);
  for (int level : {1, 3}) {
    std::mt19937_64 rng(100 + level);
    std::vector<Tensor> z;
    for (int t = 0; t < 3; ++t) z.push_back(random_normal(rng, {3, 4, 4}).set_requires_grad());
    std::vector<Tensor> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(toy.render(z[t], t, level));
    backward(objective(frames, toy.flows, toy.occs, 3));
    for (int which = 0; which < 3; ++which) {
      const auto f = [&](const Tensor& v) {
        std::vector<Tensor> fr;
        for (int t = 0; t < 3; ++t) fr.push_back(toy.render(t == which ? v : z[t].detach(), t, level));
        return objective(fr, toy.flows, toy.occs, 3).item();
      };
      CHECK(relative_error(z[which].grad(), numeric_gradient(f, z[which].detach())) < 1e-5);
    }
  }
}

TEST_CASE("framewise accumulation equals the cached-reference full graph") {
  for (int T = 2; T <= 4; ++T) {
    for (int window : {1, T}) {
      const Toy toy(T, 30 + T);
      std::mt19937_64 rng(T * 10 + window);
      std::vector<Tensor> z;
      for (int t = 0; t < T; ++t) z.push_back(random_normal(rng, {3, 4, 4}).set_requires_grad());
      auto render = [&](int t) { return toy.render(z[t], t, 3); };

      std::vector<Tensor> previous;
      for (int epoch = 0; epoch < 2; ++epoch) {
        // Perturb the latents so the two epochs see different frames.
        for (auto& v : z) {
          v.mutable_data() += 0.05;
          v.zero_grad();
        }
        const std::vector<Tensor> cache = previous;
        const FramewiseStats stats = accumulate_gradients_framewise(render, T, toy.flows, toy.occs, window, previous);
        CHECK(stats.peak_live_graphs == 1);
        std::vector<Eigen::ArrayXd> framewise;
        for (auto& v : z) framewise.push_back(v.grad());

        for (auto& v : z) v.zero_grad();
        std::vector<Tensor> live;
        for (int t = 0; t < T; ++t) live.push_back(render(t));
        const Tensor loss = cached_reference_loss(live, cache, toy.flows, toy.occs, window);
        CHECK(std::abs(loss.item() - stats.cached_loss) < 1e-12);
        backward(loss);
        for (int t = 0; t < T; ++t) {
          const Eigen::ArrayXd full = z[t].has_grad() ? z[t].grad() : Eigen::ArrayXd::Zero(z[t].numel());
          CHECK((full - framewise[t]).abs().maxCoeff() < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("slerp endpoints, midpoint and norm") {
  std::mt19937_64 rng(6);
  const Tensor u = random_normal(rng, {3, 2, 2});
  Tensor v = random_normal(rng, {3, 2, 2});
  const double nu = std::sqrt(u.data().square().sum());
  v = v * (nu / std::sqrt(v.data().square().sum()));
  CHECK((slerp(u, v, 0.0).data() - u.data()).abs().maxCoeff() < 1e-12);
  CHECK((slerp(u, v, 1.0).data() - v.data()).abs().maxCoeff() < 1e-12);
  for (double a : {0.1, 0.25, 0.5, 0.9}) {
    CHECK(std::abs(std::sqrt(slerp(u, v, a).data().square().sum()) - nu) < 1e-9);
  }
  // Orthogonal unit vectors meet at 45 degrees.
  const Tensor e0 = Tensor::from_values({2}, {1, 0}), e1 = Tensor::from_values({2}, {0, 1});
  const Tensor mid = slerp(e0, e1, 0.5);
  CHECK(mid.data()[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(mid.data()[1] == doctest::Approx(std::sqrt(0.5)));
  const Tensor third = slerp(e0, e1, 1.0 / 3.0);
  CHECK(third.data()[0] == doctest::Approx(std::cos(std::numbers::pi / 6)));
}

TEST_CASE("slerp degenerate cases") {
  const Tensor u = Tensor::from_values({2}, {1, 0});
  const Tensor near = Tensor::from_values({2}, {2, 1e-9});
  CHECK(slerp(u, near, 0.5).data()[0] == doctest::Approx(1.5));
  CHECK_THROWS_AS(slerp(u, Tensor::from_values({2}, {-1, 0}), 0.5), ContractViolation);
  CHECK_THROWS_AS(slerp(u, Tensor::zeros({2}), 0.5), ContractViolation);
  CHECK_THROWS_AS(slerp(u, u, 1.5), ContractViolation);
}

TEST_CASE("slerp gradient matches finite differences") {
  std::mt19937_64 rng(12);
  for (double alpha : {0.2, 0.5, 0.75}) {
    Tensor u = random_normal(rng, {5}).set_requires_grad();
    Tensor v = random_normal(rng, {5}).set_requires_grad();
    const Tensor w = random_normal(rng, {5});
    backward(sum(slerp(u, v, alpha) * w));
    const auto fu = [&](const Tensor& x) { return sum(slerp(x, v.detach(), alpha) * w).item(); };
    const auto fv = [&](const Tensor& x) { return sum(slerp(u.detach(), x, alpha) * w).item(); };
    CHECK(relative_error(u.grad(), numeric_gradient(fu, u.detach())) < 1e-7);
    CHECK(relative_error(v.grad(), numeric_gradient(fv, v.detach())) < 1e-7);
  }
}

TEST_CASE("keyframe selection and expansion") {
  CHECK(keyframe_indices(5, 1) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(keyframe_indices(5, 4) == std::vector<int>{0, 4});
  CHECK(keyframe_indices(6, 4) == std::vector<int>{0, 4, 5});
  CHECK(keyframe_indices(9, 4) == std::vector<int>{0, 4, 8});
  CHECK(keyframe_indices(8, 3) == std::vector<int>{0, 3, 6, 7});
  std::mt19937_64 rng(2);
  for (int T : {5, 6, 9}) {
    for (int k = 1; k <= T; ++k) {
      LatentSequence seq;
      seq.level = 3;
      seq.latents.resize(T);
      for (int t : keyframe_indices(T, k)) seq.latents[t] = random_normal(rng, {3, 2, 2});
      const LatentSequence out = expand_keyframes(seq, k, T);
      REQUIRE(static_cast<int>(out.latents.size()) == T);
      for (int t : keyframe_indices(T, k)) CHECK(bit_equal(out.latents[t].data(), seq.latents[t].data()));
      for (const auto& z : out.latents) CHECK(z.defined());
    }
  }
  LatentSequence missing;
  missing.latents.resize(5);
  CHECK_THROWS_AS(expand_keyframes(missing, 4, 5), ContractViolation);
}

TEST_CASE("in-between weights grow with distance from the lower keyframe") {
  const Tensor a = Tensor::from_values({2}, {1, 0}), b = Tensor::from_values({2}, {0, 1});
  LatentSequence seq;
  seq.latents = {a, Tensor(), Tensor(), Tensor(), b};
  const LatentSequence out = expand_keyframes(seq, 4, 5);
  for (int t = 1; t < 4; ++t) {
    const double angle = std::atan2(out.latents[t].data()[1], out.latents[t].data()[0]);
    CHECK(angle == doctest::Approx(t / 4.0 * std::numbers::pi / 2));
  }
}

TEST_CASE("init_noise shares or separates draws") {
  OptimConfig cfg;
  cfg.frames = 4;
  cfg.seed = 9;
  const LatentSequence shared = init_noise(cfg, 3, 5);
  CHECK(shared.level == cfg.steps);
  for (const auto& z : shared.latents) CHECK(bit_equal(z.data(), shared.latents[0].data()));
  cfg.shared_init = false;
  const LatentSequence separate = init_noise(cfg, 3, 5);
  CHECK(bit_equal(separate.latents[0].data(), shared.latents[0].data()));
  CHECK(!bit_equal(separate.latents[1].data(), separate.latents[0].data()));
}

TEST_CASE("config validation") {
  OptimConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 11;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg.gamma = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = OptimConfig{};
  cfg.keyframe_stride = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  CHECK(OptimConfig{}.effective_window() == 8);
}

TEST_CASE("a short optimization run on a small scene") {
  SceneSpec spec = default_scene_spec();
  spec.width = 16;
  spec.height = 16;
  spec.frames = 4;
  spec.sprites[0].width = 4;
  spec.sprites[0].height = 4;
  spec.sprites[0].x = 2;
  spec.sprites[0].y = 6;
  const SceneBundle bundle = generate(spec, 1);
  const ConditionStack cond = condition_stack(bundle, Modality::kDepth);
  const ToyGenerator gen(GeneratorSpec{0, 8}, 1);
  OptimConfig cfg;
  cfg.frames = 4;
  cfg.steps = 5;
  cfg.gamma = 3;
  cfg.epochs = 30;
  cfg.lr = 1e-2;
  cfg.early_stop_patience = 0;
  const DiffusionSchedule sched = make_schedule(5, 1e-3);

  const OptimizationResult r = optimize(cfg, cond, bundle.flows, bundle.occlusions, gen, sched);
  CHECK(r.report.epochs_run == 30);
  CHECK(r.report.generator_calls_per_epoch == 4u * 3u);
  CHECK(r.report.peak_live_graphs == 1);
  CHECK(r.report.optimized_latents == 4);
  CHECK(r.latents.level == 3);
  REQUIRE(r.report.objective_history.size() == 30);
  CHECK(r.report.initial_objective == r.report.objective_history.front());
  CHECK(r.report.final_objective < r.report.initial_objective);
  double best = r.report.objective_history[0];
  for (double v : r.report.objective_history) best = std::min(best, v);
  CHECK(best < r.report.initial_objective);
  CHECK(std::abs(warp_error(r.frames, bundle.flows, bundle.occlusions, 4) - r.report.final_objective) <= 1e-12);
  const auto rerendered = render_frames(r.latents, cond, gen, sched);
  for (int t = 0; t < 4; ++t) CHECK(bit_equal(rerendered[t].data(), r.frames[t].data()));

  const OptimizationResult again = optimize(cfg, cond, bundle.flows, bundle.occlusions, gen, sched);
  CHECK(again.report.objective_history == r.report.objective_history);

  cfg.keyframe_stride = 2;
  cfg.epochs = 3;
  const OptimizationResult kf = optimize(cfg, cond, bundle.flows, bundle.occlusions, gen, sched);
  CHECK(kf.report.optimized_latents == 3);
  CHECK(kf.latents.latents.size() == 4);
}

TEST_CASE("early stopping ends a stalled run") {
  SceneSpec spec;
  spec.width = 8;
  spec.height = 8;
  spec.frames = 3;
  const SceneBundle bundle = generate(spec, 0);
  const ConditionStack cond = condition_stack(bundle, Modality::kDepth);
  const ToyGenerator gen(GeneratorSpec{0, 4}, 1);
  OptimConfig cfg;
  cfg.frames = 3;
  cfg.steps = 2;
  cfg.gamma = 2;
  cfg.epochs = 100;
  cfg.early_stop_patience = 5;
  // Static scene with shared noise: the objective starts at zero.
  const OptimizationResult r = optimize(cfg, cond, bundle.flows, bundle.occlusions, gen, make_schedule(2, 1e-3));
  CHECK(r.report.initial_objective == 0.0);
  CHECK(r.report.epochs_run < 100);
}
