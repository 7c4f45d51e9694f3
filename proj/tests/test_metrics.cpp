#include <doctest.h>

#include "support.hpp"
#include "tempoflow/errors.hpp"
#include "tempoflow/metrics.hpp"
#include "tempoflow/scene.hpp"

using namespace tempoflow;
using namespace tftest;

namespace {

// Frame b is frame a moved by (sx, sy); uncovered pixels get fresh noise.
Tensor shifted(const Tensor& a, Index sx, Index sy, std::mt19937_64& rng) {
  const Index c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::ArrayXd d(a.numel());
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index xs = x - sx, ys = y - sy;
        d[(ch * h + y) * w + x] = xs >= 0 && xs < w && ys >= 0 && ys < h ? a.data()[(ch * h + ys) * w + xs] : u(rng);
      }
  return Tensor::from_data(a.shape(), std::move(d));
}

}  // namespace

TEST_CASE("epe hand cases") {
  const FlowField gt(4, 2);
  const ValidityMask all(4, 2, true);
  CHECK(epe(gt, gt, all) == 0.0);
  CHECK(epe(FlowField::constant(4, 2, 3.0, 4.0), gt, all) == 5.0);
  FlowField half(4, 2);
  half.dx.row(0).setConstant(1.0);
  CHECK(epe(half, gt, all) == 0.5);
  CHECK(epe(gt, half, all) == 0.5);
  ValidityMask top(4, 2);
  for (Index x = 0; x < 4; ++x) top.valid[x] = 1;
  CHECK(epe(half, gt, top) == 1.0);
  CHECK_THROWS_AS(epe(gt, gt, ValidityMask(4, 2)), ContractViolation);
  CHECK_THROWS_AS(epe(FlowField(3, 2), gt, all), ContractViolation);
}

TEST_CASE("sequence_epe masks out-of-frame targets and optionally occlusions") {
  const std::vector<FlowField> gt{FlowField::constant(4, 1, 1.0, 0.0)};
  const std::vector<FlowField> pred{FlowField(4, 1)};
  const EpeResult r = sequence_epe(pred, gt);
  CHECK(r.mean_epe == 1.0);
  CHECK(r.valid_pixel_fraction == 0.75);
  OcclusionMask occ(4, 1);
  occ.occluded[0] = 1;
  const std::vector<OcclusionMask> occs{occ};
  CHECK(sequence_epe(pred, gt, occs).valid_pixel_fraction == 0.5);
}

TEST_CASE("block matching recovers a clean shift") {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor(rng, {3, 16, 16}, 0, 1);
  CHECK((block_match_flow(a, a, 4, 3).dx == 0.0).all());
  const Tensor b = shifted(a, 2, 0, rng);
  const FlowField f = block_match_flow(a, b, 4, 3);
  const FlowField truth = FlowField::constant(16, 16, 2.0, 0.0);
  const std::vector<FlowField> est{f}, gt{truth};
  CHECK(sequence_epe(est, gt).mean_epe == 0.0);
  const Tensor c = shifted(a, -1, 2, rng);
  const FlowField g = block_match_flow(a, c, 4, 3);
  CHECK((g.dx.topRows(12) == -1.0).all());
  CHECK((g.dy.topRows(12) == 2.0).all());
}

TEST_CASE("block matching is an exact argmin") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor(rng, {3, 10, 11}, 0, 1);
    const Tensor b = random_tensor(rng, {3, 10, 11}, 0, 1);
    const Index block = 3, radius = 2;
    const FlowField f = block_match_flow(a, b, block, radius);
    for (Index y0 = 0; y0 < 10; y0 += block) {
      for (Index x0 = 0; x0 < 11; x0 += block) {
        const Index tw = std::min(block, 11 - x0), th = std::min(block, 10 - y0);
        const auto dx = static_cast<Index>(f.dx(y0, x0)), dy = static_cast<Index>(f.dy(y0, x0));
        const double chosen = tile_cost(a, b, x0, y0, tw, th, dx, dy);
        for (Index ey = -radius; ey <= radius; ++ey)
          for (Index ex = -radius; ex <= radius; ++ex) CHECK(chosen <= tile_cost(a, b, x0, y0, tw, th, ex, ey));
        CHECK((f.dx.block(y0, x0, th, tw) == f.dx(y0, x0)).all());
      }
    }
  }
}

TEST_CASE("block matching tie-break prefers the shortest displacement") {
  const Tensor flat = Tensor::constant({1, 6, 6}, 0.5);
  const FlowField f = block_match_flow(flat, flat, 2, 2);
  CHECK((f.dx == 0.0).all());
  CHECK((f.dy == 0.0).all());
  // A horizontal stripe pattern: all horizontal shifts cost the same.
  Eigen::ArrayXd d(36);
  for (Index i = 0; i < 36; ++i) d[i] = (i / 6) % 2;
  const Tensor stripes = Tensor::from_data({1, 6, 6}, d);
  const FlowField g = block_match_flow(stripes, stripes, 2, 2);
  CHECK((g.dx == 0.0).all());
  CHECK((g.dy == 0.0).all());
}

TEST_CASE("block matching preconditions") {
  const Tensor a = Tensor::zeros({3, 4, 4});
  CHECK_THROWS_AS(block_match_flow(a, a, 5, 1), ContractViolation);
  CHECK_THROWS_AS(block_match_flow(a, a, 2, 0), ContractViolation);
  CHECK_THROWS_AS(block_match_flow(a, Tensor::zeros({3, 4, 5}), 2, 1), ContractViolation);
}

TEST_CASE("warp_error is zero on ground truth and grows with corruption") {
  const SceneBundle b = generate(default_scene_spec(), 0);
  CHECK(warp_error(b.frames, b.flows, b.occlusions, 8) == 0.0);
  std::mt19937_64 rng(4);
  const Tensor noise = random_tensor(rng, {3, 32, 32});
  double last = 0.0;
  for (double amp : {0.0, 0.01, 0.05, 0.1, 0.5}) {
    std::vector<Tensor> frames = b.frames;
    frames[3] = frames[3] + noise * amp;
    const double e = warp_error(frames, b.flows, b.occlusions, 8);
    CHECK(e >= last);
    last = e;
  }
  CHECK(last > 0.0);
}
