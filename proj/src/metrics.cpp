#include "tempoflow/metrics.hpp"

#include <cmath>
#include <limits>

#include "tempoflow/consistency.hpp"
#include "tempoflow/errors.hpp"

namespace tempoflow {

namespace {

bool same_dims(const FlowField& a, const FlowField& b) { return a.width() == b.width() && a.height() == b.height(); }

}  // namespace

double epe(const FlowField& pred, const FlowField& gt, const ValidityMask& mask) {
  require(same_dims(pred, gt), "epe: flow dimensions differ");
  require(mask.width == gt.width() && mask.height == gt.height(), "epe: mask dimensions differ");
  const Plane dist = ((pred.dx - gt.dx).square() + (pred.dy - gt.dy).square()).sqrt();
  double total = 0.0;
  Index count = 0;
  for (Index y = 0; y < gt.height(); ++y) {
    for (Index x = 0; x < gt.width(); ++x) {
      if (!mask.at(x, y)) continue;
      total += dist(y, x);
      ++count;
    }
  }
  if (count == 0) throw ContractViolation("epe: empty mask");
  return total / static_cast<double>(count);
}

EpeResult sequence_epe(std::span<const FlowField> pred, std::span<const FlowField> gt,
                       std::span<const OcclusionMask> occs) {
  require(!gt.empty() && pred.size() == gt.size(), "sequence_epe: need matching non-empty flow sequences");
  require(occs.empty() || occs.size() == gt.size(), "sequence_epe: occlusion count mismatch");
  EpeResult out;
  double total = 0.0;
  Index counted = 0, pixels = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const OcclusionMask occ = occs.empty() ? OcclusionMask(gt[i].width(), gt[i].height()) : occs[i];
    const ValidityMask mask = valid_mask(gt[i], occ);
    const Index n = mask.count();
    pixels += gt[i].width() * gt[i].height();
    if (n == 0) {
      out.per_frame.push_back(0.0);
      continue;
    }
    const double e = epe(pred[i], gt[i], mask);
    out.per_frame.push_back(e);
    total += e * static_cast<double>(n);
    counted += n;
  }
  if (counted == 0) throw ContractViolation("sequence_epe: no valid pixels");
  out.mean_epe = total / static_cast<double>(counted);
  out.valid_pixel_fraction = static_cast<double>(counted) / static_cast<double>(pixels);
  return out;
}

double warp_error(std::span<const Tensor> frames, std::span<const FlowField> flows,
                  std::span<const OcclusionMask> occs, int window) {
  std::vector<Tensor> detached;
  detached.reserve(frames.size());
  for (const auto& f : frames) detached.push_back(f.detach());
  return objective(detached, flows, occs, window).item();
}

double tile_cost(const Tensor& frame_a, const Tensor& frame_b, Index x0, Index y0, Index tile_w, Index tile_h,
                 Index dx, Index dy) {
  const Index c = frame_a.dim(0), h = frame_a.dim(1), w = frame_a.dim(2), plane = w * h;
  const double* a = frame_a.data().data();
  const double* b = frame_b.data().data();
  double ssd = 0.0;
  Index count = 0;
  for (Index y = y0; y < y0 + tile_h; ++y) {
    const Index ty = y + dy;
    if (ty < 0 || ty >= h) continue;
    for (Index x = x0; x < x0 + tile_w; ++x) {
      const Index tx = x + dx;
      if (tx < 0 || tx >= w) continue;
      for (Index ch = 0; ch < c; ++ch) {
        const double d = a[ch * plane + y * w + x] - b[ch * plane + ty * w + tx];
        ssd += d * d;
      }
      ++count;
    }
  }
  if (count == 0) return std::numeric_limits<double>::infinity();
  return ssd / static_cast<double>(count);
}

FlowField block_match_flow(const Tensor& frame_a, const Tensor& frame_b, Index block, Index radius) {
  require(block >= 1 && radius >= 1, "block_match_flow: block and radius must be >= 1");
  require(frame_a.shape().size() == 3 && frame_a.shape() == frame_b.shape(),
          "block_match_flow: frames must share a [C,H,W] shape");
  const Index h = frame_a.dim(1), w = frame_a.dim(2);
  if (w < block || h < block) throw ContractViolation("block_match_flow: frame smaller than one block");

  FlowField flow(w, h);
  for (Index y0 = 0; y0 < h; y0 += block) {
    for (Index x0 = 0; x0 < w; x0 += block) {
      const Index tw = std::min(block, w - x0), th = std::min(block, h - y0);
      double best = std::numeric_limits<double>::infinity();
      Index best_norm = 0, best_dx = 0, best_dy = 0;
      bool found = false;
      for (Index dy = -radius; dy <= radius; ++dy) {
        for (Index dx = -radius; dx <= radius; ++dx) {
          const double cost = tile_cost(frame_a, frame_b, x0, y0, tw, th, dx, dy);
          if (!std::isfinite(cost)) continue;
          const Index norm = dx * dx + dy * dy;
          // Row-major scan order already settles equal-norm ties.
          if (!found || cost < best || (cost == best && norm < best_norm)) {
            best = cost;
            best_norm = norm;
            best_dx = dx;
            best_dy = dy;
            found = true;
          }
        }
      }
      flow.dx.block(y0, x0, th, tw).setConstant(static_cast<double>(best_dx));
      flow.dy.block(y0, x0, th, tw).setConstant(static_cast<double>(best_dy));
    }
  }
  return flow;
}

}  // namespace tempoflow
