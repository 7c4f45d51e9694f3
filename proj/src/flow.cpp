#include "tempoflow/flow.hpp"

#include <algorithm>
#include <cmath>

#include "tempoflow/errors.hpp"

namespace tempoflow {

namespace {

void require_dims(const FlowField& flow, Index w, Index h, const char* what) {
  if (flow.width() != w || flow.height() != h) {
    throw ContractViolation(std::string(what) + ": dimension mismatch with flow field");
  }
}

void require_frame(const Tensor& frame, const FlowField& flow, const char* what) {
  if (frame.shape().size() != 3) throw ContractViolation(std::string(what) + ": frame must be [C,H,W]");
  require_dims(flow, frame.dim(2), frame.dim(1), what);
}

// Gradient along one axis: central differences inside, one-sided at the
// borders, zero when the axis has a single sample.
Plane axis_gradient(const Plane& f, bool along_x) {
  const Index h = f.rows(), w = f.cols();
  Plane g = Plane::Zero(h, w);
  const Index n = along_x ? w : h;
  if (n < 2) return g;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const Index i = along_x ? c : r;
      auto at = [&](Index k) { return along_x ? f(r, k) : f(k, c); };
      if (i == 0) {
        g(r, c) = at(1) - at(0);
      } else if (i == n - 1) {
        g(r, c) = at(n - 1) - at(n - 2);
      } else {
        g(r, c) = (at(i + 1) - at(i - 1)) / 2.0;
      }
    }
  }
  return g;
}

}  // namespace

FlowField FlowField::constant(Index width, Index height, double dx, double dy) {
  FlowField f(width, height);
  f.dx.setConstant(dx);
  f.dy.setConstant(dy);
  return f;
}

Index OcclusionMask::count() const { return std::count(occluded.begin(), occluded.end(), std::uint8_t{1}); }

Index ValidityMask::count() const { return std::count(valid.begin(), valid.end(), std::uint8_t{1}); }

CameraIntrinsics CameraIntrinsics::from_focal(double fx, double fy) {
  CameraIntrinsics cam;
  cam.matrix(0, 0) = fx;
  cam.matrix(1, 1) = fy;
  return cam;
}

PixelTarget flow_target(const FlowField& flow, Index x, Index y) {
  return {std::round(static_cast<double>(x) + flow.dx(y, x)), std::round(static_cast<double>(y) + flow.dy(y, x))};
}

ValidityMask valid_mask(const FlowField& flow, const OcclusionMask& occ) {
  require_dims(flow, occ.width, occ.height, "valid_mask");
  const Index w = flow.width(), h = flow.height();
  ValidityMask mask(w, h);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      mask.valid[y * w + x] = !occ.at(x, y) && flow_target(flow, x, y).inside(w, h);
    }
  }
  return mask;
}

std::vector<Index> correspondence(const FlowField& flow, const ValidityMask& mask) {
  require_dims(flow, mask.width, mask.height, "correspondence");
  const Index w = flow.width(), h = flow.height();
  std::vector<Index> source(static_cast<std::size_t>(w * h), -1);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      const PixelTarget t = flow_target(flow, x, y);
      require(t.inside(w, h), "correspondence: mask marks an out-of-frame target as valid");
      source[y * w + x] = static_cast<Index>(t.y) * w + static_cast<Index>(t.x);
    }
  }
  return source;
}

Tensor gather_pixels(const Tensor& frame, std::span<const Index> source) {
  require(frame.shape().size() == 3, "gather_pixels: frame must be [C,H,W]");
  const Index c = frame.dim(0), plane = frame.dim(1) * frame.dim(2);
  require(static_cast<Index>(source.size()) == plane, "gather_pixels: index map size mismatch");
  std::vector<Index> src(source.begin(), source.end());
  const Eigen::ArrayXd& in = frame.data();
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(c * plane);
  for (Index ch = 0; ch < c; ++ch) {
    for (Index p = 0; p < plane; ++p) {
      if (src[p] >= 0) out[ch * plane + p] = in[ch * plane + src[p]];
    }
  }
  return Tensor::make_result(frame.shape(), std::move(out), {frame},
                             [src = std::move(src), c, plane](const Eigen::ArrayXd& g,
                                                              std::span<Eigen::ArrayXd* const> pg) {
                               if (!pg[0]) return;
                               Eigen::ArrayXd& gi = *pg[0];
                               for (Index ch = 0; ch < c; ++ch) {
                                 for (Index p = 0; p < plane; ++p) {
                                   if (src[p] >= 0) gi[ch * plane + src[p]] += g[ch * plane + p];
                                 }
                               }
                             });
}

WarpResult warp_nearest(const Tensor& frame, const FlowField& flow, const ValidityMask& mask) {
  require_frame(frame, flow, "warp_nearest");
  const auto source = correspondence(flow, mask);
  return {gather_pixels(frame, source), mask};
}

WarpResult warp_step(const WarpResult& current, const FlowField& flow, const OcclusionMask& occ) {
  require_frame(current.frame, flow, "warp_step");
  const Index w = flow.width(), h = flow.height();
  require(current.validity.width == w && current.validity.height == h, "warp_step: validity size mismatch");
  const ValidityMask mask = valid_mask(flow, occ);
  auto source = correspondence(flow, mask);
  ValidityMask next(w, h);
  for (Index p = 0; p < w * h; ++p) {
    if (source[p] >= 0 && current.validity.valid[source[p]]) {
      next.valid[p] = 1;
    } else {
      source[p] = -1;
    }
  }
  return {gather_pixels(current.frame, source), std::move(next)};
}

WarpResult chain_warp(const Tensor& frame, std::span<const FlowField> flows, std::span<const OcclusionMask> occs) {
  if (flows.empty()) throw ContractViolation("chain_warp: empty chain");
  require(flows.size() == occs.size(), "chain_warp: flows and occlusions differ in length");
  require_frame(frame, flows[0], "chain_warp");
  WarpResult current{frame, ValidityMask(flows[0].width(), flows[0].height(), true)};
  for (std::size_t step = 0; step < flows.size(); ++step) current = warp_step(current, flows[step], occs[step]);
  return current;
}

OcclusionMask derive_occlusion(const Tensor& frame_t, const Tensor& frame_t1, const FlowField& flow,
                               double threshold) {
  require_frame(frame_t, flow, "derive_occlusion");
  require(frame_t.shape() == frame_t1.shape(), "derive_occlusion: frame shapes differ");
  require(threshold > 0.0, "derive_occlusion: threshold must be positive");
  const Index c = frame_t.dim(0), h = frame_t.dim(1), w = frame_t.dim(2), plane = w * h;
  const Eigen::ArrayXd& a = frame_t.data();
  const Eigen::ArrayXd& b = frame_t1.data();
  OcclusionMask occ(w, h);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const PixelTarget t = flow_target(flow, x, y);
      bool occluded = !t.inside(w, h);
      if (!occluded) {
        const Index q = static_cast<Index>(t.y) * w + static_cast<Index>(t.x);
        double mse = 0.0;
        for (Index ch = 0; ch < c; ++ch) {
          const double d = a[ch * plane + y * w + x] - b[ch * plane + q];
          mse += d * d;
        }
        occluded = mse / static_cast<double>(c) > threshold;
      }
      occ.occluded[y * w + x] = occluded;
    }
  }
  return occ;
}

Eigen::ArrayXd surface_normals(const DepthMap& depth, const CameraIntrinsics& cam) {
  const Plane& d = depth.depth;
  require(d.size() > 0, "depth_to_normal: empty depth map");
  if (!(d > 0.0).all()) throw ContractViolation("depth_to_normal: depth must be strictly positive");
  const Index h = d.rows(), w = d.cols(), plane = w * h;

  const Plane gx = axis_gradient(d, true) * cam.fx() / d;
  const Plane gy = axis_gradient(d, false) * cam.fy() / d;
  const Plane norm = (gx.square() + gy.square() + 1.0).sqrt();

  Eigen::ArrayXd n(3 * plane);
  Eigen::Map<Plane>(n.data(), h, w) = -gx / norm;
  Eigen::Map<Plane>(n.data() + plane, h, w) = -gy / norm;
  Eigen::Map<Plane>(n.data() + 2 * plane, h, w) = 1.0 / norm;
  return n;
}

NormalMap depth_to_normal(const DepthMap& depth, const CameraIntrinsics& cam) {
  NormalMap out;
  out.width = depth.width();
  out.height = depth.height();
  out.values = (surface_normals(depth, cam) * 0.5 + 0.5).max(0.0).min(1.0);
  return out;
}

}  // namespace tempoflow
