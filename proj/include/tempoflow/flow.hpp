#pragma once

// Flow warping, validity masks, occlusion derivation and depth-to-normal
// conversion. Flows are t -> t+1 displacements in pixels; warping pulls
// frame t+1 back onto frame t's pixel grid with nearest-neighbour lookup.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "tempoflow/tensor.hpp"

namespace tempoflow {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PixelMask = std::vector<std::uint8_t>;

struct FlowField {
  FlowField() = default;
  FlowField(Index width, Index height) : dx(Plane::Zero(height, width)), dy(Plane::Zero(height, width)) {}
  static FlowField constant(Index width, Index height, double dx, double dy);

  Index width() const { return dx.cols(); }
  Index height() const { return dx.rows(); }
  bool all_finite() const { return dx.allFinite() && dy.allFinite(); }

  Plane dx;
  Plane dy;
};

struct OcclusionMask {
  OcclusionMask() = default;
  OcclusionMask(Index w, Index h) : width(w), height(h), occluded(static_cast<std::size_t>(w * h), 0) {}

  bool at(Index x, Index y) const { return occluded[static_cast<std::size_t>(y * width + x)] != 0; }
  Index count() const;
  bool operator==(const OcclusionMask&) const = default;

  Index width = 0;
  Index height = 0;
  PixelMask occluded;
};

struct ValidityMask {
  ValidityMask() = default;
  ValidityMask(Index w, Index h, bool value = false)
      : width(w), height(h), valid(static_cast<std::size_t>(w * h), value ? 1 : 0) {}

  bool at(Index x, Index y) const { return valid[static_cast<std::size_t>(y * width + x)] != 0; }
  Index count() const;
  bool operator==(const ValidityMask&) const = default;

  Index width = 0;
  Index height = 0;
  PixelMask valid;
};

struct DepthMap {
  Index width() const { return depth.cols(); }
  Index height() const { return depth.rows(); }
  Plane depth;
};

struct CameraIntrinsics {
  static CameraIntrinsics from_focal(double fx, double fy);
  double fx() const { return matrix(0, 0); }
  double fy() const { return matrix(1, 1); }
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
};

// Encoded normals, [3,H,W] channel-major, every value in [0,1].
struct NormalMap {
  Tensor as_tensor() const { return Tensor::from_data({3, height, width}, values); }
  Index width = 0;
  Index height = 0;
  Eigen::ArrayXd values;
};

struct WarpResult {
  Tensor frame;
  ValidityMask validity;
};

// Nearest-neighbour flow target of pixel (x, y), rounding half away from zero.
struct PixelTarget {
  double x;
  double y;
  bool inside(Index width, Index height) const { return x >= 0 && x < width && y >= 0 && y < height; }
};
PixelTarget flow_target(const FlowField& flow, Index x, Index y);

ValidityMask valid_mask(const FlowField& flow, const OcclusionMask& occ);

// Row-major source pixel index for every valid pixel, -1 elsewhere. Depends
// only on the flow and mask, so it can be computed once and reused.
std::vector<Index> correspondence(const FlowField& flow, const ValidityMask& mask);

// out[c, p] = frame[c, source[p]] or 0 where source[p] < 0. Differentiable
// in `frame`.
Tensor gather_pixels(const Tensor& frame, std::span<const Index> source);

WarpResult warp_nearest(const Tensor& frame, const FlowField& flow, const ValidityMask& mask);

// One more link of a warp chain: pulls `current` through `flow` and keeps a
// pixel valid only if its own correspondence and its source pixel are valid.
WarpResult warp_step(const WarpResult& current, const FlowField& flow, const OcclusionMask& occ);

// Applies flows[0], flows[1], ... in order. A pixel stays valid only if every
// correspondence along its chain was valid.
WarpResult chain_warp(const Tensor& frame, std::span<const FlowField> flows, std::span<const OcclusionMask> occs);

// Marks pixels whose target is out of frame or whose mean squared channel
// difference to the target exceeds `threshold`.
OcclusionMask derive_occlusion(const Tensor& frame_t, const Tensor& frame_t1, const FlowField& flow,
                               double threshold);

// Unit normals (-gx, -gy, 1)/norm before encoding, [3,H,W]. gx, gy are the
// depth gradients along columns and rows scaled by focal length over depth.
Eigen::ArrayXd surface_normals(const DepthMap& depth, const CameraIntrinsics& cam);

// surface_normals encoded as n * 0.5 + 0.5, clipped to [0,1].
NormalMap depth_to_normal(const DepthMap& depth, const CameraIntrinsics& cam);

}  // namespace tempoflow
