#pragma once

#include <span>
#include <vector>

#include "tempoflow/flow.hpp"
#include "tempoflow/tensor.hpp"

namespace tempoflow {

struct EpeResult {
  double mean_epe = 0.0;
  std::vector<double> per_frame;
  double valid_pixel_fraction = 0.0;
};

// Mean Euclidean distance between flow vectors over the valid pixels.
// Throws ContractViolation on an empty mask.
double epe(const FlowField& pred, const FlowField& gt, const ValidityMask& mask);

// EPE for a sequence of flows. With `occs` empty every pixel whose ground
// truth target is inside the frame counts; otherwise occluded pixels are
// dropped as well. The mean is taken over all counted pixels.
EpeResult sequence_epe(std::span<const FlowField> pred, std::span<const FlowField> gt,
                       std::span<const OcclusionMask> occs = {});

// The consistency objective as a plain number.
double warp_error(std::span<const Tensor> frames, std::span<const FlowField> flows,
                  std::span<const OcclusionMask> occs, int window);

// Exhaustive block matching from frame_a to frame_b ([C,H,W] each). Each
// block-aligned tile (truncated at the right/bottom border) gets the integer
// displacement within +-radius that minimizes the mean squared difference
// over the tile pixels whose displaced position lies inside frame_b. Ties go
// to the smaller displacement norm, then to row-major (dy, dx) order.
FlowField block_match_flow(const Tensor& frame_a, const Tensor& frame_b, Index block, Index radius);

// Mean SSD used by block_match_flow for one tile and displacement;
// infinity when no tile pixel lands inside frame_b.
double tile_cost(const Tensor& frame_a, const Tensor& frame_b, Index x0, Index y0, Index tile_w, Index tile_h,
                 Index dx, Index dy);

}  // namespace tempoflow
