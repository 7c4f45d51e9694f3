#pragma once

// Procedural sprite scenes whose frames, depths, flows and occlusions agree
// exactly. Motion is integer-valued, so nearest-neighbour warping reproduces
// every unoccluded pixel bit-for-bit.

#include <cstdint>
#include <vector>

#include "tempoflow/diffusion.hpp"
#include "tempoflow/flow.hpp"

namespace tempoflow {

struct SpriteSpec {
  Index width = 4;
  Index height = 4;
  Index x = 0;  // top-left corner in frame 0
  Index y = 0;
  Index vx = 1;  // pixels per frame
  Index vy = 0;
  double depth = 4.0;
  std::uint64_t texture_seed = 0;
};

struct SceneSpec {
  Index width = 32;
  Index height = 32;
  int frames = 8;
  std::uint64_t background_seed = 0;
  double background_depth = 10.0;
  double fx = 32.0;
  double fy = 32.0;
  Index pan_x = 0;  // global background motion per frame
  Index pan_y = 0;
  std::vector<SpriteSpec> sprites;
};

struct SceneBundle {
  std::vector<Tensor> frames;  // [3,H,W], values in [0,1]
  std::vector<DepthMap> depths;
  std::vector<FlowField> flows;  // frames - 1, t -> t+1
  std::vector<OcclusionMask> occlusions;
  CameraIntrinsics intrinsics;
};

// T=8, 32x32, one 8x8 sprite moving right by 2 px per frame.
SceneSpec default_scene_spec();

SceneBundle generate(const SceneSpec& spec, std::uint64_t seed);

ConditionStack condition_stack(const SceneBundle& bundle, Modality modality);

}  // namespace tempoflow
