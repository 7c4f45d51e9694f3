#include "tempoflow/scene.hpp"

#include <algorithm>
#include <numeric>

#include "tempoflow/errors.hpp"

namespace tempoflow {

namespace {

constexpr int kLevels = 32;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t texel_hash(std::uint64_t seed, Index u, Index v, Index channel) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(u));
  h = splitmix64(h ^ static_cast<std::uint64_t>(v));
  return splitmix64(h ^ static_cast<std::uint64_t>(channel));
}

// Quantized texel value. Channel 2 draws from a per-surface residue class
// so that two different surfaces never share a colour.
double texel(std::uint64_t seed, Index u, Index v, Index channel, int surface, int surface_count) {
  const std::uint64_t h = texel_hash(seed, u, v, channel);
  int level;
  if (channel < 2) {
    level = static_cast<int>(h % kLevels);
  } else {
    const int choices = (kLevels - 1 - surface) / surface_count + 1;
    level = surface + surface_count * static_cast<int>(h % static_cast<std::uint64_t>(choices));
  }
  return static_cast<double>(level) / (kLevels - 1);
}

struct Layer {
  std::vector<int> surface;  // 0 = background, i + 1 = sprite i
};

}  // namespace

SceneSpec default_scene_spec() {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.frames = 8;
  spec.background_seed = 11;
  spec.background_depth = 10.0;
  spec.fx = 32.0;
  spec.fy = 32.0;
  SpriteSpec sprite;
  sprite.width = 8;
  sprite.height = 8;
  sprite.x = 4;
  sprite.y = 12;
  sprite.vx = 2;
  sprite.vy = 0;
  sprite.depth = 4.0;
  sprite.texture_seed = 23;
  spec.sprites.push_back(sprite);
  return spec;
}

SceneBundle generate(const SceneSpec& spec, std::uint64_t seed) {
  require(spec.width >= 1 && spec.height >= 1, "scene: frame dimensions must be positive");
  require(spec.frames >= 2, "scene: need at least two frames");
  require(spec.background_depth > 0.0, "scene: background depth must be positive");
  const int surface_count = static_cast<int>(spec.sprites.size()) + 1;
  require(surface_count <= kLevels, "scene: too many sprites");
  for (const auto& s : spec.sprites) {
    require(s.width >= 1 && s.height >= 1, "scene: zero-area sprite");
    require(s.depth > 0.0 && s.depth < spec.background_depth, "scene: sprite must lie in front of the background");
    require(s.x >= 0 && s.y >= 0 && s.x + s.width <= spec.width && s.y + s.height <= spec.height,
            "scene: sprite does not fit the initial frame");
  }

  const Index w = spec.width, h = spec.height, plane = w * h;
  const int T = spec.frames;

  // Far to near; equal depths keep declaration order, later sprites on top.
  std::vector<std::size_t> order(spec.sprites.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return spec.sprites[a].depth > spec.sprites[b].depth; });

  const std::uint64_t bg_seed = splitmix64(seed) ^ spec.background_seed;
  auto sprite_seed = [&](std::size_t i) { return splitmix64(seed + 0x51ed27ULL * (i + 1)) ^ spec.sprites[i].texture_seed; };

  SceneBundle bundle;
  bundle.intrinsics = CameraIntrinsics::from_focal(spec.fx, spec.fy);
  std::vector<Layer> layers(T);

  for (int t = 0; t < T; ++t) {
    Layer& layer = layers[t];
    layer.surface.assign(static_cast<std::size_t>(plane), 0);
    for (std::size_t i : order) {
      const SpriteSpec& s = spec.sprites[i];
      const Index px = s.x + s.vx * t, py = s.y + s.vy * t;
      for (Index y = std::max<Index>(py, 0); y < std::min(py + s.height, h); ++y) {
        for (Index x = std::max<Index>(px, 0); x < std::min(px + s.width, w); ++x) {
          layer.surface[y * w + x] = static_cast<int>(i) + 1;
        }
      }
    }

    Eigen::ArrayXd rgb(3 * plane);
    DepthMap depth;
    depth.depth = Plane::Constant(h, w, spec.background_depth);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const int surf = layer.surface[y * w + x];
        for (Index c = 0; c < 3; ++c) {
          double v;
          if (surf == 0) {
            v = texel(bg_seed, x - spec.pan_x * t, y - spec.pan_y * t, c, 0, surface_count);
          } else {
            const SpriteSpec& s = spec.sprites[surf - 1];
            v = texel(sprite_seed(surf - 1), x - (s.x + s.vx * t), y - (s.y + s.vy * t), c, surf, surface_count);
          }
          rgb[c * plane + y * w + x] = v;
        }
        if (surf != 0) depth.depth(y, x) = spec.sprites[surf - 1].depth;
      }
    }
    bundle.frames.push_back(Tensor::from_data({3, h, w}, std::move(rgb)));
    bundle.depths.push_back(std::move(depth));
  }

  for (int t = 0; t + 1 < T; ++t) {
    FlowField flow(w, h);
    OcclusionMask occ(w, h);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const int surf = layers[t].surface[y * w + x];
        const Index vx = surf == 0 ? spec.pan_x : spec.sprites[surf - 1].vx;
        const Index vy = surf == 0 ? spec.pan_y : spec.sprites[surf - 1].vy;
        flow.dx(y, x) = static_cast<double>(vx);
        flow.dy(y, x) = static_cast<double>(vy);
        const Index tx = x + vx, ty = y + vy;
        const bool inside = tx >= 0 && tx < w && ty >= 0 && ty < h;
        occ.occluded[y * w + x] = !inside || layers[t + 1].surface[ty * w + tx] != surf;
      }
    }
    bundle.flows.push_back(std::move(flow));
    bundle.occlusions.push_back(std::move(occ));
  }
  return bundle;
}

ConditionStack condition_stack(const SceneBundle& bundle, Modality modality) {
  ConditionStack stack;
  stack.modality = modality;
  if (modality == Modality::kDepth) {
    double max_depth = 0.0;
    for (const auto& d : bundle.depths) max_depth = std::max(max_depth, d.depth.maxCoeff());
    for (const auto& d : bundle.depths) {
      Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(d.depth.data(), d.depth.size()) / max_depth;
      stack.frames.push_back(Tensor::from_data({1, d.height(), d.width()}, std::move(v)));
    }
  } else {
    for (const auto& d : bundle.depths) stack.frames.push_back(depth_to_normal(d, bundle.intrinsics).as_tensor());
  }
  return stack;
}

}  // namespace tempoflow
