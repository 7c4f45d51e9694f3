#include "tempoflow/run_config.hpp"

#include <set>

#include "tempoflow/errors.hpp"
#include "tempoflow/flow.hpp"
#include "tempoflow/io.hpp"

namespace tempoflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& doc, const std::set<std::string>& allowed, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_key(const json& doc, const char* key, T& out, const std::string& where) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

fs::path resolve_dir(const json& doc, const char* key, const fs::path& base, bool must_exist) {
  std::string raw;
  read_key(doc, key, raw, "run config");
  if (raw.empty()) {
    if (must_exist) throw ConfigError(std::string("run config: missing '") + key + "'");
    return {};
  }
  fs::path p(raw);
  if (p.is_relative()) p = base / p;
  if (must_exist && !fs::is_directory(p)) {
    throw ConfigError(std::string("run config: '") + key + "' is not a directory: " + p.string());
  }
  return p;
}

}  // namespace

const char* modality_name(Modality m) { return m == Modality::kDepth ? "depth" : "normal"; }

Modality parse_modality(const std::string& name) {
  if (name == "depth") return Modality::kDepth;
  if (name == "normal") return Modality::kNormal;
  throw ConfigError("unknown modality '" + name + "' (expected depth or normal)");
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  reject_unknown_keys(doc,
                      {"frames", "window", "steps", "gamma", "keyframe_stride", "epochs", "lr", "seed", "shared_init",
                       "early_stop_patience", "early_stop_min_improvement", "generator", "alpha_min", "modality",
                       "condition_dir", "flow_dir", "occlusion_dir", "output_dir"},
                      "run config");
  RunConfig cfg;
  const std::string where = "run config";
  OptimConfig& o = cfg.optim;
  o.frames = 0;
  read_key(doc, "frames", o.frames, where);
  read_key(doc, "window", o.window, where);
  read_key(doc, "steps", o.steps, where);
  read_key(doc, "gamma", o.gamma, where);
  read_key(doc, "keyframe_stride", o.keyframe_stride, where);
  read_key(doc, "epochs", o.epochs, where);
  read_key(doc, "lr", o.lr, where);
  read_key(doc, "seed", o.seed, where);
  read_key(doc, "shared_init", o.shared_init, where);
  read_key(doc, "early_stop_patience", o.early_stop_patience, where);
  read_key(doc, "early_stop_min_improvement", o.early_stop_min_improvement, where);
  read_key(doc, "alpha_min", cfg.alpha_min, where);
  if (!(cfg.alpha_min > 0.0 && cfg.alpha_min < 1.0)) throw ConfigError("run config: alpha_min must lie in (0, 1)");
  if (doc.contains("generator")) {
    const json& g = doc.at("generator");
    reject_unknown_keys(g, {"seed", "hidden_channels"}, "run config generator");
    read_key(g, "seed", cfg.generator.seed, where);
    read_key(g, "hidden_channels", cfg.generator.hidden_channels, where);
    if (cfg.generator.hidden_channels < 1) throw ConfigError("run config: hidden_channels must be >= 1");
  }
  std::string modality = "depth";
  read_key(doc, "modality", modality, where);
  cfg.modality = parse_modality(modality);
  cfg.condition_dir = resolve_dir(doc, "condition_dir", base_dir, true);
  cfg.flow_dir = resolve_dir(doc, "flow_dir", base_dir, true);
  cfg.occlusion_dir = resolve_dir(doc, "occlusion_dir", base_dir, true);
  cfg.output_dir = resolve_dir(doc, "output_dir", base_dir, false);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(doc, path.parent_path());
}

json to_json(const OptimConfig& o) {
  return {{"frames", o.frames},
          {"window", o.window},
          {"steps", o.steps},
          {"gamma", o.gamma},
          {"keyframe_stride", o.keyframe_stride},
          {"epochs", o.epochs},
          {"lr", o.lr},
          {"seed", o.seed},
          {"shared_init", o.shared_init},
          {"early_stop_patience", o.early_stop_patience},
          {"early_stop_min_improvement", o.early_stop_min_improvement}};
}

json to_json(const RunConfig& cfg) {
  json doc = to_json(cfg.optim);
  doc["generator"] = {{"seed", cfg.generator.seed}, {"hidden_channels", cfg.generator.hidden_channels}};
  doc["alpha_min"] = cfg.alpha_min;
  doc["modality"] = modality_name(cfg.modality);
  doc["condition_dir"] = cfg.condition_dir.string();
  doc["flow_dir"] = cfg.flow_dir.string();
  doc["occlusion_dir"] = cfg.occlusion_dir.string();
  if (!cfg.output_dir.empty()) doc["output_dir"] = cfg.output_dir.string();
  return doc;
}

SceneSpec scene_spec_from_json(const json& doc) {
  const std::string where = "scene spec";
  reject_unknown_keys(doc,
                      {"width", "height", "frames", "background_seed", "background_depth", "fx", "fy", "pan_x",
                       "pan_y", "sprites"},
                      where);
  SceneSpec spec;
  read_key(doc, "width", spec.width, where);
  read_key(doc, "height", spec.height, where);
  read_key(doc, "frames", spec.frames, where);
  read_key(doc, "background_seed", spec.background_seed, where);
  read_key(doc, "background_depth", spec.background_depth, where);
  read_key(doc, "fx", spec.fx, where);
  read_key(doc, "fy", spec.fy, where);
  read_key(doc, "pan_x", spec.pan_x, where);
  read_key(doc, "pan_y", spec.pan_y, where);
  if (doc.contains("sprites")) {
    if (!doc.at("sprites").is_array()) throw ConfigError("scene spec: 'sprites' must be an array");
    for (const json& s : doc.at("sprites")) {
      reject_unknown_keys(s, {"width", "height", "x", "y", "vx", "vy", "depth", "texture_seed"}, "scene sprite");
      SpriteSpec sprite;
      read_key(s, "width", sprite.width, where);
      read_key(s, "height", sprite.height, where);
      read_key(s, "x", sprite.x, where);
      read_key(s, "y", sprite.y, where);
      read_key(s, "vx", sprite.vx, where);
      read_key(s, "vy", sprite.vy, where);
      read_key(s, "depth", sprite.depth, where);
      read_key(s, "texture_seed", sprite.texture_seed, where);
      spec.sprites.push_back(sprite);
    }
  }
  return spec;
}

json to_json(const SceneSpec& spec) {
  json sprites = json::array();
  for (const auto& s : spec.sprites) {
    sprites.push_back({{"width", s.width},
                       {"height", s.height},
                       {"x", s.x},
                       {"y", s.y},
                       {"vx", s.vx},
                       {"vy", s.vy},
                       {"depth", s.depth},
                       {"texture_seed", s.texture_seed}});
  }
  return {{"width", spec.width},
          {"height", spec.height},
          {"frames", spec.frames},
          {"background_seed", spec.background_seed},
          {"background_depth", spec.background_depth},
          {"fx", spec.fx},
          {"fy", spec.fy},
          {"pan_x", spec.pan_x},
          {"pan_y", spec.pan_y},
          {"sprites", sprites}};
}

json to_json(const ConsistencyReport& r, bool include_timing) {
  json doc = {{"initial_objective", r.initial_objective},
              {"final_objective", r.final_objective},
              {"final_discrepancy", r.final_discrepancy},
              {"objective_history", r.objective_history},
              {"epochs_run", r.epochs_run},
              {"generator_calls", r.generator_calls},
              {"generator_calls_per_epoch", r.generator_calls_per_epoch},
              {"optimized_latents", r.optimized_latents},
              {"peak_live_graphs", r.peak_live_graphs}};
  if (include_timing) doc["seconds"] = r.seconds;
  return doc;
}

RunInputs load_run_inputs(RunConfig& cfg) {
  RunInputs in;
  in.cond.modality = cfg.modality;
  if (cfg.modality == Modality::kDepth) {
    std::vector<DepthMap> depths;
    for (const auto& p : io::list_indexed(cfg.condition_dir, "depth", "pfm")) depths.push_back(io::read_pfm(p));
    double max_depth = 0.0;
    for (const auto& d : depths) max_depth = std::max(max_depth, d.depth.maxCoeff());
    if (!(max_depth > 0.0)) throw DataError("bad_values", "depth maps must contain a positive value");
    for (const auto& d : depths) {
      Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(d.depth.data(), d.depth.size()) / max_depth;
      in.cond.frames.push_back(Tensor::from_data({1, d.height(), d.width()}, std::move(v)));
    }
  } else {
    for (const auto& p : io::list_indexed(cfg.condition_dir, "normal", "png")) in.cond.frames.push_back(io::read_png(p));
  }
  for (const auto& p : io::list_indexed(cfg.flow_dir, "flow", "flo")) in.flows.push_back(io::read_flo(p));
  for (const auto& p : io::list_indexed(cfg.occlusion_dir, "occ", "pgm")) in.occs.push_back(io::read_pgm(p));

  const auto T = static_cast<int>(in.cond.frames.size());
  if (cfg.optim.frames == 0) cfg.optim.frames = T;
  if (cfg.optim.frames != T) {
    throw DataError("count_mismatch", "config asks for " + std::to_string(cfg.optim.frames) + " frames but " +
                                          std::to_string(T) + " condition files were found");
  }
  if (static_cast<int>(in.flows.size()) != T - 1 || in.occs.size() != in.flows.size()) {
    throw DataError("count_mismatch", "need T - 1 flows and occlusion masks for " + std::to_string(T) + " frames");
  }
  const Index h = in.cond.frames[0].dim(1), w = in.cond.frames[0].dim(2);
  for (const auto& c : in.cond.frames) {
    if (c.dim(1) != h || c.dim(2) != w) throw DataError("dimension_mismatch", "condition frames differ in size");
  }
  for (const auto& f : in.flows) {
    if (f.width() != w || f.height() != h) throw DataError("dimension_mismatch", "flow size differs from frames");
  }
  for (const auto& o : in.occs) {
    if (o.width != w || o.height != h) throw DataError("dimension_mismatch", "mask size differs from frames");
  }
  return in;
}

}  // namespace tempoflow
