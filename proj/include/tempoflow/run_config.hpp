#pragma once

// JSON documents for runs and scene specs, and loading of on-disk inputs.

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "tempoflow/consistency.hpp"
#include "tempoflow/scene.hpp"

namespace tempoflow {

struct RunConfig {
  OptimConfig optim;
  GeneratorSpec generator;
  double alpha_min = 1e-3;
  Modality modality = Modality::kDepth;
  // Relative paths in the JSON document resolve against the file's directory.
  std::filesystem::path condition_dir;
  std::filesystem::path flow_dir;
  std::filesystem::path occlusion_dir;
  std::filesystem::path output_dir;  // may be empty; --out wins
};

// Throws ConfigError on unknown keys, wrong types or missing directories.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const OptimConfig& cfg);

SceneSpec scene_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SceneSpec& spec);

nlohmann::json to_json(const ConsistencyReport& report, bool include_timing);

const char* modality_name(Modality m);
Modality parse_modality(const std::string& name);

struct RunInputs {
  ConditionStack cond;
  std::vector<FlowField> flows;
  std::vector<OcclusionMask> occs;
};

// Depth modality reads depth_NNNN.pfm and normalizes by the sequence maximum;
// normal modality reads normal_NNNN.png. Flows are flow_NNNN.flo and masks
// occ_NNNN.pgm. Sets cfg.optim.frames from the files when the document left
// it out, and throws DataError when counts or dimensions disagree.
RunInputs load_run_inputs(RunConfig& cfg);

}  // namespace tempoflow
