#pragma once

#include <cstdint>
#include <string>

#include "surgformer/datagen.hpp"
#include "surgformer/model.hpp"
#include "surgformer/robust.hpp"
#include "surgformer/train.hpp"

namespace surgformer {

struct PathsConfig {
  std::string mesh;
  std::string data;
  std::string eval_data;
  std::string checkpoint;
  std::string adv_set;
  std::string out;
  std::string report;
  std::string loss_curve;
};

/// Fully resolved run configuration: one file plus flag overrides, then
/// serialized verbatim into every artifact this run produces.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AdvConfig adv;
  DataGenConfig datagen;
  PathsConfig paths;
  uint64_t hierarchy_seed = 1;
  uint64_t init_seed = 1;
};

/// Serializes every field explicitly, in a stable key order.
std::string run_config_to_json(const RunConfig& cfg);

/// Missing keys keep their defaults; unknown keys are rejected by name.
RunConfig run_config_from_json(const std::string& text);

RunConfig load_run_config(const std::string& path);

const char* freeze_policy_name(FreezePolicy p);
FreezePolicy freeze_policy_from_name(const std::string& name);
const char* solver_kind_name(SolverKind k);
SolverKind solver_kind_from_name(const std::string& name);

/// Build identifier stamped into artifacts (set from the build system).
const char* build_id();

}  // namespace surgformer
