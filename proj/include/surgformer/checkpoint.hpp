#pragma once

#include <string>

#include "surgformer/autodiff.hpp"
#include "surgformer/config.hpp"
#include "surgformer/hierarchy.hpp"

namespace surgformer {

/// A trained model: the resolved run configuration (verbatim JSON), the
/// build identifier that produced it, the pooling hierarchy it was trained
/// on, and every parameter tensor by name.
struct Checkpoint {
  std::string config_json;
  std::string build;
  MeshHierarchy hierarchy;
  ad::ParamStore<float> params;

  RunConfig run_config() const { return run_config_from_json(config_json); }
};

/// Binary layout ("SGFC", little endian): magic, u32 version = 1, the config
/// JSON and build id as length-prefixed strings, the hierarchy (levels with
/// vertex ids and edge runs, then transitions with seeds, owners and
/// clusters), and named f32 tensors in canonical parameter order.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

/// Loads and validates: version match, hierarchy depth per the embedded
/// config, and tensor names/shapes exactly as the config prescribes.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace surgformer
