#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "surgformer/types.hpp"

namespace surgformer {

/// One supervised sample over a fixed mesh: tool signal (zero except the
/// interaction row), boundary-condition flags (fixed nodes plus the
/// interaction node), cut flags, and the target displacement field (zero on
/// inactive nodes).
struct SampleRecord {
  MatX3f tool;
  std::vector<uint8_t> bc_flags;
  std::vector<uint8_t> cut_flags;
  MatX3f target;
};

struct DatasetFile {
  uint32_t node_count = 0;
  std::vector<SampleRecord> samples;
};

/// Binary layout ("SGF1", little endian): magic, u32 version = 1, u32 node
/// count, u32 sample count, then per sample the tool field (N x 3 f32), bc
/// flags (N u8), cut flags (N u8) and target field (N x 3 f32).
void write_dataset(const std::string& path, const DatasetFile& data);
DatasetFile read_dataset(const std::string& path);

/// Path of the JSON sidecar that accompanies a dataset file.
std::string sidecar_path(const std::string& dataset_path);

}  // namespace surgformer
