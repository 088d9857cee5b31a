#include "surgformer/dataset.hpp"

#include "binio.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace surgformer {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'F', '1'};
constexpr uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

std::string sidecar_path(const std::string& dataset_path) {
  return dataset_path + ".json";
}

void write_dataset(const std::string& path, const DatasetFile& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("dataset: cannot write " + path);
  out.write(kMagic, 4);
  binio::put_u32(out, kVersion);
  binio::put_u32(out, data.node_count);
  binio::put_u32(out, static_cast<uint32_t>(data.samples.size()));
  const size_t n = data.node_count;
  for (const auto& s : data.samples) {
    if (static_cast<size_t>(s.tool.rows()) != n ||
        static_cast<size_t>(s.target.rows()) != n || s.bc_flags.size() != n ||
        s.cut_flags.size() != n)
      fail("dataset: sample does not match node count");
    binio::put_f32(out, s.tool.data(), n * 3);
    out.write(reinterpret_cast<const char*>(s.bc_flags.data()), n);
    out.write(reinterpret_cast<const char*>(s.cut_flags.data()), n);
    binio::put_f32(out, s.target.data(), n * 3);
  }
  if (!out) fail("dataset: write failed for " + path);
}

DatasetFile read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail("dataset: " + path + " is not an SGF1 file");
  const uint32_t version = binio::get_u32(in);
  if (version != kVersion)
    fail("dataset: " + path + " has version " + std::to_string(version) +
         ", expected " + std::to_string(kVersion));
  DatasetFile data;
  data.node_count = binio::get_u32(in);
  const uint32_t count = binio::get_u32(in);
  const size_t n = data.node_count;
  data.samples.resize(count);
  for (auto& s : data.samples) {
    s.tool.resize(n, 3);
    s.bc_flags.resize(n);
    s.cut_flags.resize(n);
    s.target.resize(n, 3);
    binio::get_f32(in, s.tool.data(), n * 3);
    in.read(reinterpret_cast<char*>(s.bc_flags.data()), n);
    in.read(reinterpret_cast<char*>(s.cut_flags.data()), n);
    binio::get_f32(in, s.target.data(), n * 3);
    if (!in) fail("dataset: " + path + " is truncated");
  }
  return data;
}

}  // namespace surgformer
