#include "surgformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "binio.hpp"

namespace surgformer {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'F', 'C'};
constexpr uint32_t kVersion = 1;
constexpr uint64_t kMaxString = 1ull << 30;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void put_ints(std::ostream& out, const std::vector<int>& v) {
  binio::put_u32(out, static_cast<uint32_t>(v.size()));
  binio::put_i32(out, v.data(), v.size());
}

std::vector<int> get_ints(std::istream& in, const std::string& path) {
  const uint32_t n = binio::get_u32(in);
  if (!in) fail("checkpoint: " + path + " is truncated");
  std::vector<int> v(n);
  binio::get_i32(in, v.data(), v.size());
  if (!in) fail("checkpoint: " + path + " is truncated");
  return v;
}

void put_edges(std::ostream& out, const EdgeList& e) {
  binio::put_u32(out, static_cast<uint32_t>(e.node_count));
  put_ints(out, e.src);
  put_ints(out, e.rcv);
  put_ints(out, e.first);
  put_ints(out, e.count);
}

EdgeList get_edges(std::istream& in, const std::string& path) {
  EdgeList e;
  e.node_count = static_cast<int>(binio::get_u32(in));
  e.src = get_ints(in, path);
  e.rcv = get_ints(in, path);
  e.first = get_ints(in, path);
  e.count = get_ints(in, path);
  if (e.src.size() != e.rcv.size() ||
      e.first.size() != static_cast<size_t>(e.node_count) ||
      e.count.size() != static_cast<size_t>(e.node_count))
    fail("checkpoint: " + path + " has an inconsistent edge list");
  return e;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  binio::put_u32(out, kVersion);
  binio::put_str(out, ckpt.config_json);
  binio::put_str(out, ckpt.build);

  const MeshHierarchy& h = ckpt.hierarchy;
  binio::put_u32(out, static_cast<uint32_t>(h.level_count()));
  for (const auto& level : h.levels) {
    put_ints(out, level.verts);
    put_edges(out, level.edges);
  }
  for (const auto& t : h.trans) {
    put_ints(out, t.seeds);
    put_ints(out, t.owner);
    put_ints(out, t.clusters.first);
    put_ints(out, t.clusters.count);
    put_ints(out, t.clusters.members);
  }

  binio::put_u32(out, static_cast<uint32_t>(ckpt.params.size()));
  for (int p = 0; p < ckpt.params.size(); ++p) {
    binio::put_str(out, ckpt.params.name(p));
    const Mat<float>& v = ckpt.params.value(p);
    binio::put_u32(out, static_cast<uint32_t>(v.rows()));
    binio::put_u32(out, static_cast<uint32_t>(v.cols()));
    binio::put_f32(out, v.data(), static_cast<size_t>(v.size()));
  }
  if (!out) fail("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail("checkpoint: " + path + " is not an SGFC file");
  const uint32_t version = binio::get_u32(in);
  if (version != kVersion)
    fail("checkpoint: " + path + " has version " + std::to_string(version) +
         ", expected " + std::to_string(kVersion));

  Checkpoint ckpt;
  ckpt.config_json = binio::get_str(in, kMaxString);
  ckpt.build = binio::get_str(in, kMaxString);
  if (!in) fail("checkpoint: " + path + " is truncated");

  const uint32_t level_count = binio::get_u32(in);
  if (!in || level_count == 0 || level_count > 64)
    fail("checkpoint: " + path + " has a bad level count");
  ckpt.hierarchy.levels.resize(level_count);
  for (auto& level : ckpt.hierarchy.levels) {
    level.verts = get_ints(in, path);
    level.edges = get_edges(in, path);
  }
  ckpt.hierarchy.trans.resize(level_count - 1);
  for (auto& t : ckpt.hierarchy.trans) {
    t.seeds = get_ints(in, path);
    t.owner = get_ints(in, path);
    t.clusters.first = get_ints(in, path);
    t.clusters.count = get_ints(in, path);
    t.clusters.members = get_ints(in, path);
  }

  const RunConfig rc = run_config_from_json(ckpt.config_json);
  rc.model.validate();
  if (static_cast<int>(level_count) != rc.model.levels + 1)
    fail("checkpoint: hierarchy depth " + std::to_string(level_count) +
         " does not match the embedded config (levels = " +
         std::to_string(rc.model.levels) + ")");

  const uint32_t tensor_count = binio::get_u32(in);
  std::vector<std::pair<std::string, std::pair<int, int>>> expected;
  for_each_param(rc.model, [&](const std::string& name, int r, int c, ParamKind) {
    expected.emplace_back(name, std::make_pair(r, c));
  });
  if (tensor_count != expected.size())
    fail("checkpoint: " + path + " holds " + std::to_string(tensor_count) +
         " tensors, config prescribes " + std::to_string(expected.size()));

  for (const auto& [name, shape] : expected) {
    const std::string stored = binio::get_str(in, kMaxString);
    if (!in) fail("checkpoint: " + path + " is truncated");
    if (stored != name)
      fail("checkpoint: expected tensor " + name + ", found " + stored);
    const int rows = static_cast<int>(binio::get_u32(in));
    const int cols = static_cast<int>(binio::get_u32(in));
    if (rows != shape.first || cols != shape.second)
      fail("checkpoint: tensor " + name + " has shape " + std::to_string(rows) +
           "x" + std::to_string(cols) + ", config prescribes " +
           std::to_string(shape.first) + "x" + std::to_string(shape.second));
    Mat<float> v(rows, cols);
    binio::get_f32(in, v.data(), static_cast<size_t>(v.size()));
    if (!in) fail("checkpoint: " + path + " is truncated");
    ckpt.params.add(name, std::move(v));
  }
  return ckpt;
}

}  // namespace surgformer
