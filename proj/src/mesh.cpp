#include "surgformer/mesh.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace surgformer {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

EdgeList EdgeList::from_pairs(int n, std::vector<std::pair<int, int>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<std::pair<int, int>> directed;  // (rcv, src)
  directed.reserve(pairs.size() * 2 + n);
  for (const auto& [a, b] : pairs) {
    if (a == b) fail("EdgeList: self loop in input pairs");
    directed.emplace_back(a, b);
    directed.emplace_back(b, a);
  }
  for (int i = 0; i < n; ++i) directed.emplace_back(i, i);
  std::sort(directed.begin(), directed.end());

  EdgeList e;
  e.node_count = n;
  e.src.reserve(directed.size());
  e.rcv.reserve(directed.size());
  e.first.assign(n, 0);
  e.count.assign(n, 0);
  for (const auto& [r, s] : directed) {
    e.src.push_back(s);
    e.rcv.push_back(r);
    e.count[r]++;
  }
  for (int i = 1; i < n; ++i) e.first[i] = e.first[i - 1] + e.count[i - 1];
  return e;
}

bool TetMesh::is_fixed(int v) const {
  return std::binary_search(fixed_nodes.begin(), fixed_nodes.end(), v);
}

double tet_signed_volume(const MatX3d& vertices, int a, int b, int c, int d) {
  const Vec3 e1 = vertices.row(b) - vertices.row(a);
  const Vec3 e2 = vertices.row(c) - vertices.row(a);
  const Vec3 e3 = vertices.row(d) - vertices.row(a);
  return e1.cross(e2).dot(e3) / 6.0;
}

namespace {

constexpr double kDegenerateVolume = 1e-14;

void validate_and_orient(TetMesh& mesh) {
  const int n = mesh.vertex_count();
  for (int t = 0; t < mesh.tet_count(); ++t) {
    std::array<int, 4> v;
    for (int k = 0; k < 4; ++k) v[k] = mesh.tets(t, k);
    for (int k = 0; k < 4; ++k) {
      if (v[k] < 0 || v[k] >= n)
        fail("mesh: tet " + std::to_string(t) + " references vertex " +
             std::to_string(v[k]) + " outside [0, " + std::to_string(n) + ")");
    }
    std::array<int, 4> s = v;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end())
      fail("mesh: tet " + std::to_string(t) + " has repeated vertices");

    double vol = tet_signed_volume(mesh.vertices, v[0], v[1], v[2], v[3]);
    if (std::abs(vol) < kDegenerateVolume)
      fail("mesh: tet " + std::to_string(t) + " is degenerate (volume " +
           std::to_string(vol) + ")");
    if (vol < 0.0) std::swap(mesh.tets(t, 2), mesh.tets(t, 3));
  }
  for (int f : mesh.fixed_nodes) {
    if (f < 0 || f >= n)
      fail("mesh: fixed node " + std::to_string(f) + " outside [0, " +
           std::to_string(n) + ")");
  }
  std::sort(mesh.fixed_nodes.begin(), mesh.fixed_nodes.end());
  mesh.fixed_nodes.erase(
      std::unique(mesh.fixed_nodes.begin(), mesh.fixed_nodes.end()),
      mesh.fixed_nodes.end());
}

}  // namespace

TetMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("mesh: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("mesh: " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) fail("mesh: " + path + " top level must be an object");
  for (const auto& item : j.items()) {
    const std::string& k = item.key();
    if (k != "vertices" && k != "tets" && k != "fixed")
      fail("mesh: unknown field \"" + k + "\" in " + path);
  }
  if (!j.contains("vertices") || !j.contains("tets") || !j.contains("fixed"))
    fail("mesh: " + path + " must contain vertices, tets and fixed");

  const auto& jv = j["vertices"];
  const auto& jt = j["tets"];
  const auto& jf = j["fixed"];
  if (!jv.is_array() || !jt.is_array() || !jf.is_array())
    fail("mesh: vertices, tets and fixed must be arrays");

  TetMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(jv.size()), 3);
  for (size_t i = 0; i < jv.size(); ++i) {
    if (!jv[i].is_array() || jv[i].size() != 3)
      fail("mesh: vertex " + std::to_string(i) + " is not a 3-vector");
    for (int c = 0; c < 3; ++c) mesh.vertices(static_cast<Eigen::Index>(i), c) = jv[i][c].get<double>();
  }
  mesh.tets.resize(static_cast<Eigen::Index>(jt.size()), 4);
  for (size_t t = 0; t < jt.size(); ++t) {
    if (!jt[t].is_array() || jt[t].size() != 4)
      fail("mesh: tet " + std::to_string(t) + " is not a 4-tuple");
    for (int c = 0; c < 4; ++c) mesh.tets(static_cast<Eigen::Index>(t), c) = jt[t][c].get<int>();
  }
  mesh.fixed_nodes.reserve(jf.size());
  for (const auto& f : jf) mesh.fixed_nodes.push_back(f.get<int>());

  validate_and_orient(mesh);
  return mesh;
}

void save_mesh(const TetMesh& mesh, const std::string& path) {
  nlohmann::ordered_json j;
  auto& jv = j["vertices"] = nlohmann::ordered_json::array();
  for (int i = 0; i < mesh.vertex_count(); ++i)
    jv.push_back({mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2)});
  auto& jt = j["tets"] = nlohmann::ordered_json::array();
  for (int t = 0; t < mesh.tet_count(); ++t)
    jt.push_back({mesh.tets(t, 0), mesh.tets(t, 1), mesh.tets(t, 2), mesh.tets(t, 3)});
  j["fixed"] = mesh.fixed_nodes;

  std::ofstream out(path);
  if (!out) fail("mesh: cannot write " + path);
  out << j.dump(2) << "\n";
}

TetMesh generate_bar_mesh(int nx, int ny, int nz, const Vec3& extent) {
  if (nx < 1 || ny < 1 || nz < 1) fail("bar mesh: cell counts must be >= 1");
  if (extent.minCoeff() <= 0.0) fail("bar mesh: extent must be positive");

  const int vx = nx + 1, vy = ny + 1, vz = nz + 1;
  auto vid = [&](int ix, int iy, int iz) { return (ix * vy + iy) * vz + iz; };

  TetMesh mesh;
  mesh.vertices.resize(vx * vy * vz, 3);
  for (int ix = 0; ix < vx; ++ix)
    for (int iy = 0; iy < vy; ++iy)
      for (int iz = 0; iz < vz; ++iz)
        mesh.vertices.row(vid(ix, iy, iz)) =
            Vec3(extent.x() * ix / nx, extent.y() * iy / ny, extent.z() * iz / nz);

  // Six tets per cube sharing the main diagonal c000-c111; identical
  // orientation in every cell keeps shared face diagonals consistent.
  static constexpr int kCorner[6][2] = {
      {0b100, 0b110}, {0b110, 0b010}, {0b010, 0b011},
      {0b011, 0b001}, {0b001, 0b101}, {0b101, 0b100}};
  mesh.tets.resize(6 * nx * ny * nz, 4);
  int t = 0;
  for (int cx = 0; cx < nx; ++cx)
    for (int cy = 0; cy < ny; ++cy)
      for (int cz = 0; cz < nz; ++cz) {
        auto corner = [&](int bits) {
          return vid(cx + ((bits >> 2) & 1), cy + ((bits >> 1) & 1), cz + (bits & 1));
        };
        for (const auto& mid : kCorner) {
          mesh.tets(t, 0) = corner(0b000);
          mesh.tets(t, 1) = corner(mid[0]);
          mesh.tets(t, 2) = corner(mid[1]);
          mesh.tets(t, 3) = corner(0b111);
          ++t;
        }
      }

  for (int iy = 0; iy < vy; ++iy)
    for (int iz = 0; iz < vz; ++iz) mesh.fixed_nodes.push_back(vid(0, iy, iz));

  validate_and_orient(mesh);
  return mesh;
}

EdgeList build_edges(const TetMesh& mesh) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(mesh.tet_count() * 6);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) {
        int u = mesh.tets(t, a), v = mesh.tets(t, b);
        pairs.emplace_back(std::min(u, v), std::max(u, v));
      }
  }
  return EdgeList::from_pairs(mesh.vertex_count(), std::move(pairs));
}

SurfaceInfo extract_surface(const TetMesh& mesh) {
  return extract_surface(mesh, std::vector<uint8_t>(mesh.tet_count(), 1));
}

SurfaceInfo extract_surface(const TetMesh& mesh,
                            const std::vector<uint8_t>& tet_active) {
  if (static_cast<int>(tet_active.size()) != mesh.tet_count())
    fail("surface: active mask size mismatch");

  // The four faces opposite each corner, wound so the face normal points out
  // of a positively oriented tet.
  static constexpr int kFace[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

  struct FaceUse {
    int count = 0;
    std::array<int, 3> wound{};  // winding from the first owning tet
  };
  std::map<std::array<int, 3>, FaceUse> faces;
  for (int t = 0; t < mesh.tet_count(); ++t) {
    if (!tet_active[t]) continue;
    for (const auto& f : kFace) {
      std::array<int, 3> w = {mesh.tets(t, f[0]), mesh.tets(t, f[1]), mesh.tets(t, f[2])};
      std::array<int, 3> key = w;
      std::sort(key.begin(), key.end());
      auto& use = faces[key];
      if (use.count == 0) use.wound = w;
      use.count++;
      if (use.count > 2)
        fail("surface: face (" + std::to_string(key[0]) + ", " +
             std::to_string(key[1]) + ", " + std::to_string(key[2]) +
             ") is shared by more than two tets");
    }
  }

  SurfaceInfo info;
  std::vector<std::array<int, 3>> tris;
  for (const auto& [key, use] : faces)
    if (use.count == 1) tris.push_back(use.wound);

  info.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
  const int n = mesh.vertex_count();
  MatX3d accum = MatX3d::Zero(n, 3);
  std::vector<uint8_t> on(n, 0);
  for (size_t k = 0; k < tris.size(); ++k) {
    const auto& w = tris[k];
    for (int c = 0; c < 3; ++c) info.triangles(static_cast<Eigen::Index>(k), c) = w[c];
    const Vec3 a = mesh.vertices.row(w[0]);
    const Vec3 b = mesh.vertices.row(w[1]);
    const Vec3 c = mesh.vertices.row(w[2]);
    const Vec3 weighted = 0.5 * (b - a).cross(c - a);  // area * unit normal
    for (int v : w) {
      accum.row(v) += weighted;
      on[v] = 1;
    }
  }

  info.node_to_surface.assign(n, -1);
  for (int v = 0; v < n; ++v)
    if (on[v]) {
      info.node_to_surface[v] = static_cast<int>(info.nodes.size());
      info.nodes.push_back(v);
    }
  info.normals.resize(static_cast<Eigen::Index>(info.nodes.size()), 3);
  for (size_t k = 0; k < info.nodes.size(); ++k) {
    Vec3 m = accum.row(info.nodes[k]);
    const double len = m.norm();
    info.normals.row(static_cast<Eigen::Index>(k)) =
        len > 0.0 ? Vec3(m / len) : Vec3(0, 0, 0);
  }
  return info;
}

SpMatRow graph_laplacian(const EdgeList& edges, int n) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(edges.edge_count() + n);
  std::vector<double> degree(n, 0.0);
  for (int e = 0; e < edges.edge_count(); ++e) {
    const int s = edges.src[e], r = edges.rcv[e];
    if (s == r) continue;
    trip.emplace_back(r, s, -1.0);
    degree[r] += 1.0;
  }
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, degree[i]);
  SpMatRow L(n, n);
  L.setFromTriplets(trip.begin(), trip.end());
  return L;
}

}  // namespace surgformer
