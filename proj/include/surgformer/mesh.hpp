#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "surgformer/types.hpp"

namespace surgformer {

/// Directed incidence of an undirected graph. Edges are stored edge-major
/// and grouped by receiver: node i's incoming edges occupy the run
/// [first[i], first[i]+count[i]) of src/rcv. The canonical builder emits both
/// directions of every undirected edge plus one self loop per node, sorted by
/// (receiver, source).
struct EdgeList {
  int node_count = 0;
  std::vector<int> src;
  std::vector<int> rcv;
  std::vector<int> first;
  std::vector<int> count;

  int edge_count() const { return static_cast<int>(src.size()); }

  // undirected (i < j) pairs, no self loops
  static EdgeList from_pairs(int n, std::vector<std::pair<int, int>> pairs);
};

struct TetMesh {
  MatX3d vertices;
  MatX4i tets;
  std::vector<int> fixed_nodes;  // sorted ascending

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int tet_count() const { return static_cast<int>(tets.rows()); }
  bool is_fixed(int v) const;
};

/// Boundary of a tet mesh (or of its active submesh): outward-oriented
/// triangles, the sorted list of boundary nodes, and area-weighted unit
/// normals per boundary node.
struct SurfaceInfo {
  MatX3i triangles;
  std::vector<int> nodes;
  MatX3d normals;                   // row k pairs with nodes[k]
  std::vector<int> node_to_surface; // vertex id -> row in nodes, or -1

  bool on_surface(int v) const { return node_to_surface[v] >= 0; }
  Vec3 normal_of(int v) const { return normals.row(node_to_surface[v]); }
};

double tet_signed_volume(const MatX3d& vertices, int a, int b, int c, int d);

/// Reads the {"vertices", "tets", "fixed"} JSON format. Unknown fields,
/// malformed shapes, out-of-range or repeated indices, and degenerate tets
/// are all rejected; negative-volume tets are reoriented in place.
TetMesh load_mesh(const std::string& path);
void save_mesh(const TetMesh& mesh, const std::string& path);

/// Axis-aligned bar of nx*ny*nz cubes, six tets per cube around the main
/// diagonal so neighbouring cells share face diagonals. Nodes on the x=0
/// face are fixed.
TetMesh generate_bar_mesh(int nx, int ny, int nz, const Vec3& extent);

EdgeList build_edges(const TetMesh& mesh);

SurfaceInfo extract_surface(const TetMesh& mesh);
SurfaceInfo extract_surface(const TetMesh& mesh,
                            const std::vector<uint8_t>& tet_active);

/// Combinatorial Laplacian L = D - A of the undirected graph (self loops
/// ignored). Row sums are exactly zero.
SpMatRow graph_laplacian(const EdgeList& edges, int n);

}  // namespace surgformer
