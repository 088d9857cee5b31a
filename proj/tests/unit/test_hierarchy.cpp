#include "doctest.h"

#include <algorithm>
#include <limits>
#include <set>
#include <vector>

#include "surgformer/hierarchy.hpp"
#include "surgformer/mesh.hpp"
#include "surgformer/rng.hpp"

using namespace surgformer;

namespace {

// Quadratic-time farthest point sampling: recompute every node's distance to
// the whole selected set each round instead of maintaining it incrementally.
std::vector<int> fps_oracle(const MatX3d& pts, int k, int first) {
  std::vector<int> seeds{first};
  const int n = static_cast<int>(pts.rows());
  while (static_cast<int>(seeds.size()) < k) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int s : seeds) d = std::min(d, (pts.row(i) - pts.row(s)).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    seeds.push_back(best);
  }
  return seeds;
}

// Hop distances from a single source over the incidence structure.
std::vector<int> bfs_from(const EdgeList& e, int source) {
  constexpr int kInf = std::numeric_limits<int>::max();
  std::vector<int> dist(e.node_count, kInf);
  std::vector<int> queue{source};
  dist[source] = 0;
  for (size_t head = 0; head < queue.size(); ++head) {
    const int u = queue[head];
    for (int k = e.first[u]; k < e.first[u] + e.count[u]; ++k) {
      const int v = e.src[k];
      if (v == u || dist[v] != kInf) continue;
      dist[v] = dist[u] + 1;
      queue.push_back(v);
    }
  }
  return dist;
}

// Ownership by one BFS per seed: minimize (hop, squared distance, seed id).
std::vector<int> ownership_oracle(const EdgeList& e, const MatX3d& pts,
                                  const std::vector<int>& seeds) {
  constexpr int kInf = std::numeric_limits<int>::max();
  std::vector<std::vector<int>> dist;
  for (int s : seeds) dist.push_back(bfs_from(e, s));
  std::vector<int> owner(e.node_count, -1);
  for (int v = 0; v < e.node_count; ++v) {
    int best_hop = kInf;
    for (size_t p = 0; p < seeds.size(); ++p)
      best_hop = std::min(best_hop, dist[p][v]);
    int best = -1;
    double best_d2 = 0.0;
    for (size_t p = 0; p < seeds.size(); ++p) {
      // unreachable nodes compare every seed, reachable ones only ties
      if (best_hop != kInf && dist[p][v] != best_hop) continue;
      const double d2 = (pts.row(v) - pts.row(seeds[p])).squaredNorm();
      if (best < 0 || d2 < best_d2 ||
          (d2 == best_d2 && seeds[p] < seeds[best])) {
        best = static_cast<int>(p);
        best_d2 = d2;
      }
    }
    owner[v] = best;
  }
  return owner;
}

// Expected contracted incidence arrays, assembled by hand from adjacency sets.
EdgeList contract_oracle(const EdgeList& fine, const std::vector<int>& owner,
                         int n_coarse) {
  std::vector<std::set<int>> adj(n_coarse);
  for (int s = 0; s < n_coarse; ++s) adj[s].insert(s);
  for (int k = 0; k < fine.edge_count(); ++k) {
    const int a = owner[fine.src[k]], b = owner[fine.rcv[k]];
    if (a == b) continue;
    adj[a].insert(b);
    adj[b].insert(a);
  }
  EdgeList e;
  e.node_count = n_coarse;
  for (int r = 0; r < n_coarse; ++r) {
    e.first.push_back(static_cast<int>(e.src.size()));
    for (int s : adj[r]) {
      e.src.push_back(s);
      e.rcv.push_back(r);
    }
    e.count.push_back(static_cast<int>(adj[r].size()));
  }
  return e;
}

MatX3d jittered_bar_points(int nx, int ny, int nz, uint64_t seed, TetMesh* out) {
  TetMesh mesh = generate_bar_mesh(nx, ny, nz, Vec3(0.1 * nx, 0.1 * ny, 0.1 * nz));
  if (seed != 0) {
    Rng rng(seed);
    for (int i = 0; i < mesh.vertex_count(); ++i)
      for (int j = 0; j < 3; ++j) mesh.vertices(i, j) += 0.01 * rng.normal();
  }
  if (out) *out = mesh;
  return mesh.vertices;
}

}  // namespace

TEST_CASE("farthest point sampling matches the quadratic oracle") {
  for (uint64_t seed : {0ull, 5ull}) {  // exact lattice ties and jittered
    TetMesh mesh;
    jittered_bar_points(4, 3, 2, seed, &mesh);
    const int n = mesh.vertex_count();
    for (int first : {0, 7, n - 1}) {
      for (int k : {1, 5, n / 2, n}) {
        CHECK(farthest_point_sampling_from(mesh.vertices, k, first) ==
              fps_oracle(mesh.vertices, k, first));
      }
    }
  }
}

TEST_CASE("seeded sampling is deterministic and starts at its own pick") {
  TetMesh mesh;
  jittered_bar_points(3, 3, 3, 2, &mesh);
  const auto a = farthest_point_sampling(mesh.vertices, 10, 77);
  const auto b = farthest_point_sampling(mesh.vertices, 10, 77);
  CHECK(a == b);
  CHECK(a == farthest_point_sampling_from(mesh.vertices, 10, a[0]));
}

TEST_CASE("fps rejects bad arguments") {
  TetMesh mesh;
  jittered_bar_points(2, 2, 2, 1, &mesh);
  CHECK_THROWS_AS(farthest_point_sampling_from(mesh.vertices, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      farthest_point_sampling_from(mesh.vertices, mesh.vertex_count() + 1, 0),
      std::invalid_argument);
  CHECK_THROWS_AS(farthest_point_sampling_from(mesh.vertices, 1, -1),
                  std::invalid_argument);
}

TEST_CASE("ownership matches the per-seed BFS oracle") {
  for (uint64_t jitter : {0ull, 9ull}) {
    TetMesh mesh;
    jittered_bar_points(5, 3, 2, jitter, &mesh);
    const EdgeList edges = build_edges(mesh);
    for (uint64_t s : {1ull, 2ull, 3ull}) {
      const auto seeds = farthest_point_sampling(mesh.vertices, 11, s);
      const auto got = ownership_map(edges, mesh.vertices, seeds);
      CHECK(got == ownership_oracle(edges, mesh.vertices, seeds));
      // each seed owns itself
      for (size_t p = 0; p < seeds.size(); ++p)
        CHECK(got[seeds[p]] == static_cast<int>(p));
    }
  }
}

TEST_CASE("ownership falls back to Euclidean-nearest in disconnected graphs") {
  // two disjoint squares: 0-3 around the origin, 4-7 shifted by +10 in x
  MatX3d pts(8, 3);
  pts << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0,
      10, 0, 0, 11, 0, 0, 11, 1, 0, 10, 1, 0;
  EdgeList edges = EdgeList::from_pairs(
      8, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}});
  const std::vector<int> seeds{1, 2};  // both in the first component
  const auto got = ownership_map(edges, pts, seeds);
  CHECK(got == ownership_oracle(edges, pts, seeds));
  CHECK(got[4] == 0);  // node 4 is euclid-nearest to seed 1 at (1,0,0)
  CHECK(got[6] == 1);  // node 6 nearest to seed 2 at (1,1,0)
}

TEST_CASE("ownership validates its inputs") {
  TetMesh mesh;
  jittered_bar_points(2, 1, 1, 1, &mesh);
  const EdgeList edges = build_edges(mesh);
  CHECK_THROWS_AS(ownership_map(edges, mesh.vertices, {}),
                  std::invalid_argument);
  CHECK_THROWS_AS(ownership_map(edges, mesh.vertices, {0, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(ownership_map(edges, mesh.vertices, {mesh.vertex_count()}),
                  std::invalid_argument);
}

TEST_CASE("edge contraction matches the adjacency-set oracle") {
  TetMesh mesh;
  jittered_bar_points(4, 2, 2, 3, &mesh);
  const EdgeList edges = build_edges(mesh);
  const auto seeds = farthest_point_sampling(mesh.vertices, 9, 4);
  const auto owner = ownership_map(edges, mesh.vertices, seeds);
  const EdgeList got = contract_edges(edges, owner, 9);
  const EdgeList want = contract_oracle(edges, owner, 9);
  CHECK(got.node_count == want.node_count);
  CHECK(got.src == want.src);
  CHECK(got.rcv == want.rcv);
  CHECK(got.first == want.first);
  CHECK(got.count == want.count);
}

TEST_CASE("clusters list ascending members and cover every node") {
  const std::vector<int> owner{2, 0, 1, 0, 2, 2, 1};
  const ClusterSet c = ClusterSet::from_ownership(owner, 3);
  CHECK(c.coarse_count() == 3);
  CHECK(c.fine_count() == 7);
  CHECK(c.count == std::vector<int>{2, 2, 3});
  std::vector<int> seen;
  for (int s = 0; s < 3; ++s) {
    for (int k = c.first[s]; k < c.first[s] + c.count[s]; ++k) {
      if (k > c.first[s]) CHECK(c.members[k] > c.members[k - 1]);
      CHECK(owner[c.members[k]] == s);
      seen.push_back(c.members[k]);
    }
  }
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(ClusterSet::from_ownership({0, 3}, 3), std::invalid_argument);
}

TEST_CASE("pool_max takes channelwise maxima with first-member ties") {
  const ClusterSet c = ClusterSet::from_ownership({0, 0, 1, 1, 1}, 2);
  Mat<double> x(5, 2);
  x << 1, 5, 3, 5,   // cluster 0: max 3 at row 1; channel 1 ties -> row 0
      2, 9, 7, 9, 7, 0;  // cluster 1: channel 0 ties rows 3,4 -> row 3
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg;
  const Mat<double> y = pool_max(x, c, &arg);
  Mat<double> want(2, 2);
  want << 3, 5, 7, 9;
  CHECK(y == want);
  CHECK(arg(0, 0) == 1);
  CHECK(arg(0, 1) == 0);
  CHECK(arg(1, 0) == 3);
  CHECK(arg(1, 1) == 2);

  ClusterSet empty;  // cluster 1 has no members
  empty.first = {0, 2};
  empty.count = {2, 0};
  empty.members = {0, 1};
  Mat<double> x2(2, 1);
  x2 << 1, 2;
  CHECK_THROWS_AS(pool_max(x2, empty), std::invalid_argument);
  CHECK_THROWS_AS(pool_max(x, empty), std::invalid_argument);  // row mismatch
}

TEST_CASE("unpool broadcasts each coarse row to its fine nodes") {
  Mat<double> y(2, 3);
  y << 1, 2, 3, 4, 5, 6;
  const std::vector<int> owner{1, 0, 1, 1};
  const Mat<double> x = unpool_broadcast(y, owner);
  REQUIRE(x.rows() == 4);
  CHECK(x.row(0) == y.row(1));
  CHECK(x.row(1) == y.row(0));
  CHECK(x.row(2) == y.row(1));
  CHECK(x.row(3) == y.row(1));
  CHECK_THROWS_AS(unpool_broadcast(y, std::vector<int>{0, 2}),
                  std::invalid_argument);
}

TEST_CASE("hierarchy levels shrink by the requested ratios") {
  const TetMesh mesh = generate_bar_mesh(4, 3, 2, Vec3(0.4, 0.3, 0.2));
  const std::vector<double> ratios{0.25, 0.25, 0.25};
  const MeshHierarchy h = build_hierarchy(mesh, ratios, 11);
  REQUIRE(h.level_count() == 4);
  int n = mesh.vertex_count();
  CHECK(h.node_count(0) == n);
  for (size_t l = 0; l < ratios.size(); ++l) {
    const int expect = std::max(1, static_cast<int>(std::lround(ratios[l] * n)));
    CHECK(h.node_count(static_cast<int>(l) + 1) == expect);
    n = expect;
  }
  // level 0 is the identity over global vertex ids
  for (int i = 0; i < mesh.vertex_count(); ++i) CHECK(h.levels[0].verts[i] == i);
  for (int l = 1; l < h.level_count(); ++l) {
    const auto& prev = h.levels[l - 1].verts;
    const auto& tr = h.trans[l - 1];
    REQUIRE(static_cast<int>(tr.seeds.size()) == h.node_count(l));
    REQUIRE(static_cast<int>(tr.owner.size()) == h.node_count(l - 1));
    for (int p = 0; p < h.node_count(l); ++p) {
      // coarse verts are the seeds' global ids, in selection order
      CHECK(h.levels[l].verts[p] == prev[tr.seeds[p]]);
    }
    CHECK(h.levels[l].edges.node_count == h.node_count(l));
    CHECK(tr.clusters.coarse_count() == h.node_count(l));
    CHECK(tr.clusters.fine_count() == h.node_count(l - 1));
  }
}

TEST_CASE("hierarchy construction is seed-deterministic") {
  const TetMesh mesh = generate_bar_mesh(3, 2, 2, Vec3(0.3, 0.2, 0.2));
  const std::vector<double> ratios{0.3, 0.5};
  const MeshHierarchy a = build_hierarchy(mesh, ratios, 5);
  const MeshHierarchy b = build_hierarchy(mesh, ratios, 5);
  for (int l = 0; l < a.level_count(); ++l)
    CHECK(a.levels[l].verts == b.levels[l].verts);
  for (size_t t = 0; t < a.trans.size(); ++t) {
    CHECK(a.trans[t].seeds == b.trans[t].seeds);
    CHECK(a.trans[t].owner == b.trans[t].owner);
  }
  CHECK_THROWS_AS(build_hierarchy(mesh, {0.0}, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_hierarchy(mesh, {1.5}, 1), std::invalid_argument);
}
