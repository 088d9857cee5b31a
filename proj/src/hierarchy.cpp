#include "surgformer/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "surgformer/rng.hpp"

namespace surgformer {

ClusterSet ClusterSet::from_ownership(const std::vector<int>& owner, int n_coarse) {
  ClusterSet c;
  c.first.assign(n_coarse, 0);
  c.count.assign(n_coarse, 0);
  for (int o : owner) {
    if (o < 0 || o >= n_coarse)
      throw std::invalid_argument("ClusterSet: owner index out of range");
    c.count[o]++;
  }
  for (int s = 1; s < n_coarse; ++s) c.first[s] = c.first[s - 1] + c.count[s - 1];
  std::vector<int> cursor = c.first;
  c.members.resize(owner.size());
  for (size_t i = 0; i < owner.size(); ++i) c.members[cursor[owner[i]]++] = static_cast<int>(i);
  return c;
}

std::vector<int> farthest_point_sampling_from(const MatX3d& points, int k,
                                              int first_seed) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || k > n)
    throw std::invalid_argument("fps: k must be in [1, point count]");
  if (first_seed < 0 || first_seed >= n)
    throw std::invalid_argument("fps: first seed out of range");

  std::vector<int> seeds;
  seeds.reserve(k);
  seeds.push_back(first_seed);
  // squared distance to the selected set, updated incrementally
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i)
    d2[i] = (points.row(i) - points.row(first_seed)).squaredNorm();

  while (static_cast<int>(seeds.size()) < k) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (d2[i] > d2[best]) best = i;  // strict > keeps the smallest index
    seeds.push_back(best);
    for (int i = 0; i < n; ++i) {
      const double nd = (points.row(i) - points.row(best)).squaredNorm();
      if (nd < d2[i]) d2[i] = nd;
    }
  }
  return seeds;
}

std::vector<int> farthest_point_sampling(const MatX3d& points, int k,
                                         uint64_t rng_seed) {
  Rng rng(rng_seed);
  const int n = static_cast<int>(points.rows());
  if (n == 0) throw std::invalid_argument("fps: empty point set");
  return farthest_point_sampling_from(points, k, rng.uniform_int(n));
}

namespace {

// (squared Euclidean distance to seed, seed node index); the ownership tie
// order among seeds at equal hop distance
struct SeedKey {
  double d2;
  int seed;
  bool operator<(const SeedKey& o) const {
    if (d2 != o.d2) return d2 < o.d2;
    return seed < o.seed;
  }
};

}  // namespace

std::vector<int> ownership_map(const EdgeList& edges, const MatX3d& points,
                               const std::vector<int>& seeds) {
  const int n = edges.node_count;
  if (points.rows() != n)
    throw std::invalid_argument("ownership: point/edge node count mismatch");
  if (seeds.empty()) throw std::invalid_argument("ownership: no seeds");

  std::vector<int> seed_pos(n, -1);  // node -> position in seeds list
  for (size_t p = 0; p < seeds.size(); ++p) {
    if (seeds[p] < 0 || seeds[p] >= n)
      throw std::invalid_argument("ownership: seed out of range");
    if (seed_pos[seeds[p]] >= 0)
      throw std::invalid_argument("ownership: duplicate seed");
    seed_pos[seeds[p]] = static_cast<int>(p);
  }

  // Hop distance to the seed set as a whole.
  constexpr int kInf = std::numeric_limits<int>::max();
  std::vector<int> dist(n, kInf);
  std::vector<int> queue;
  queue.reserve(n);
  for (int s : seeds) {
    dist[s] = 0;
    queue.push_back(s);
  }
  for (size_t head = 0; head < queue.size(); ++head) {
    const int u = queue[head];
    for (int e = edges.first[u]; e < edges.first[u] + edges.count[u]; ++e) {
      const int v = edges.src[e];
      if (v == u || dist[v] != kInf) continue;
      dist[v] = dist[u] + 1;
      queue.push_back(v);
    }
  }

  // A node can sit at equal hop distance from several seeds, and the tie
  // order depends on the node itself, so the full attaining seed set is
  // propagated level by level (union over predecessors one hop closer).
  std::vector<std::vector<int>> attain(n);
  for (int s : seeds) attain[s] = {s};
  // queue is already sorted by dist; predecessors are finished before their
  // successors
  std::vector<int> merged;
  for (size_t head = 0; head < queue.size(); ++head) {
    const int v = queue[head];
    if (dist[v] == 0) continue;
    merged.clear();
    for (int e = edges.first[v]; e < edges.first[v] + edges.count[v]; ++e) {
      const int u = edges.src[e];
      if (u == v || dist[u] != dist[v] - 1) continue;
      merged.insert(merged.end(), attain[u].begin(), attain[u].end());
    }
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    attain[v] = merged;
  }

  auto key_of = [&](int node, int seed) {
    return SeedKey{(points.row(node) - points.row(seed)).squaredNorm(), seed};
  };

  std::vector<int> owner(n, -1);
  for (int v = 0; v < n; ++v) {
    if (dist[v] == kInf) {
      // unreachable: globally Euclidean-nearest seed, same tie order
      SeedKey best = key_of(v, seeds[0]);
      for (size_t p = 1; p < seeds.size(); ++p) {
        SeedKey cand = key_of(v, seeds[p]);
        if (cand < best) best = cand;
      }
      owner[v] = seed_pos[best.seed];
      continue;
    }
    SeedKey best = key_of(v, attain[v][0]);
    for (size_t a = 1; a < attain[v].size(); ++a) {
      SeedKey cand = key_of(v, attain[v][a]);
      if (cand < best) best = cand;
    }
    owner[v] = seed_pos[best.seed];
  }
  return owner;
}

EdgeList contract_edges(const EdgeList& fine, const std::vector<int>& owner,
                        int coarse_count) {
  if (static_cast<int>(owner.size()) != fine.node_count)
    throw std::invalid_argument("contract: owner size mismatch");
  std::vector<std::pair<int, int>> pairs;
  for (int e = 0; e < fine.edge_count(); ++e) {
    const int s = owner[fine.src[e]], t = owner[fine.rcv[e]];
    if (s == t) continue;
    pairs.emplace_back(std::min(s, t), std::max(s, t));
  }
  return EdgeList::from_pairs(coarse_count, std::move(pairs));
}

MeshHierarchy build_hierarchy(const TetMesh& mesh,
                              const std::vector<double>& level_ratios,
                              uint64_t rng_seed) {
  for (double r : level_ratios)
    if (!(r > 0.0 && r <= 1.0))
      throw std::invalid_argument("hierarchy: ratios must lie in (0, 1]");

  MeshHierarchy h;
  HierarchyLevel base;
  base.verts.resize(mesh.vertex_count());
  for (int i = 0; i < mesh.vertex_count(); ++i) base.verts[i] = i;
  base.edges = build_edges(mesh);
  h.levels.push_back(std::move(base));

  Rng rng(rng_seed);
  MatX3d pts = mesh.vertices;
  for (double ratio : level_ratios) {
    const auto& cur = h.levels.back();
    const int n = static_cast<int>(cur.verts.size());
    const int k = std::max(1, static_cast<int>(std::lround(ratio * n)));

    HierarchyTransition t;
    t.seeds = farthest_point_sampling_from(pts, k, rng.uniform_int(n));
    t.owner = ownership_map(cur.edges, pts, t.seeds);
    t.clusters = ClusterSet::from_ownership(t.owner, k);

    HierarchyLevel next;
    next.verts.resize(k);
    MatX3d next_pts(k, 3);
    for (int p = 0; p < k; ++p) {
      next.verts[p] = cur.verts[t.seeds[p]];
      next_pts.row(p) = pts.row(t.seeds[p]);
    }
    next.edges = contract_edges(cur.edges, t.owner, k);

    h.trans.push_back(std::move(t));
    h.levels.push_back(std::move(next));
    pts = std::move(next_pts);
  }
  return h;
}

}  // namespace surgformer
