#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "surgformer/mesh.hpp"
#include "surgformer/types.hpp"

namespace surgformer {

/// Partition of a fine level into clusters, one per coarse node. Member lists
/// are stored ascending; every coarse node contains its own seed.
struct ClusterSet {
  std::vector<int> first;
  std::vector<int> count;
  std::vector<int> members;  // fine-local ids

  int coarse_count() const { return static_cast<int>(first.size()); }
  int fine_count() const { return static_cast<int>(members.size()); }

  static ClusterSet from_ownership(const std::vector<int>& owner, int n_coarse);
};

struct HierarchyLevel {
  std::vector<int> verts;  // global vertex ids, defines the level's row order
  EdgeList edges;
};

struct HierarchyTransition {
  std::vector<int> seeds;  // fine-local ids, in selection order
  std::vector<int> owner;  // fine-local -> coarse-local
  ClusterSet clusters;
};

struct MeshHierarchy {
  std::vector<HierarchyLevel> levels;      // L+1 entries
  std::vector<HierarchyTransition> trans;  // L entries

  int level_count() const { return static_cast<int>(levels.size()); }
  int node_count(int level) const {
    return static_cast<int>(levels[level].verts.size());
  }
};

/// Farthest point sampling: the first seed is drawn uniformly from rng_seed,
/// then each round adds the point maximizing the distance to the chosen set,
/// ties resolved to the smallest index.
std::vector<int> farthest_point_sampling(const MatX3d& points, int k,
                                         uint64_t rng_seed);
std::vector<int> farthest_point_sampling_from(const MatX3d& points, int k,
                                              int first_seed);

/// Assigns every node to the seed with minimum hop distance; ties resolved by
/// smaller Euclidean distance to the seed, then smaller seed node index.
/// Nodes unreachable from every seed fall back to the Euclidean-nearest seed
/// under the same tie rule. Returns coarse-local indices (positions in
/// `seeds`).
std::vector<int> ownership_map(const EdgeList& edges, const MatX3d& points,
                               const std::vector<int>& seeds);

/// Coarse graph: an edge (s, t) for every fine edge whose endpoints live in
/// distinct clusters, deduplicated, plus one self loop per coarse node.
EdgeList contract_edges(const EdgeList& fine, const std::vector<int>& owner,
                        int coarse_count);

/// Fixed multiresolution pyramid. Level sizes follow
/// N_{l+1} = max(1, round(ratio_l * N_l)).
MeshHierarchy build_hierarchy(const TetMesh& mesh,
                              const std::vector<double>& level_ratios,
                              uint64_t rng_seed);

/// Channelwise max over each cluster. argmax_out (optional) records, per
/// coarse node and channel, the fine row attaining the max; ties keep the
/// first member in list order.
template <typename S>
Mat<S> pool_max(const Mat<S>& x, const ClusterSet& clusters,
                Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>*
                    argmax_out = nullptr) {
  if (x.rows() != clusters.fine_count())
    throw std::invalid_argument("pool_max: row count does not match clusters");
  const int n_coarse = clusters.coarse_count();
  const int c = static_cast<int>(x.cols());
  Mat<S> y(n_coarse, c);
  if (argmax_out) argmax_out->resize(n_coarse, c);
  for (int s = 0; s < n_coarse; ++s) {
    if (clusters.count[s] <= 0)
      throw std::invalid_argument("pool_max: empty cluster");
    const int* m = clusters.members.data() + clusters.first[s];
    y.row(s) = x.row(m[0]);
    if (argmax_out)
      for (int j = 0; j < c; ++j) (*argmax_out)(s, j) = m[0];
    for (int k = 1; k < clusters.count[s]; ++k) {
      const int row = m[k];
      for (int j = 0; j < c; ++j) {
        if (x(row, j) > y(s, j)) {
          y(s, j) = x(row, j);
          if (argmax_out) (*argmax_out)(s, j) = row;
        }
      }
    }
  }
  return y;
}

/// Copies each coarse row to all fine rows it owns.
template <typename S>
Mat<S> unpool_broadcast(const Mat<S>& y, const std::vector<int>& owner) {
  Mat<S> x(static_cast<Eigen::Index>(owner.size()), y.cols());
  for (size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] < 0 || owner[i] >= y.rows())
      throw std::invalid_argument("unpool_broadcast: owner out of range");
    x.row(static_cast<Eigen::Index>(i)) = y.row(owner[i]);
  }
  return x;
}

}  // namespace surgformer
