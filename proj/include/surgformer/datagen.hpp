#pragma once

#include <cstdint>
#include <vector>

#include "surgformer/dataset.hpp"
#include "surgformer/elasticity.hpp"
#include "surgformer/mesh.hpp"

namespace surgformer {

/// Progressive planar resection: state k removes the slab deeper than a
/// threshold that advances with k along the plane normal, so later states
/// strictly contain earlier ones.
struct CutConfig {
  double fraction = 0.0;            // probability that a sample is cut
  int states = 0;
  Vec3 plane_normal = Vec3(1, 0, 0);
  double max_depth = 0.4;           // deepest state, as a fraction of the span
};

struct DataGenConfig {
  int samples = 0;
  uint64_t seed = 1;
  CutConfig cut;
  MaterialParams material;
  SolverKind solver = SolverKind::Auto;
  int threads = 1;
};

struct DataGenStats {
  int written = 0;
  int skipped = 0;
  std::vector<int> per_state;  // index 0 = uncut, then one per cut state
};

/// Node level set for cut state `state` (0-based); phi < 0 marks removal.
Eigen::VectorXd resection_level_set(const TetMesh& mesh, const CutConfig& cut,
                                    int state);

/// Solves one tool interaction per sample with the linear FEM oracle.
/// Per-sample rng streams make the output independent of threading; samples
/// whose solve fails are skipped and counted.
DataGenStats generate_dataset(const TetMesh& mesh, const DataGenConfig& cfg,
                              DatasetFile& out);

}  // namespace surgformer
