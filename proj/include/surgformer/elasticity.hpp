#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "surgformer/mesh.hpp"
#include "surgformer/rng.hpp"
#include "surgformer/types.hpp"

namespace surgformer {

struct MaterialParams {
  double youngs = 2100.0;   // Pa
  double poisson = 0.45;

  double lame_lambda() const {
    return youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  }
  double lame_mu() const { return youngs / (2.0 * (1.0 + poisson)); }
  void validate() const;
};

/// Single prescribed-displacement interaction: node s is dragged by u_s.
struct BoundarySpec {
  int node = -1;
  Vec3 displacement = Vec3::Zero();
};

struct ResectionState {
  std::vector<uint8_t> tet_active;   // kept elements
  std::vector<uint8_t> cut_flags;    // phi < 0 per node
  std::vector<uint8_t> node_active;  // belongs to at least one kept element
};

/// 12x12 constant-strain stiffness of one tet for an isotropic material.
Eigen::Matrix<double, 12, 12> element_stiffness(const TetMesh& mesh, int tet,
                                                const MaterialParams& mat);

/// Global 3N x 3N stiffness over the active elements.
SpMatCol assemble_stiffness(const TetMesh& mesh, const MaterialParams& mat,
                            const std::vector<uint8_t>& tet_active);

enum class SolverKind { Auto, Direct, ConjugateGradient };

struct DirichletSolution {
  MatX3d displacement;
  // some active component carries no constraint; its nodes were zeroed
  bool unconstrained_component = false;
  int cg_iterations = 0;
};

/// Condenses the prescribed dofs out of K and solves the reduced SPD system,
/// directly for meshes up to 2000 nodes and by Jacobi-preconditioned
/// conjugate gradient (relative residual 1e-10) above that. Active components
/// that contain no prescribed node get zero displacement and raise the
/// warning flag; inactive nodes are zero.
DirichletSolution solve_dirichlet(const SpMatCol& K, const TetMesh& mesh,
                                  const std::vector<std::pair<int, Vec3>>& prescribed,
                                  const std::vector<uint8_t>& tet_active,
                                  SolverKind kind = SolverKind::Auto);

/// Signed magnitude of a tool displacement, in meters.
double draw_tool_magnitude(Rng& rng);

/// Uniform direction on the spherical cap of the given half-angle around
/// axis (unit).
Vec3 draw_cap_direction(const Vec3& axis, double half_angle, Rng& rng);

/// Uniform node among `admissible`, magnitude from draw_tool_magnitude,
/// direction on the pi/5 cap around the node's outward surface normal.
BoundarySpec sample_tool_interaction(const SurfaceInfo& surface,
                                     const std::vector<int>& admissible, Rng& rng);

/// Removes every element whose four vertices all have phi < 0; straddling
/// elements stay intact. cut_flags marks phi < 0 per node.
ResectionState apply_resection(const TetMesh& mesh, const Eigen::VectorXd& phi);

/// Active nodes implied by stored cut flags: an element is removed exactly
/// when all four flags are set.
std::vector<uint8_t> active_nodes_from_cut(const TetMesh& mesh,
                                           const std::vector<uint8_t>& cut_flags);

}  // namespace surgformer
