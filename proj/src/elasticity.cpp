#include "surgformer/elasticity.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace surgformer {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

constexpr double kMinVolume = 1e-14;  // m^3

struct ElementGeometry {
  double volume;
  Eigen::Matrix<double, 4, 3> grads;  // shape function gradients, one row per corner
};

ElementGeometry element_geometry(const TetMesh& mesh, int tet) {
  const Vec3 x0 = mesh.vertices.row(mesh.tets(tet, 0));
  Eigen::Matrix3d dm;
  for (int k = 0; k < 3; ++k)
    dm.col(k) = Vec3(mesh.vertices.row(mesh.tets(tet, k + 1))) - x0;
  const double det = dm.determinant();
  ElementGeometry g;
  g.volume = det / 6.0;
  if (g.volume < kMinVolume)
    fail("stiffness: element " + std::to_string(tet) + " has volume " +
         std::to_string(g.volume) + " below " + std::to_string(kMinVolume));
  const Eigen::Matrix3d inv = dm.inverse();
  for (int k = 0; k < 3; ++k) g.grads.row(k + 1) = inv.row(k);
  g.grads.row(0) = -(g.grads.row(1) + g.grads.row(2) + g.grads.row(3));
  return g;
}

// disjoint-set over nodes, used to find connected pieces of the active domain
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

void MaterialParams::validate() const {
  if (youngs <= 0.0) fail("material: Young's modulus must be positive");
  if (!(poisson > -1.0 && poisson < 0.5))
    fail("material: Poisson ratio must lie in (-1, 0.5)");
}

Eigen::Matrix<double, 12, 12> element_stiffness(const TetMesh& mesh, int tet,
                                                const MaterialParams& mat) {
  mat.validate();
  const ElementGeometry g = element_geometry(mesh, tet);
  const double la = mat.lame_lambda(), mu = mat.lame_mu();

  // K[3i+a, 3j+b] = V (lambda gi_a gj_b + mu gi_b gj_a + mu delta_ab gi.gj)
  Eigen::Matrix<double, 12, 12> k;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const Vec3 gi = g.grads.row(i), gj = g.grads.row(j);
      const double dot = gi.dot(gj);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          k(3 * i + a, 3 * j + b) =
              g.volume *
              (la * gi[a] * gj[b] + mu * gi[b] * gj[a] + (a == b ? mu * dot : 0.0));
    }
  }
  return k;
}

SpMatCol assemble_stiffness(const TetMesh& mesh, const MaterialParams& mat,
                            const std::vector<uint8_t>& tet_active) {
  if (static_cast<int>(tet_active.size()) != mesh.tet_count())
    fail("stiffness: active mask size mismatch");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(mesh.tet_count()) * 144);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    if (!tet_active[t]) continue;
    const auto k = element_stiffness(mesh, t, mat);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            trip.emplace_back(3 * mesh.tets(t, i) + a, 3 * mesh.tets(t, j) + b,
                              k(3 * i + a, 3 * j + b));
  }
  SpMatCol K(3 * mesh.vertex_count(), 3 * mesh.vertex_count());
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

DirichletSolution solve_dirichlet(const SpMatCol& K, const TetMesh& mesh,
                                  const std::vector<std::pair<int, Vec3>>& prescribed,
                                  const std::vector<uint8_t>& tet_active,
                                  SolverKind kind) {
  const int n = mesh.vertex_count();
  if (K.rows() != 3 * n || K.cols() != 3 * n) fail("solve: K size mismatch");
  if (static_cast<int>(tet_active.size()) != mesh.tet_count())
    fail("solve: active mask size mismatch");

  std::vector<uint8_t> node_active(n, 0);
  UnionFind uf(n);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    if (!tet_active[t]) continue;
    for (int k = 0; k < 4; ++k) {
      node_active[mesh.tets(t, k)] = 1;
      uf.unite(mesh.tets(t, 0), mesh.tets(t, k));
    }
  }

  std::vector<int> prescribed_at(n, -1);
  for (size_t p = 0; p < prescribed.size(); ++p) {
    const int v = prescribed[p].first;
    if (v < 0 || v >= n) fail("solve: prescribed node out of range");
    if (prescribed_at[v] >= 0) fail("solve: node prescribed twice");
    prescribed_at[v] = static_cast<int>(p);
  }

  // components holding at least one prescribed active node are solvable
  std::vector<uint8_t> comp_constrained(n, 0);
  for (const auto& [v, u] : prescribed)
    if (node_active[v]) comp_constrained[uf.find(v)] = 1;

  DirichletSolution sol;
  sol.displacement = MatX3d::Zero(n, 3);

  std::vector<int> free_of(3 * n, -1);
  std::vector<int> free_dofs;
  for (int v = 0; v < n; ++v) {
    if (!node_active[v]) continue;
    if (!comp_constrained[uf.find(v)]) {
      sol.unconstrained_component = true;
      continue;
    }
    if (prescribed_at[v] >= 0) {
      sol.displacement.row(v) = prescribed[prescribed_at[v]].second;
      continue;
    }
    for (int c = 0; c < 3; ++c) {
      free_of[3 * v + c] = static_cast<int>(free_dofs.size());
      free_dofs.push_back(3 * v + c);
    }
  }

  const int nf = static_cast<int>(free_dofs.size());
  if (nf == 0) return sol;

  // reduced system and the coupling of free dofs to prescribed values
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf);
  for (int col = 0; col < K.outerSize(); ++col) {
    const int vc = col / 3;
    const int fc = free_of[col];
    const bool col_prescribed = prescribed_at[vc] >= 0 && node_active[vc];
    const double uc =
        col_prescribed ? prescribed[prescribed_at[vc]].second[col % 3] : 0.0;
    for (SpMatCol::InnerIterator it(K, col); it; ++it) {
      const int fr = free_of[static_cast<int>(it.row())];
      if (fr < 0) continue;
      if (fc >= 0)
        trip.emplace_back(fr, fc, it.value());
      else if (col_prescribed && uc != 0.0)
        rhs[fr] -= it.value() * uc;
    }
  }
  SpMatCol kff(nf, nf);
  kff.setFromTriplets(trip.begin(), trip.end());

  Eigen::VectorXd u(nf);
  const bool direct =
      kind == SolverKind::Direct || (kind == SolverKind::Auto && n <= 2000);
  if (direct) {
    Eigen::SimplicialLDLT<SpMatCol> ldlt(kff);
    if (ldlt.info() != Eigen::Success)
      fail("solve: factorization failed (singular reduced system)");
    u = ldlt.solve(rhs);
  } else {
    Eigen::ConjugateGradient<SpMatCol, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>>
        cg(kff);
    cg.setTolerance(1e-10);
    cg.setMaxIterations(20LL * nf);
    u = cg.solve(rhs);
    sol.cg_iterations = static_cast<int>(cg.iterations());
    if (cg.info() != Eigen::Success)
      fail("solve: conjugate gradient did not reach 1e-10 within " +
           std::to_string(20LL * nf) + " iterations");
  }

  for (int f = 0; f < nf; ++f)
    sol.displacement(free_dofs[f] / 3, free_dofs[f] % 3) = u[f];
  return sol;
}

double draw_tool_magnitude(Rng& rng) { return rng.uniform(-0.030, 0.070); }

Vec3 draw_cap_direction(const Vec3& axis, double half_angle, Rng& rng) {
  // orthonormal frame around the axis
  const int small = std::abs(axis.x()) <= std::abs(axis.y())
                        ? (std::abs(axis.x()) <= std::abs(axis.z()) ? 0 : 2)
                        : (std::abs(axis.y()) <= std::abs(axis.z()) ? 1 : 2);
  Vec3 helper = Vec3::Zero();
  helper[small] = 1.0;
  const Vec3 t1 = axis.cross(helper).normalized();
  const Vec3 t2 = axis.cross(t1);

  const double cos_min = std::cos(half_angle);
  const double c = 1.0 - rng.uniform() * (1.0 - cos_min);  // uniform on the cap
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  return (std::cos(phi) * t1 + std::sin(phi) * t2) * s + c * axis;
}

BoundarySpec sample_tool_interaction(const SurfaceInfo& surface,
                                     const std::vector<int>& admissible, Rng& rng) {
  if (admissible.empty()) fail("tool sampling: no admissible surface nodes");
  BoundarySpec bc;
  bc.node = admissible[rng.uniform_int(static_cast<int>(admissible.size()))];
  if (!surface.on_surface(bc.node))
    fail("tool sampling: node " + std::to_string(bc.node) + " is not on the surface");
  const double magnitude = draw_tool_magnitude(rng);
  const Vec3 dir =
      draw_cap_direction(surface.normal_of(bc.node), std::numbers::pi / 5.0, rng);
  bc.displacement = magnitude * dir;
  return bc;
}

ResectionState apply_resection(const TetMesh& mesh, const Eigen::VectorXd& phi) {
  if (phi.size() != mesh.vertex_count()) fail("resection: phi size mismatch");
  ResectionState r;
  r.cut_flags.resize(mesh.vertex_count());
  for (int v = 0; v < mesh.vertex_count(); ++v) r.cut_flags[v] = phi[v] < 0.0 ? 1 : 0;
  r.tet_active.assign(mesh.tet_count(), 0);
  r.node_active.assign(mesh.vertex_count(), 0);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    bool removed = true;
    for (int k = 0; k < 4; ++k) removed = removed && r.cut_flags[mesh.tets(t, k)];
    r.tet_active[t] = removed ? 0 : 1;
    if (!removed)
      for (int k = 0; k < 4; ++k) r.node_active[mesh.tets(t, k)] = 1;
  }
  return r;
}

std::vector<uint8_t> active_nodes_from_cut(const TetMesh& mesh,
                                           const std::vector<uint8_t>& cut_flags) {
  if (static_cast<int>(cut_flags.size()) != mesh.vertex_count())
    fail("active nodes: flag size mismatch");
  std::vector<uint8_t> active(mesh.vertex_count(), 0);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    bool removed = true;
    for (int k = 0; k < 4; ++k) removed = removed && cut_flags[mesh.tets(t, k)];
    if (!removed)
      for (int k = 0; k < 4; ++k) active[mesh.tets(t, k)] = 1;
  }
  return active;
}

}  // namespace surgformer
