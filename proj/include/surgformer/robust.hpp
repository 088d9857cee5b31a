#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "surgformer/autodiff.hpp"
#include "surgformer/mesh.hpp"
#include "surgformer/model.hpp"
#include "surgformer/parallel.hpp"
#include "surgformer/rng.hpp"
#include "surgformer/types.hpp"

namespace surgformer {

struct AdvConfig {
  double alpha = 0.2;      // L2 budget of the signal vector
  int steps = 10;          // ascent iterations
  double step_size = 0.0;  // <= 0 means alpha / 4
  int radius = 2;          // hop radius of the signal footprint
  double concentration = 4.0;
  double lambda = 0.1;  // roughness penalty weight during fine-tuning
  int count = 256;      // adversarial signals to generate
  uint64_t seed = 1;
  int threads = 1;

  double effective_step() const { return step_size > 0.0 ? step_size : alpha / 4.0; }
  void validate() const {
    if (alpha <= 0.0) throw std::invalid_argument("adv: alpha must be positive");
    if (steps < 0) throw std::invalid_argument("adv: steps must be >= 0");
    if (radius < 0) throw std::invalid_argument("adv: radius must be >= 0");
    if (count < 1) throw std::invalid_argument("adv: count must be >= 1");
  }
};

/// Roughness of a field over the graph: Laplacian quadratic form divided by
/// the mean squared row magnitude. Zero for constant fields on connected
/// graphs; invariant to scaling up to the eps term.
template <typename Derived, typename S>
double dirichlet_roughness(const Eigen::MatrixBase<Derived>& u,
                           const Eigen::SparseMatrix<S, Eigen::RowMajor>& lap,
                           double eps = 1e-8) {
  if (u.rows() != lap.rows())
    throw std::invalid_argument("roughness: field rows do not match the graph");
  const Mat<double> ud = u.template cast<double>();
  const Eigen::SparseMatrix<double, Eigen::RowMajor> ld =
      lap.template cast<double>();
  const double num = (ud.array() * (ld * ud).array()).sum();
  const double den = ud.squaredNorm() / static_cast<double>(ud.rows()) + eps;
  return num / den;
}

/// Tape version of the roughness metric, differentiable through u.
template <typename S>
ad::Value dirichlet_roughness(ad::Tape<S>& t, ad::Value u,
                              const Eigen::SparseMatrix<S, Eigen::RowMajor>& lap,
                              S eps) {
  // read the row count before recording anything: appending slots may
  // reallocate the tape and invalidate references into it
  const S inv_rows = S(1) / static_cast<S>(t.value(u).rows());
  ad::Value num = ad::sum_all(t, ad::elementwise_mul(t, u, ad::sparse_sym_apply(t, lap, u)));
  ad::Value den = ad::add_const(
      t, ad::scale(t, ad::sum_all(t, ad::elementwise_mul(t, u, u)), inv_rows), eps);
  return ad::div_scalar(t, num, den);
}

/// Normalized bump kernel anchored at a surface node: support is the anchor's
/// r-hop graph neighborhood intersected with the surface, weighted by how
/// well each node's outward normal aligns with the anchor's.
struct AdvKernel {
  int anchor = -1;
  std::vector<int> nodes;      // ascending support indices
  std::vector<double> weights;  // same order, nonnegative, sums to 1

  Vec<double> kernel_column(int n) const {
    Vec<double> col = Vec<double>::Zero(n);
    for (size_t i = 0; i < nodes.size(); ++i) col[nodes[i]] = weights[i];
    return col;
  }
};

inline AdvKernel build_adv_kernel(int anchor, const SurfaceInfo& surface,
                                  const EdgeList& edges, int radius,
                                  double concentration) {
  if (anchor < 0 || anchor >= edges.node_count || !surface.on_surface(anchor))
    throw std::invalid_argument("adv: anchor node " + std::to_string(anchor) +
                                " is not on the surface");
  std::vector<int> hops(edges.node_count, -1);
  std::deque<int> queue{anchor};
  hops[anchor] = 0;
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    if (hops[i] == radius) continue;
    for (int e = edges.first[i]; e < edges.first[i] + edges.count[i]; ++e) {
      const int j = edges.src[e];
      if (hops[j] < 0) {
        hops[j] = hops[i] + 1;
        queue.push_back(j);
      }
    }
  }
  AdvKernel k;
  k.anchor = anchor;
  const Vec3 n_anchor = surface.normal_of(anchor);
  double total = 0.0;
  for (int i = 0; i < edges.node_count; ++i) {
    if (hops[i] < 0 || !surface.on_surface(i)) continue;
    const double w = std::exp(concentration * surface.normal_of(i).dot(n_anchor));
    k.nodes.push_back(i);
    k.weights.push_back(w);
    total += w;
  }
  for (double& w : k.weights) w /= total;
  return k;
}

/// Rank-one tool-signal field: row i carries weight_i * q.
template <typename S>
Mat<S> adv_signal(const AdvKernel& kernel, const Vec3& q, int n) {
  Mat<S> s = Mat<S>::Zero(n, 3);
  for (size_t i = 0; i < kernel.nodes.size(); ++i)
    s.row(kernel.nodes[i]) = (kernel.weights[i] * q).transpose().cast<S>();
  return s;
}

inline Vec3 project_ball(const Vec3& q, double alpha) {
  const double norm = q.norm();
  return norm > alpha ? Vec3(q * (alpha / norm)) : q;
}

struct AdvResult {
  Vec3 q = Vec3::Zero();
  double roughness_init = 0.0;
  double roughness_final = 0.0;
};

namespace detail {

/// Forward pass with the tool channel replaced by kernel * q^T; returns model
/// roughness and optionally the gradient with respect to q.
inline double adv_objective(const ModelConfig& cfg, const ad::ParamStore<float>& params,
                            const MeshHierarchy& h, const AdvKernel& kernel,
                            const Mat<float>& pos, const Mat<float>& bc,
                            const std::vector<uint8_t>& cut_flags,
                            const Eigen::SparseMatrix<float, Eigen::RowMajor>& lap,
                            const Vec3& q, Vec3* grad_out) {
  ad::Tape<float> t;
  auto bm = bind_model(t, cfg, params);
  Mat<float> qrow(1, 3);
  qrow << static_cast<float>(q[0]), static_cast<float>(q[1]), static_cast<float>(q[2]);
  ad::Value qv = t.leaf(qrow);
  ad::Value col = t.leaf(Mat<float>(kernel.kernel_column(pos.rows()).cast<float>()));
  ad::Value raw = ad::concat_channels(
      t, {t.leaf(pos), ad::matmul(t, col, qv), t.leaf(bc)});
  ad::Value pred = model_forward_on(t, bm, h, raw, cut_flags);
  ad::Value rough = dirichlet_roughness(t, pred, lap, 1e-8f);
  const double value = t.value(rough)(0, 0);
  if (grad_out) {
    t.backward(rough);
    const Mat<float>& g = t.grad(qv);
    *grad_out = Vec3(g(0, 0), g(0, 1), g(0, 2));
  }
  return value;
}

}  // namespace detail

/// Projected gradient ascent on the prediction roughness over the signal
/// vector q, with the footprint fixed. Model parameters only ever receive
/// tape-local gradients, so they are bit-identical before and after. Each
/// accepted step never lowers the objective (step halving on decrease), so
/// the final roughness is >= the initial one.
inline AdvResult generate_adv_q(const ModelConfig& cfg,
                                const ad::ParamStore<float>& params,
                                const MeshHierarchy& h, const AdvKernel& kernel,
                                const SurfaceInfo& surface, const Mat<float>& pos,
                                const Mat<float>& bc,
                                const std::vector<uint8_t>& cut_flags,
                                const Eigen::SparseMatrix<float, Eigen::RowMajor>& lap,
                                const AdvConfig& ac) {
  ac.validate();
  AdvResult r;
  r.q = project_ball(0.5 * ac.alpha * surface.normal_of(kernel.anchor), ac.alpha);
  auto objective = [&](const Vec3& q, Vec3* g) {
    return detail::adv_objective(cfg, params, h, kernel, pos, bc, cut_flags, lap, q, g);
  };
  double current = objective(r.q, nullptr);
  r.roughness_init = current;

  for (int it = 0; it < ac.steps; ++it) {
    Vec3 grad;
    objective(r.q, &grad);
    if (!grad.allFinite())
      throw std::runtime_error("adv: non-finite gradient at anchor " +
                               std::to_string(kernel.anchor) + ", iteration " +
                               std::to_string(it));
    double step = ac.effective_step();
    bool accepted = false;
    for (int halvings = 0; halvings < 20; ++halvings) {
      const Vec3 cand = project_ball(r.q + step * grad, ac.alpha);
      if (cand.norm() > ac.alpha * (1.0 + 1e-12))
        throw std::logic_error("adv: projection left the ball");
      const double value = objective(cand, nullptr);
      if (value >= current) {
        r.q = cand;
        current = value;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // objective locally flat; further steps cannot help
  }
  r.roughness_final = current;
  return r;
}

/// Batch adversary: sample anchors uniformly from the surface, run one PGA
/// per anchor (optionally in parallel; results are slot-deterministic).
struct AdvSet {
  std::vector<AdvKernel> kernels;
  std::vector<AdvResult> results;
};

inline AdvSet generate_adv_set(const ModelConfig& cfg,
                               const ad::ParamStore<float>& params,
                               const MeshHierarchy& h, const TetMesh& mesh,
                               const AdvConfig& ac) {
  ac.validate();
  const SurfaceInfo surface = extract_surface(mesh);
  if (surface.nodes.empty()) throw std::invalid_argument("adv: mesh has no surface");
  const int n = mesh.vertex_count();

  Mat<float> pos = mesh.vertices.cast<float>();
  Mat<float> bc = Mat<float>::Zero(n, 1);
  for (int i : mesh.fixed_nodes) bc(i, 0) = 1.0f;
  const std::vector<uint8_t> no_cut(n, 0);
  const Eigen::SparseMatrix<float, Eigen::RowMajor> lap =
      graph_laplacian(h.levels[0].edges, n).cast<float>();

  Rng rng(ac.seed);
  AdvSet set;
  set.kernels.reserve(ac.count);
  for (int i = 0; i < ac.count; ++i) {
    const int anchor =
        surface.nodes[rng.uniform_int(static_cast<int>(surface.nodes.size()))];
    set.kernels.push_back(
        build_adv_kernel(anchor, surface, h.levels[0].edges, ac.radius, ac.concentration));
  }
  set.results.resize(ac.count);
  run_indexed(ac.count, ac.threads, [&](int i) {
    set.results[i] = generate_adv_q(cfg, params, h, set.kernels[i], surface, pos, bc,
                                    no_cut, lap, ac);
  });
  return set;
}

}  // namespace surgformer
