#include "doctest.h"

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "surgformer/mesh.hpp"
#include "surgformer/model.hpp"
#include "surgformer/robust.hpp"
#include "surgformer/rng.hpp"

using namespace surgformer;
namespace ad = surgformer::ad;

namespace {

Eigen::SparseMatrix<double, Eigen::RowMajor> path_laplacian(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
  return graph_laplacian(EdgeList::from_pairs(n, pairs), n);
}

struct RobustFixture {
  TetMesh mesh;
  ModelConfig cfg;
  MeshHierarchy hier;
  SurfaceInfo surface;
  Mat<float> pos;
  Mat<float> bc;
  std::vector<uint8_t> no_cut;
  Eigen::SparseMatrix<float, Eigen::RowMajor> lap;

  RobustFixture() {
    mesh = generate_bar_mesh(2, 2, 1, Vec3(0.2, 0.2, 0.1));
    cfg.levels = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ff_hidden = 16;
    cfg.level_ratios = {0.5};
    cfg.global_levels = {1};
    hier = build_hierarchy(mesh, cfg.level_ratios, 1);
    surface = extract_surface(mesh);
    pos = mesh.vertices.cast<float>();
    bc = Mat<float>::Zero(mesh.vertex_count(), 1);
    for (int v : mesh.fixed_nodes) bc(v, 0) = 1.0f;
    no_cut.assign(mesh.vertex_count(), 0);
    lap = graph_laplacian(hier.levels[0].edges, mesh.vertex_count()).cast<float>();
  }
};

}  // namespace

TEST_CASE("roughness vanishes on constant fields and scales correctly") {
  const auto lap = path_laplacian(6);
  CHECK(dirichlet_roughness(Mat<double>::Constant(6, 3, 2.5), lap) == 0.0);

  Rng rng(1);
  Mat<double> u(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) u(i, j) = rng.normal();
  const double base = dirichlet_roughness(u, lap);
  CHECK(base > 0.0);
  // scale invariance up to the eps regularizer
  for (double c : {0.1, 3.0, 40.0}) {
    CHECK(dirichlet_roughness(Mat<double>(c * u), lap) ==
          doctest::Approx(base).epsilon(1e-5));
  }
  CHECK_THROWS_AS(dirichlet_roughness(Mat<double>::Zero(4, 3), lap),
                  std::invalid_argument);
}

TEST_CASE("laplacian eigenvectors read off their eigenvalue times node count") {
  // path over 3 nodes: eigenpairs (1, [1,0,-1]) and (3, [1,-2,1])
  const auto lap = path_laplacian(3);
  for (auto [lambda, a, b, c] :
       {std::tuple{1.0, 1.0, 0.0, -1.0}, {3.0, 1.0, -2.0, 1.0}}) {
    Mat<double> u = Mat<double>::Zero(3, 3);
    u(0, 0) = a;
    u(1, 0) = b;
    u(2, 0) = c;
    // for an eigenvector, num = lambda ||u||^2 and den = ||u||^2 / N
    CHECK(dirichlet_roughness(u, lap) ==
          doctest::Approx(lambda * 3.0).epsilon(1e-6));
  }
}

TEST_CASE("the tape roughness agrees with the plain version and differentiates") {
  const auto lap = path_laplacian(5);
  Rng rng(2);
  ad::ParamStore<double> ps;
  Mat<double> u(5, 3);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) u(i, j) = rng.normal();
  ps.add("u", u);

  ad::Tape<double> t;
  auto bound = ps.bind(t);
  ad::Value r = dirichlet_roughness(t, bound[0], lap, 1e-8);
  CHECK(t.value(r)(0, 0) == doctest::Approx(dirichlet_roughness(u, lap)).epsilon(1e-12));

  auto res = grad_check(
      [&](ad::Tape<double>& t2, const std::vector<ad::Value>& v) {
        return dirichlet_roughness(t2, v[0], lap, 1e-8);
      },
      ps, 1e-6, 3);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("kernels cover the hop ball on the surface with unit mass") {
  const TetMesh mesh = generate_bar_mesh(4, 3, 3, Vec3(0.4, 0.3, 0.3));
  const SurfaceInfo surface = extract_surface(mesh);
  const EdgeList edges = build_edges(mesh);
  // pick a surface anchor in the middle of a face
  int anchor = -1;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (surface.on_surface(v) && mesh.vertices(v, 0) > 0.05 &&
        mesh.vertices(v, 0) < 0.35)
      anchor = v;
  REQUIRE(anchor >= 0);

  for (int radius : {0, 1, 2}) {
    const AdvKernel k = build_adv_kernel(anchor, surface, edges, radius, 4.0);
    CHECK(k.anchor == anchor);
    double sum = 0.0;
    for (double w : k.weights) {
      CHECK(w > 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);

    // oracle support: BFS over the full graph, then surface intersection
    std::vector<int> hops(mesh.vertex_count(), -1);
    hops[anchor] = 0;
    std::vector<int> queue{anchor};
    for (size_t head = 0; head < queue.size(); ++head) {
      const int u = queue[head];
      if (hops[u] == radius) continue;
      for (int e = edges.first[u]; e < edges.first[u] + edges.count[u]; ++e) {
        const int v = edges.src[e];
        if (hops[v] < 0) {
          hops[v] = hops[u] + 1;
          queue.push_back(v);
        }
      }
    }
    std::set<int> want;
    for (int v = 0; v < mesh.vertex_count(); ++v)
      if (hops[v] >= 0 && surface.on_surface(v)) want.insert(v);
    CHECK(std::set<int>(k.nodes.begin(), k.nodes.end()) == want);
    if (radius == 0) {
      REQUIRE(k.nodes.size() == 1);
      CHECK(k.nodes[0] == anchor);
      CHECK(k.weights[0] == 1.0);
    }
  }

  // weights are uniform across a flat patch of identical normals
  const AdvKernel flat = build_adv_kernel(anchor, surface, edges, 1, 4.0);
  double w_equal = -1.0;
  for (size_t i = 0; i < flat.nodes.size(); ++i) {
    if ((surface.normal_of(flat.nodes[i]) - surface.normal_of(anchor)).norm() <
        1e-12) {
      if (w_equal < 0) w_equal = flat.weights[i];
      CHECK(flat.weights[i] == doctest::Approx(w_equal).epsilon(1e-12));
    }
  }

  // interior anchors are rejected: the 4x3x3 bar has interior nodes
  int interior = -1;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (!surface.on_surface(v)) interior = v;
  REQUIRE(interior >= 0);
  CHECK_THROWS_WITH_AS(build_adv_kernel(interior, surface, edges, 2, 4.0),
                       doctest::Contains("surface"), std::invalid_argument);
}

TEST_CASE("adversarial signals are rank one over the kernel support") {
  const TetMesh mesh = generate_bar_mesh(2, 2, 2, Vec3(0.2, 0.2, 0.2));
  const SurfaceInfo surface = extract_surface(mesh);
  const EdgeList edges = build_edges(mesh);
  const int anchor = surface.nodes[0];
  const AdvKernel k = build_adv_kernel(anchor, surface, edges, 1, 4.0);
  const Vec3 q(0.1, -0.05, 0.2);
  const Mat<float> s = adv_signal<float>(k, q, mesh.vertex_count());
  REQUIRE(s.rows() == mesh.vertex_count());
  std::set<int> support(k.nodes.begin(), k.nodes.end());
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    if (!support.count(v)) {
      CHECK(s.row(v).norm() == 0.0f);
      continue;
    }
    const size_t i = std::distance(k.nodes.begin(),
                                   std::find(k.nodes.begin(), k.nodes.end(), v));
    const Vec3 want = k.weights[i] * q;
    CHECK((s.row(v).cast<double>().transpose() - want).norm() < 1e-7);
  }
  CHECK(adv_signal<float>(k, Vec3::Zero(), mesh.vertex_count()).norm() == 0.0f);
}

TEST_CASE("ball projection clips exactly at the boundary") {
  CHECK(project_ball(Vec3(0.1, 0.0, 0.0), 0.2) == Vec3(0.1, 0.0, 0.0));
  const Vec3 big(3.0, 4.0, 0.0);  // norm 5
  const Vec3 p = project_ball(big, 0.2);
  CHECK(p.norm() == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(p.normalized().dot(big.normalized()) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("projected ascent never lowers the objective") {
  RobustFixture fx;
  const auto params = init_weights<float>(fx.cfg, 3);
  const AdvKernel kernel = build_adv_kernel(fx.surface.nodes[2], fx.surface,
                                            fx.hier.levels[0].edges, 2, 4.0);
  AdvConfig ac;
  ac.steps = 6;
  ac.alpha = 0.2;

  const AdvResult r = generate_adv_q(fx.cfg, params, fx.hier, kernel, fx.surface,
                                     fx.pos, fx.bc, fx.no_cut, fx.lap, ac);
  CHECK(r.roughness_final >= r.roughness_init);
  CHECK(r.q.norm() <= ac.alpha * (1.0 + 1e-12));
  CHECK(r.q.allFinite());

  // zero steps returns the initial half-budget normal push untouched
  AdvConfig none = ac;
  none.steps = 0;
  const AdvResult r0 = generate_adv_q(fx.cfg, params, fx.hier, kernel, fx.surface,
                                      fx.pos, fx.bc, fx.no_cut, fx.lap, none);
  const Vec3 want = project_ball(0.5 * ac.alpha * fx.surface.normal_of(kernel.anchor),
                                 ac.alpha);
  CHECK(r0.q == want);
  CHECK(r0.roughness_final == r0.roughness_init);
}

TEST_CASE("the adversary leaves model parameters bit-identical") {
  RobustFixture fx;
  const auto params = init_weights<float>(fx.cfg, 5);
  std::vector<Mat<float>> before;
  for (int p = 0; p < params.size(); ++p) before.push_back(params.value(p));

  AdvConfig ac;
  ac.count = 3;
  ac.steps = 4;
  const AdvSet set = generate_adv_set(fx.cfg, params, fx.hier, fx.mesh, ac);
  REQUIRE(static_cast<int>(set.results.size()) == ac.count);
  for (int p = 0; p < params.size(); ++p) CHECK(params.value(p) == before[p]);
  for (const AdvResult& r : set.results)
    CHECK(r.roughness_final >= r.roughness_init);
}

TEST_CASE("the adversarial set is seed-deterministic and thread-invariant") {
  RobustFixture fx;
  const auto params = init_weights<float>(fx.cfg, 7);
  AdvConfig ac;
  ac.count = 4;
  ac.steps = 3;
  ac.seed = 9;
  const AdvSet a = generate_adv_set(fx.cfg, params, fx.hier, fx.mesh, ac);
  ac.threads = 3;
  const AdvSet b = generate_adv_set(fx.cfg, params, fx.hier, fx.mesh, ac);
  for (int i = 0; i < ac.count; ++i) {
    CHECK(a.kernels[i].anchor == b.kernels[i].anchor);
    CHECK(a.results[i].q == b.results[i].q);
    CHECK(a.results[i].roughness_final == b.results[i].roughness_final);
  }
  CHECK_THROWS_AS([&] {
    AdvConfig bad;
    bad.alpha = 0.0;
    bad.validate();
  }(), std::invalid_argument);
}
