#include "surgformer/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <stdexcept>
#include <thread>

namespace surgformer {

namespace {

struct StateContext {
  ResectionState resection;
  SurfaceInfo surface;
  SpMatCol stiffness;
  std::vector<int> admissible;
  std::vector<std::pair<int, Vec3>> fixed_zero;
};

// surface nodes that are draggable: not fixed, and connected through active
// elements to at least one fixed node so the solve is well posed
std::vector<int> admissible_nodes(const TetMesh& mesh, const SurfaceInfo& surface,
                                  const std::vector<uint8_t>& tet_active) {
  std::vector<int> parent(mesh.vertex_count());
  for (int i = 0; i < mesh.vertex_count(); ++i) parent[i] = i;
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (int t = 0; t < mesh.tet_count(); ++t) {
    if (!tet_active[t]) continue;
    for (int k = 1; k < 4; ++k)
      parent[find(mesh.tets(t, k))] = find(mesh.tets(t, 0));
  }
  std::vector<uint8_t> anchored(mesh.vertex_count(), 0);
  for (int f : mesh.fixed_nodes) anchored[find(f)] = 1;

  std::vector<int> nodes;
  for (int v : surface.nodes)
    if (!mesh.is_fixed(v) && anchored[find(v)]) nodes.push_back(v);
  return nodes;
}

StateContext make_context(const TetMesh& mesh, const DataGenConfig& cfg,
                          const std::vector<uint8_t>& tet_active,
                          ResectionState resection) {
  StateContext ctx;
  ctx.resection = std::move(resection);
  ctx.surface = extract_surface(mesh, tet_active);
  ctx.stiffness = assemble_stiffness(mesh, cfg.material, tet_active);
  ctx.admissible = admissible_nodes(mesh, ctx.surface, tet_active);
  for (int f : mesh.fixed_nodes) ctx.fixed_zero.emplace_back(f, Vec3::Zero());
  return ctx;
}

}  // namespace

Eigen::VectorXd resection_level_set(const TetMesh& mesh, const CutConfig& cut,
                                    int state) {
  if (state < 0 || state >= cut.states)
    throw std::invalid_argument("resection: state out of range");
  const Vec3 n = cut.plane_normal.normalized();
  Eigen::VectorXd s = mesh.vertices * n;
  const double lo = s.minCoeff(), hi = s.maxCoeff();
  const double depth = cut.max_depth * (state + 1) / cut.states;
  const double threshold = hi - depth * (hi - lo);
  // phi < 0 past the threshold: deeper states remove strictly more
  return Eigen::VectorXd::Constant(s.size(), threshold) - s;
}

DataGenStats generate_dataset(const TetMesh& mesh, const DataGenConfig& cfg,
                              DatasetFile& out) {
  if (cfg.samples < 1) throw std::invalid_argument("datagen: samples must be >= 1");
  if (cfg.cut.fraction > 0.0 && cfg.cut.states < 1)
    throw std::invalid_argument("datagen: cut fraction needs cut states");
  if (mesh.fixed_nodes.empty())
    throw std::invalid_argument("datagen: mesh has no fixed nodes");
  cfg.material.validate();

  const int n = mesh.vertex_count();
  std::vector<StateContext> contexts;  // 0 = uncut, 1.. = cut states
  {
    ResectionState uncut;
    uncut.tet_active.assign(mesh.tet_count(), 1);
    uncut.cut_flags.assign(n, 0);
    uncut.node_active.assign(n, 1);
    auto active = uncut.tet_active;  // keep valid across the move
    contexts.push_back(make_context(mesh, cfg, active, std::move(uncut)));
  }
  for (int k = 0; k < cfg.cut.states; ++k) {
    ResectionState r = apply_resection(mesh, resection_level_set(mesh, cfg.cut, k));
    auto active = r.tet_active;
    contexts.push_back(make_context(mesh, cfg, active, std::move(r)));
  }

  struct Slot {
    SampleRecord record;
    int state = 0;
    bool ok = false;
  };
  std::vector<Slot> slots(cfg.samples);

  auto run_sample = [&](int i) {
    Rng rng = Rng::stream(cfg.seed, static_cast<uint64_t>(i));
    int state = 0;
    if (cfg.cut.states > 0 && rng.uniform() < cfg.cut.fraction)
      state = 1 + rng.uniform_int(cfg.cut.states);
    const StateContext& ctx = contexts[state];

    Slot& slot = slots[i];
    slot.state = state;
    const BoundarySpec bc = sample_tool_interaction(ctx.surface, ctx.admissible, rng);

    auto prescribed = ctx.fixed_zero;
    prescribed.emplace_back(bc.node, bc.displacement);
    DirichletSolution sol;
    try {
      sol = solve_dirichlet(ctx.stiffness, mesh, prescribed,
                            ctx.resection.tet_active, cfg.solver);
    } catch (const std::exception& e) {
      std::cerr << "datagen: sample " << i << " skipped: " << e.what() << "\n";
      return;
    }

    slot.record.tool = MatX3f::Zero(n, 3);
    slot.record.tool.row(bc.node) = bc.displacement.cast<float>();
    slot.record.bc_flags.assign(n, 0);
    for (int f : mesh.fixed_nodes) slot.record.bc_flags[f] = 1;
    slot.record.bc_flags[bc.node] = 1;
    slot.record.cut_flags = ctx.resection.cut_flags;
    slot.record.target = sol.displacement.cast<float>();
    slot.ok = true;
  };

  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    for (int i = 0; i < cfg.samples; ++i) run_sample(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < cfg.samples; i = next.fetch_add(1))
          run_sample(i);
      });
    for (auto& th : pool) th.join();
  }

  out.node_count = static_cast<uint32_t>(n);
  out.samples.clear();
  DataGenStats stats;
  stats.per_state.assign(1 + cfg.cut.states, 0);
  for (auto& slot : slots) {
    if (!slot.ok) {
      stats.skipped++;
      continue;
    }
    stats.per_state[slot.state]++;
    stats.written++;
    out.samples.push_back(std::move(slot.record));
  }
  return stats;
}

}  // namespace surgformer
