#include "surgformer/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#ifndef SURGFORMER_BUILD_ID
#define SURGFORMER_BUILD_ID "untracked"
#endif

namespace surgformer {

using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

/// Reads fields out of one JSON object, then rejects anything not consumed.
class ObjectReader {
 public:
  ObjectReader(const ordered_json& obj, std::string where)
      : obj_(obj), where_(std::move(where)) {
    if (!obj.is_object()) fail("config: " + where_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& into) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      into = it->get<T>();
    } catch (const ordered_json::exception&) {
      fail("config: bad value for " + where_ + "." + key);
    }
    seen_.push_back(key);
  }

  const ordered_json* child(const char* key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.push_back(key);
    return &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      bool known = false;
      for (const auto& s : seen_)
        if (s == it.key()) known = true;
      if (!known) fail("config: unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const ordered_json& obj_;
  std::string where_;
  std::vector<std::string> seen_;
};

void read_vec3(ObjectReader& r, const char* key, Vec3& into) {
  std::vector<double> v{into[0], into[1], into[2]};
  r.read(key, v);
  if (v.size() != 3) fail(std::string("config: ") + key + " needs 3 components");
  into = Vec3(v[0], v[1], v[2]);
}

}  // namespace

const char* freeze_policy_name(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::None: return "none";
    case FreezePolicy::AdapterAndEmbedding: return "adapter_and_embedding";
    case FreezePolicy::All: return "all";
  }
  fail("config: bad freeze policy value");
}

FreezePolicy freeze_policy_from_name(const std::string& name) {
  if (name == "none") return FreezePolicy::None;
  if (name == "adapter_and_embedding") return FreezePolicy::AdapterAndEmbedding;
  if (name == "all") return FreezePolicy::All;
  fail("config: unknown freeze policy \"" + name + "\"");
}

const char* solver_kind_name(SolverKind k) {
  switch (k) {
    case SolverKind::Auto: return "auto";
    case SolverKind::Direct: return "direct";
    case SolverKind::ConjugateGradient: return "cg";
  }
  fail("config: bad solver kind value");
}

SolverKind solver_kind_from_name(const std::string& name) {
  if (name == "auto") return SolverKind::Auto;
  if (name == "direct") return SolverKind::Direct;
  if (name == "cg") return SolverKind::ConjugateGradient;
  fail("config: unknown solver \"" + name + "\"");
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["model"] = {{"levels", cfg.model.levels},
                {"width", cfg.model.width},
                {"heads", cfg.model.heads},
                {"ff_hidden", cfg.model.ff_hidden},
                {"input_dim", cfg.model.input_dim},
                {"cut_embed_dim", cfg.model.cut_embed_dim},
                {"cut_enabled", cfg.model.cut_enabled},
                {"level_ratios", cfg.model.level_ratios},
                {"global_levels", cfg.model.global_levels},
                {"ln_eps", cfg.model.ln_eps},
                {"leaky_slope", cfg.model.leaky_slope},
                {"blocks_per_level", cfg.model.blocks_per_level},
                {"local_branch", cfg.model.local_branch},
                {"global_branch", cfg.model.global_branch},
                {"ff_branch", cfg.model.ff_branch},
                {"uniform_gate", cfg.model.uniform_gate}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch", cfg.train.batch},
                {"lr", cfg.train.lr},
                {"lr_min", cfg.train.lr_min},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"adam_eps", cfg.train.adam_eps},
                {"seed", cfg.train.seed},
                {"freeze", freeze_policy_name(cfg.train.freeze)},
                {"threads", cfg.train.threads}};
  j["adv"] = {{"alpha", cfg.adv.alpha},
              {"steps", cfg.adv.steps},
              {"step_size", cfg.adv.step_size},
              {"radius", cfg.adv.radius},
              {"concentration", cfg.adv.concentration},
              {"lambda", cfg.adv.lambda},
              {"count", cfg.adv.count},
              {"seed", cfg.adv.seed},
              {"threads", cfg.adv.threads}};
  j["datagen"] = {
      {"samples", cfg.datagen.samples},
      {"seed", cfg.datagen.seed},
      {"cut_fraction", cfg.datagen.cut.fraction},
      {"cut_states", cfg.datagen.cut.states},
      {"plane_normal",
       std::vector<double>{cfg.datagen.cut.plane_normal[0], cfg.datagen.cut.plane_normal[1],
                           cfg.datagen.cut.plane_normal[2]}},
      {"max_depth", cfg.datagen.cut.max_depth},
      {"youngs", cfg.datagen.material.youngs},
      {"poisson", cfg.datagen.material.poisson},
      {"solver", solver_kind_name(cfg.datagen.solver)},
      {"threads", cfg.datagen.threads}};
  j["paths"] = {{"mesh", cfg.paths.mesh},
                {"data", cfg.paths.data},
                {"eval_data", cfg.paths.eval_data},
                {"checkpoint", cfg.paths.checkpoint},
                {"adv_set", cfg.paths.adv_set},
                {"out", cfg.paths.out},
                {"report", cfg.paths.report},
                {"loss_curve", cfg.paths.loss_curve}};
  j["hierarchy_seed"] = cfg.hierarchy_seed;
  j["init_seed"] = cfg.init_seed;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  ObjectReader root(j, "root");
  if (const ordered_json* m = root.child("model")) {
    ObjectReader r(*m, "model");
    r.read("levels", cfg.model.levels);
    r.read("width", cfg.model.width);
    r.read("heads", cfg.model.heads);
    r.read("ff_hidden", cfg.model.ff_hidden);
    r.read("input_dim", cfg.model.input_dim);
    r.read("cut_embed_dim", cfg.model.cut_embed_dim);
    r.read("cut_enabled", cfg.model.cut_enabled);
    r.read("level_ratios", cfg.model.level_ratios);
    r.read("global_levels", cfg.model.global_levels);
    r.read("ln_eps", cfg.model.ln_eps);
    r.read("leaky_slope", cfg.model.leaky_slope);
    r.read("blocks_per_level", cfg.model.blocks_per_level);
    r.read("local_branch", cfg.model.local_branch);
    r.read("global_branch", cfg.model.global_branch);
    r.read("ff_branch", cfg.model.ff_branch);
    r.read("uniform_gate", cfg.model.uniform_gate);
    r.finish();
  }
  if (const ordered_json* t = root.child("train")) {
    ObjectReader r(*t, "train");
    r.read("epochs", cfg.train.epochs);
    r.read("batch", cfg.train.batch);
    r.read("lr", cfg.train.lr);
    r.read("lr_min", cfg.train.lr_min);
    r.read("beta1", cfg.train.beta1);
    r.read("beta2", cfg.train.beta2);
    r.read("adam_eps", cfg.train.adam_eps);
    r.read("seed", cfg.train.seed);
    std::string freeze = freeze_policy_name(cfg.train.freeze);
    r.read("freeze", freeze);
    cfg.train.freeze = freeze_policy_from_name(freeze);
    r.read("threads", cfg.train.threads);
    r.finish();
  }
  if (const ordered_json* a = root.child("adv")) {
    ObjectReader r(*a, "adv");
    r.read("alpha", cfg.adv.alpha);
    r.read("steps", cfg.adv.steps);
    r.read("step_size", cfg.adv.step_size);
    r.read("radius", cfg.adv.radius);
    r.read("concentration", cfg.adv.concentration);
    r.read("lambda", cfg.adv.lambda);
    r.read("count", cfg.adv.count);
    r.read("seed", cfg.adv.seed);
    r.read("threads", cfg.adv.threads);
    r.finish();
  }
  if (const ordered_json* d = root.child("datagen")) {
    ObjectReader r(*d, "datagen");
    r.read("samples", cfg.datagen.samples);
    r.read("seed", cfg.datagen.seed);
    r.read("cut_fraction", cfg.datagen.cut.fraction);
    r.read("cut_states", cfg.datagen.cut.states);
    read_vec3(r, "plane_normal", cfg.datagen.cut.plane_normal);
    r.read("max_depth", cfg.datagen.cut.max_depth);
    r.read("youngs", cfg.datagen.material.youngs);
    r.read("poisson", cfg.datagen.material.poisson);
    std::string solver = solver_kind_name(cfg.datagen.solver);
    r.read("solver", solver);
    cfg.datagen.solver = solver_kind_from_name(solver);
    r.read("threads", cfg.datagen.threads);
    r.finish();
  }
  if (const ordered_json* p = root.child("paths")) {
    ObjectReader r(*p, "paths");
    r.read("mesh", cfg.paths.mesh);
    r.read("data", cfg.paths.data);
    r.read("eval_data", cfg.paths.eval_data);
    r.read("checkpoint", cfg.paths.checkpoint);
    r.read("adv_set", cfg.paths.adv_set);
    r.read("out", cfg.paths.out);
    r.read("report", cfg.paths.report);
    r.read("loss_curve", cfg.paths.loss_curve);
    r.finish();
  }
  root.read("hierarchy_seed", cfg.hierarchy_seed);
  root.read("init_seed", cfg.init_seed);
  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(buf.str());
}

const char* build_id() { return SURGFORMER_BUILD_ID; }

}  // namespace surgformer
