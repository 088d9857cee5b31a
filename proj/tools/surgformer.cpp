#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "surgformer/checkpoint.hpp"
#include "surgformer/config.hpp"
#include "surgformer/datagen.hpp"
#include "surgformer/dataset.hpp"
#include "surgformer/hierarchy.hpp"
#include "surgformer/mesh.hpp"
#include "surgformer/model.hpp"
#include "surgformer/robust.hpp"
#include "surgformer/train.hpp"
#include "surgformer/vtk.hpp"

namespace sf = surgformer;
using nlohmann::ordered_json;

namespace {

int env_threads() {
  const char* env = std::getenv("SURGFORMER_THREADS");
  if (!env) return 0;
  const int v = std::atoi(env);
  return v > 0 ? v : 0;
}

/// Precedence: explicit flag, then SURGFORMER_THREADS, then the config file.
int resolve_threads(int flag_value, int config_value) {
  if (flag_value > 0) return flag_value;
  if (const int env = env_threads(); env > 0) return env;
  return config_value > 0 ? config_value : 1;
}

void override_path(std::string& into, const std::string& flag) {
  if (!flag.empty()) into = flag;
}

std::string require_path(const std::string& value, const std::string& what) {
  if (value.empty())
    throw std::runtime_error("missing " + what + " (set it in the config file or pass the flag)");
  return value;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

void write_loss_curve(const std::string& path, const sf::TrainResult& result) {
  std::string csv = "step,loss\n";
  char line[64];
  for (const auto& [step, loss] : result.loss_curve) {
    std::snprintf(line, sizeof(line), "%lld,%.9g\n", step, loss);
    csv += line;
  }
  write_text(path, csv);
}

ordered_json summary_json(const sf::EvalSummary& s) {
  ordered_json j;
  j["nrmse"] = s.nrmse;
  j["nmaxerr"] = s.nmaxerr;
  j["dcm"] = s.dcm;
  j["time_ms_median"] = s.time_ms_median;
  j["time_ms_mean"] = s.time_ms_mean;
  j["params"] = s.params;
  j["mdr"] = s.mdr;
  j["samples"] = s.samples;
  j["undefined_skipped"] = s.undefined_skipped;
  return j;
}

void write_report(const std::string& path, const sf::EvalSummary& s,
                  const sf::RunConfig& rc) {
  ordered_json j = summary_json(s);
  j["config"] = ordered_json::parse(sf::run_config_to_json(rc));
  j["build"] = sf::build_id();
  write_text(path, j.dump(2) + "\n");
}

void write_sidecar(const std::string& dataset_path, const sf::RunConfig& rc,
                   ordered_json extra) {
  extra["config"] = ordered_json::parse(sf::run_config_to_json(rc));
  extra["build"] = sf::build_id();
  write_text(sf::sidecar_path(dataset_path), extra.dump(2) + "\n");
}

sf::MeshHierarchy hierarchy_for(const sf::TetMesh& mesh, const sf::RunConfig& rc) {
  return sf::build_hierarchy(mesh, rc.model.level_ratios, rc.hierarchy_seed);
}

void check_hierarchy(const sf::MeshHierarchy& h, const sf::TetMesh& mesh) {
  if (h.node_count(0) != mesh.vertex_count())
    throw std::runtime_error("checkpoint hierarchy does not match the mesh (" +
                             std::to_string(h.node_count(0)) + " vs " +
                             std::to_string(mesh.vertex_count()) + " nodes)");
}

sf::AdvTrainContext adv_context(const sf::TetMesh& mesh, const sf::MeshHierarchy& h,
                                const sf::DatasetFile& adv_set, double lambda) {
  sf::AdvTrainContext ctx;
  ctx.lambda = lambda;
  ctx.laplacian =
      sf::graph_laplacian(h.levels[0].edges, mesh.vertex_count()).cast<float>();
  for (const auto& rec : adv_set.samples)
    ctx.signal_features.push_back(
        sf::assemble_features<float>(mesh.vertices, rec.tool, rec.bc_flags));
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiresolution gated transformer for mesh displacement fields"};
  app.require_subcommand(1);

  // gen-mesh
  auto* gen_mesh = app.add_subcommand("gen-mesh", "generate a structured bar mesh");
  std::string gm_kind = "bar", gm_out;
  int gm_nx = 4, gm_ny = 2, gm_nz = 2;
  std::vector<double> gm_extent{0.3, 0.1, 0.1};
  gen_mesh->add_option("--kind", gm_kind, "mesh family (bar)");
  gen_mesh->add_option("--nx", gm_nx, "cells along x");
  gen_mesh->add_option("--ny", gm_ny, "cells along y");
  gen_mesh->add_option("--nz", gm_nz, "cells along z");
  gen_mesh->add_option("--extent", gm_extent, "physical size, meters")->expected(3);
  gen_mesh->add_option("--out", gm_out, "output mesh JSON")->required();

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "generate displacement samples");
  std::string gd_config, gd_mesh, gd_out, gd_solver;
  int gd_n = -1, gd_states = -1, gd_threads = 0;
  double gd_fraction = -1.0;
  uint64_t gd_seed = 0;
  gen_data->add_option("--config", gd_config, "run configuration JSON");
  gen_data->add_option("--mesh", gd_mesh, "mesh JSON path");
  gen_data->add_option("--n", gd_n, "sample count");
  gen_data->add_option("--cut-fraction", gd_fraction, "fraction of cut samples");
  gen_data->add_option("--cut-states", gd_states, "progressive cut states");
  gen_data->add_option("--seed", gd_seed, "generation seed");
  gen_data->add_option("--solver", gd_solver, "auto|direct|cg");
  gen_data->add_option("--threads", gd_threads, "worker threads");
  gen_data->add_option("--out", gd_out, "output dataset path");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_mesh, tr_data, tr_out, tr_loss;
  int tr_threads = 0;
  train->add_option("--config", tr_config, "run configuration JSON")->required();
  train->add_option("--mesh", tr_mesh, "mesh JSON path");
  train->add_option("--data", tr_data, "training dataset");
  train->add_option("--out", tr_out, "output checkpoint");
  train->add_option("--loss-curve", tr_loss, "loss curve CSV");
  train->add_option("--threads", tr_threads, "worker threads");

  // transfer
  auto* transfer = app.add_subcommand("transfer", "staged transfer to a new input contract");
  std::string tf_config, tf_from, tf_stage, tf_mesh, tf_data, tf_eval, tf_out, tf_report, tf_loss;
  int tf_threads = 0;
  transfer->add_option("--config", tf_config, "target run configuration JSON")->required();
  transfer->add_option("--from-checkpoint", tf_from, "source checkpoint")->required();
  transfer->add_option("--stage", tf_stage, "zeroshot|adapter|full")->required();
  transfer->add_option("--mesh", tf_mesh, "mesh JSON path");
  transfer->add_option("--data", tf_data, "training dataset");
  transfer->add_option("--eval-data", tf_eval, "held-out dataset");
  transfer->add_option("--out", tf_out, "output checkpoint");
  transfer->add_option("--report", tf_report, "evaluation report JSON");
  transfer->add_option("--loss-curve", tf_loss, "loss curve CSV");
  transfer->add_option("--threads", tf_threads, "worker threads");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_report, ev_mesh;
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  eval->add_option("--data", ev_data, "evaluation dataset")->required();
  eval->add_option("--report", ev_report, "output report JSON")->required();
  eval->add_option("--mesh", ev_mesh, "mesh JSON path (defaults to the checkpoint's)");

  // adv-gen
  auto* adv_gen = app.add_subcommand("adv-gen", "craft roughness-maximizing tool signals");
  std::string ag_ckpt, ag_out, ag_mesh;
  double ag_alpha = -1.0;
  int ag_m = -1, ag_threads = 0;
  uint64_t ag_seed = 0;
  adv_gen->add_option("--checkpoint", ag_ckpt, "checkpoint path")->required();
  adv_gen->add_option("--alpha", ag_alpha, "signal budget");
  adv_gen->add_option("--m", ag_m, "number of signals");
  adv_gen->add_option("--seed", ag_seed, "anchor seed");
  adv_gen->add_option("--mesh", ag_mesh, "mesh JSON path (defaults to the checkpoint's)");
  adv_gen->add_option("--threads", ag_threads, "worker threads");
  adv_gen->add_option("--out", ag_out, "output signal set")->required();

  // adv-finetune
  auto* adv_ft = app.add_subcommand("adv-finetune", "fine-tune against a signal set");
  std::string af_ckpt, af_data, af_adv, af_out, af_mesh, af_loss;
  double af_lambda = -1.0;
  int af_threads = 0;
  adv_ft->add_option("--checkpoint", af_ckpt, "checkpoint path")->required();
  adv_ft->add_option("--data", af_data, "clean training dataset")->required();
  adv_ft->add_option("--adv", af_adv, "adversarial signal set")->required();
  adv_ft->add_option("--lambda", af_lambda, "roughness penalty weight");
  adv_ft->add_option("--mesh", af_mesh, "mesh JSON path (defaults to the checkpoint's)");
  adv_ft->add_option("--loss-curve", af_loss, "loss curve CSV");
  adv_ft->add_option("--threads", af_threads, "worker threads");
  adv_ft->add_option("--out", af_out, "output checkpoint")->required();

  // export-vtk
  auto* export_vtk = app.add_subcommand("export-vtk", "export a sample to legacy VTK");
  std::string xv_mesh, xv_field, xv_out, xv_ckpt;
  int xv_index = 0;
  bool xv_deform = false;
  export_vtk->add_option("--mesh", xv_mesh, "mesh JSON path")->required();
  export_vtk->add_option("--field", xv_field, "dataset holding the field")->required();
  export_vtk->add_option("--index", xv_index, "sample index");
  export_vtk->add_option("--checkpoint", xv_ckpt,
                         "export the model's prediction instead of the stored field");
  export_vtk->add_flag("--deform", xv_deform, "bake the field into the positions");
  export_vtk->add_option("--out", xv_out, "output VTK path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_mesh) {
      if (gm_kind != "bar")
        throw std::runtime_error("unknown mesh kind \"" + gm_kind + "\" (expected bar)");
      const sf::TetMesh mesh = sf::generate_bar_mesh(
          gm_nx, gm_ny, gm_nz, sf::Vec3(gm_extent[0], gm_extent[1], gm_extent[2]));
      sf::save_mesh(mesh, gm_out);
      std::cout << "mesh: " << mesh.vertex_count() << " vertices, "
                << mesh.tet_count() << " tets -> " << gm_out << "\n";
    }

    if (*gen_data) {
      sf::RunConfig rc = gd_config.empty() ? sf::RunConfig{} : sf::load_run_config(gd_config);
      override_path(rc.paths.mesh, gd_mesh);
      override_path(rc.paths.data, gd_out);
      if (gd_n >= 0) rc.datagen.samples = gd_n;
      if (gd_fraction >= 0.0) rc.datagen.cut.fraction = gd_fraction;
      if (gd_states >= 0) rc.datagen.cut.states = gd_states;
      if (gen_data->count("--seed")) rc.datagen.seed = gd_seed;
      if (!gd_solver.empty()) rc.datagen.solver = sf::solver_kind_from_name(gd_solver);
      rc.datagen.threads = resolve_threads(gd_threads, rc.datagen.threads);

      const sf::TetMesh mesh = sf::load_mesh(require_path(rc.paths.mesh, "--mesh"));
      const std::string out_path = require_path(rc.paths.data, "--out");
      sf::DatasetFile data;
      const sf::DataGenStats stats = sf::generate_dataset(mesh, rc.datagen, data);
      for (size_t s = 0; s < stats.per_state.size(); ++s)
        std::cout << "  state " << s << (s == 0 ? " (uncut)" : "") << ": "
                  << stats.per_state[s] << "\n";
      if (stats.skipped * 10 > (stats.written + stats.skipped))
        throw std::runtime_error("solver failure rate above 10%");
      sf::write_dataset(out_path, data);
      ordered_json extra;
      extra["samples"] = stats.written;
      extra["skipped"] = stats.skipped;
      extra["per_state"] = stats.per_state;
      write_sidecar(out_path, rc, extra);
      std::cout << "dataset: " << stats.written << " samples (skipped "
                << stats.skipped << ") -> " << out_path << "\n";
    }

    if (*train) {
      sf::RunConfig rc = sf::load_run_config(tr_config);
      override_path(rc.paths.mesh, tr_mesh);
      override_path(rc.paths.data, tr_data);
      override_path(rc.paths.out, tr_out);
      override_path(rc.paths.loss_curve, tr_loss);
      rc.train.threads = resolve_threads(tr_threads, rc.train.threads);
      rc.model.validate();

      const sf::TetMesh mesh = sf::load_mesh(require_path(rc.paths.mesh, "--mesh"));
      const sf::DatasetFile data = sf::read_dataset(require_path(rc.paths.data, "--data"));
      const sf::MeshHierarchy h = hierarchy_for(mesh, rc);
      sf::ad::ParamStore<float> params = sf::init_weights<float>(rc.model, rc.init_seed);
      const sf::TrainResult result =
          sf::train_loop(rc.model, params, h, mesh, data, rc.train);

      const std::string out_path = require_path(rc.paths.out, "--out");
      sf::Checkpoint ckpt{sf::run_config_to_json(rc), sf::build_id(), h, std::move(params)};
      sf::save_checkpoint(out_path, ckpt);
      if (!rc.paths.loss_curve.empty()) write_loss_curve(rc.paths.loss_curve, result);
      std::cout << "trained " << result.loss_curve.size() << " steps, final loss "
                << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back().second)
                << " -> " << out_path << "\n";
    }

    if (*transfer) {
      if (tf_stage != "zeroshot" && tf_stage != "adapter" && tf_stage != "full")
        throw std::runtime_error("unknown stage \"" + tf_stage +
                                 "\" (expected zeroshot|adapter|full)");
      sf::RunConfig rc = sf::load_run_config(tf_config);
      override_path(rc.paths.mesh, tf_mesh);
      override_path(rc.paths.data, tf_data);
      override_path(rc.paths.eval_data, tf_eval);
      override_path(rc.paths.out, tf_out);
      override_path(rc.paths.report, tf_report);
      override_path(rc.paths.loss_curve, tf_loss);
      rc.train.threads = resolve_threads(tf_threads, rc.train.threads);
      rc.model.validate();

      const sf::Checkpoint base = sf::load_checkpoint(tf_from);
      const sf::TetMesh mesh = sf::load_mesh(require_path(rc.paths.mesh, "--mesh"));
      const sf::MeshHierarchy h = hierarchy_for(mesh, rc);
      sf::ad::ParamStore<float> params =
          sf::transfer_params(base.params, rc.model, rc.init_seed);

      if (tf_stage == "zeroshot") {
        const sf::DatasetFile eval_data =
            sf::read_dataset(require_path(rc.paths.eval_data, "--eval-data"));
        const sf::EvalSummary s = sf::evaluate(rc.model, params, h, mesh, eval_data);
        write_report(require_path(rc.paths.report, "--report"), s, rc);
        std::cout << "zeroshot: dcm " << s.dcm << ", nrmse " << s.nrmse << "\n";
        if (!rc.paths.out.empty()) {
          sf::Checkpoint ckpt{sf::run_config_to_json(rc), sf::build_id(), h,
                              std::move(params)};
          sf::save_checkpoint(rc.paths.out, ckpt);
        }
        return 0;
      }

      rc.train.freeze = tf_stage == "adapter" ? sf::FreezePolicy::AdapterAndEmbedding
                                              : sf::FreezePolicy::None;
      const sf::DatasetFile data = sf::read_dataset(require_path(rc.paths.data, "--data"));
      const sf::TrainResult result =
          sf::train_loop(rc.model, params, h, mesh, data, rc.train);
      if (!rc.paths.loss_curve.empty()) write_loss_curve(rc.paths.loss_curve, result);

      if (!rc.paths.eval_data.empty() && !rc.paths.report.empty()) {
        const sf::DatasetFile eval_data = sf::read_dataset(rc.paths.eval_data);
        const sf::EvalSummary s = sf::evaluate(rc.model, params, h, mesh, eval_data);
        write_report(rc.paths.report, s, rc);
        std::cout << tf_stage << ": dcm " << s.dcm << ", nrmse " << s.nrmse << "\n";
      }
      const std::string out_path = require_path(rc.paths.out, "--out");
      sf::Checkpoint ckpt{sf::run_config_to_json(rc), sf::build_id(), h, std::move(params)};
      sf::save_checkpoint(out_path, ckpt);
      std::cout << "stage " << tf_stage << " -> " << out_path << "\n";
    }

    if (*eval) {
      const sf::Checkpoint ckpt = sf::load_checkpoint(ev_ckpt);
      sf::RunConfig rc = ckpt.run_config();
      override_path(rc.paths.mesh, ev_mesh);
      const sf::TetMesh mesh = sf::load_mesh(require_path(rc.paths.mesh, "--mesh"));
      check_hierarchy(ckpt.hierarchy, mesh);
      const sf::DatasetFile data = sf::read_dataset(ev_data);
      const sf::EvalSummary s =
          sf::evaluate(rc.model, ckpt.params, ckpt.hierarchy, mesh, data);
      write_report(ev_report, s, rc);
      std::cout << summary_json(s).dump(2) << "\n";
    }

    if (*adv_gen) {
      const sf::Checkpoint ckpt = sf::load_checkpoint(ag_ckpt);
      sf::RunConfig rc = ckpt.run_config();
      override_path(rc.paths.mesh, ag_mesh);
      if (ag_alpha > 0) rc.adv.alpha = ag_alpha;
      if (ag_m > 0) rc.adv.count = ag_m;
      if (adv_gen->count("--seed")) rc.adv.seed = ag_seed;
      rc.adv.threads = resolve_threads(ag_threads, rc.adv.threads);

      const sf::TetMesh mesh = sf::load_mesh(require_path(rc.paths.mesh, "--mesh"));
      check_hierarchy(ckpt.hierarchy, mesh);
      const sf::AdvSet set =
          sf::generate_adv_set(rc.model, ckpt.params, ckpt.hierarchy, mesh, rc.adv);

      const int n = mesh.vertex_count();
      sf::DatasetFile out;
      out.node_count = static_cast<uint32_t>(n);
      std::vector<uint8_t> bc(n, 0);
      for (int i : mesh.fixed_nodes) bc[i] = 1;
      double mean_init = 0.0, mean_final = 0.0;
      ordered_json anchors = ordered_json::array();
      for (size_t i = 0; i < set.kernels.size(); ++i) {
        sf::SampleRecord rec;
        rec.tool = sf::adv_signal<float>(set.kernels[i], set.results[i].q, n);
        rec.bc_flags = bc;
        rec.cut_flags.assign(n, 0);
        rec.target = sf::MatX3f::Zero(n, 3);
        out.samples.push_back(std::move(rec));
        anchors.push_back(set.kernels[i].anchor);
        mean_init += set.results[i].roughness_init / set.kernels.size();
        mean_final += set.results[i].roughness_final / set.kernels.size();
      }
      sf::write_dataset(ag_out, out);
      ordered_json extra;
      extra["adversarial"] = true;
      extra["anchors"] = anchors;
      extra["mean_roughness_init"] = mean_init;
      extra["mean_roughness_final"] = mean_final;
      write_sidecar(ag_out, rc, extra);
      std::cout << "adv set: " << set.kernels.size() << " signals, mean roughness "
                << mean_init << " -> " << mean_final << " -> " << ag_out << "\n";
    }

    if (*adv_ft) {
      const sf::Checkpoint base = sf::load_checkpoint(af_ckpt);
      sf::RunConfig rc = base.run_config();
      override_path(rc.paths.mesh, af_mesh);
      override_path(rc.paths.loss_curve, af_loss);
      if (af_lambda >= 0) rc.adv.lambda = af_lambda;
      rc.train.threads = resolve_threads(af_threads, rc.train.threads);

      const sf::TetMesh mesh = sf::load_mesh(require_path(rc.paths.mesh, "--mesh"));
      check_hierarchy(base.hierarchy, mesh);
      const sf::DatasetFile data = sf::read_dataset(af_data);
      const sf::DatasetFile adv_set = sf::read_dataset(af_adv);
      if (adv_set.node_count != data.node_count)
        throw std::runtime_error("signal set and dataset disagree on node count");
      const sf::AdvTrainContext ctx =
          adv_context(mesh, base.hierarchy, adv_set, rc.adv.lambda);

      sf::ad::ParamStore<float> params = base.params;
      const sf::TrainResult result =
          sf::train_loop(rc.model, params, base.hierarchy, mesh, data, rc.train, &ctx);
      if (!rc.paths.loss_curve.empty()) write_loss_curve(rc.paths.loss_curve, result);
      sf::Checkpoint ckpt{sf::run_config_to_json(rc), sf::build_id(), base.hierarchy,
                          std::move(params)};
      sf::save_checkpoint(af_out, ckpt);
      std::cout << "fine-tuned with lambda " << rc.adv.lambda << " -> " << af_out << "\n";
    }

    if (*export_vtk) {
      const sf::TetMesh mesh = sf::load_mesh(xv_mesh);
      const sf::DatasetFile data = sf::read_dataset(xv_field);
      if (static_cast<int>(data.node_count) != mesh.vertex_count())
        throw std::runtime_error("field dataset does not match the mesh");
      if (xv_index < 0 || xv_index >= static_cast<int>(data.samples.size()))
        throw std::runtime_error("sample index " + std::to_string(xv_index) +
                                 " out of range (dataset holds " +
                                 std::to_string(data.samples.size()) + ")");
      const sf::SampleRecord& rec = data.samples[xv_index];
      sf::MatX3d field = rec.target.cast<double>();
      if (!xv_ckpt.empty()) {
        const sf::Checkpoint ckpt = sf::load_checkpoint(xv_ckpt);
        check_hierarchy(ckpt.hierarchy, mesh);
        const sf::RunConfig rc = ckpt.run_config();
        sf::ad::Tape<float> tape;
        auto bm = sf::bind_model(tape, rc.model, ckpt.params);
        const sf::Mat<float> raw =
            sf::assemble_features<float>(mesh.vertices, rec.tool, rec.bc_flags);
        sf::ad::Value pred =
            sf::model_forward(tape, bm, ckpt.hierarchy, raw, rec.cut_flags);
        field = tape.value(pred).cast<double>();
      }
      sf::write_vtk(xv_out, mesh, field, rec.cut_flags, xv_deform);
      std::cout << "vtk: " << mesh.vertex_count() << " points -> " << xv_out << "\n";
    }

    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
