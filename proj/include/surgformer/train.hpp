#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "surgformer/autodiff.hpp"
#include "surgformer/dataset.hpp"
#include "surgformer/elasticity.hpp"
#include "surgformer/mesh.hpp"
#include "surgformer/model.hpp"
#include "surgformer/parallel.hpp"
#include "surgformer/robust.hpp"
#include "surgformer/rng.hpp"

namespace surgformer {

enum class FreezePolicy { None, AdapterAndEmbedding, All };

struct TrainConfig {
  int epochs = 40;
  int batch = 16;
  double lr = 1e-3;
  double lr_min = 1e-5;  // cosine decay floor
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  FreezePolicy freeze = FreezePolicy::None;
  int threads = 1;
};

/// Mean over masked rows of the squared displacement error.
template <typename S>
ad::Value mse_loss(ad::Tape<S>& t, ad::Value pred, ad::Value target,
                   const std::vector<int>& mask) {
  if (mask.empty()) throw std::invalid_argument("mse_loss: empty mask");
  ad::Value dp = ad::gather_rows(t, pred, mask);
  ad::Value dt = ad::gather_rows(t, target, mask);
  ad::Value d = ad::sub(t, dp, dt);
  return ad::scale(t, ad::sum_all(t, ad::elementwise_mul(t, d, d)),
                   S(1) / static_cast<S>(mask.size()));
}

struct SampleMetrics {
  double nrmse = 0.0;
  double nmaxerr = 0.0;
  double dcm = 0.0;
  bool defined = true;  // false when the target is all zero over the mask
};

/// Per-sample error metrics over the masked nodes. DCM is the percentage of
/// cumulative displacement magnitude recovered, clamped at zero.
inline SampleMetrics metric_suite(const MatX3d& pred, const MatX3d& target,
                                  const std::vector<int>& mask) {
  constexpr double kEps = 1e-8;
  if (mask.empty()) throw std::invalid_argument("metrics: empty mask");
  SampleMetrics m;
  double sq_err = 0.0, sq_tgt = 0.0, max_err = 0.0, max_tgt = 0.0;
  double sum_err = 0.0, sum_tgt = 0.0;
  for (int i : mask) {
    const double e = (pred.row(i) - target.row(i)).norm();
    const double u = target.row(i).norm();
    sq_err += e * e;
    sq_tgt += u * u;
    max_err = std::max(max_err, e);
    max_tgt = std::max(max_tgt, u);
    sum_err += e;
    sum_tgt += u;
  }
  const double n = static_cast<double>(mask.size());
  m.defined = sq_tgt > 0.0;
  m.nrmse = std::sqrt(sq_err / n) / (std::sqrt(sq_tgt / n) + kEps);
  m.nmaxerr = max_err / (max_tgt + kEps);
  m.dcm = 100.0 * std::max(0.0, 1.0 - sum_err / (sum_tgt + kEps));
  return m;
}

struct AdamState {
  std::vector<Mat<float>> m;
  std::vector<Mat<float>> v;
  long long step = 0;
};

inline AdamState make_adam_state(const ad::ParamStore<float>& params) {
  AdamState s;
  for (int p = 0; p < params.size(); ++p) {
    s.m.push_back(Mat<float>::Zero(params.value(p).rows(), params.value(p).cols()));
    s.v.push_back(Mat<float>::Zero(params.value(p).rows(), params.value(p).cols()));
  }
  return s;
}

/// One Adam update from the accumulated gradients; frozen parameters keep
/// both their value and their moment estimates.
inline void adam_step(ad::ParamStore<float>& params, AdamState& state,
                      const TrainConfig& cfg, double lr,
                      const std::vector<uint8_t>& trainable) {
  state.step++;
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(state.step));
  for (int p = 0; p < params.size(); ++p) {
    if (!trainable[p]) continue;
    const auto& g = params.grad(p);
    state.m[p] = b1 * state.m[p] + (1.0f - b1) * g;
    state.v[p] = b2 * state.v[p].array() + (1.0f - b2) * g.array().square();
    params.value(p).array() -=
        static_cast<float>(lr) * (state.m[p].array() / c1) /
        ((state.v[p].array() / c2).sqrt() + static_cast<float>(cfg.adam_eps));
  }
}

inline std::vector<uint8_t> trainable_mask(const ad::ParamStore<float>& params,
                                           FreezePolicy freeze) {
  std::vector<uint8_t> mask(params.size(), 1);
  for (int p = 0; p < params.size(); ++p) {
    const std::string& name = params.name(p);
    switch (freeze) {
      case FreezePolicy::None:
        break;
      case FreezePolicy::All:
        mask[p] = 0;
        break;
      case FreezePolicy::AdapterAndEmbedding:
        mask[p] = name.starts_with("adapter.") || name.starts_with("cut_emb.") ? 1 : 0;
        break;
    }
  }
  return mask;
}

/// Dataset sample with features assembled and the loss mask resolved (active
/// nodes; all nodes for uncut samples).
struct PreparedSample {
  Mat<float> raw;
  std::vector<uint8_t> cut;
  std::vector<int> mask;
  Mat<float> target;
};

inline PreparedSample prepare_sample(const TetMesh& mesh, const SampleRecord& rec) {
  PreparedSample p;
  p.raw = assemble_features<float>(mesh.vertices, rec.tool, rec.bc_flags);
  p.cut = rec.cut_flags;
  const auto active = active_nodes_from_cut(mesh, rec.cut_flags);
  for (int i = 0; i < mesh.vertex_count(); ++i)
    if (active[i]) p.mask.push_back(i);
  p.target = rec.target;
  return p;
}

inline std::vector<PreparedSample> prepare_dataset(const TetMesh& mesh,
                                                   const DatasetFile& data) {
  if (static_cast<int>(data.node_count) != mesh.vertex_count())
    throw std::invalid_argument("train: dataset node count does not match mesh");
  std::vector<PreparedSample> out;
  out.reserve(data.samples.size());
  for (const auto& rec : data.samples) out.push_back(prepare_sample(mesh, rec));
  return out;
}

/// Adversarial term used during fine-tuning: pre-generated signal features
/// whose prediction roughness is penalized with weight lambda.
struct AdvTrainContext {
  std::vector<Mat<float>> signal_features;  // raw 7-channel features
  Eigen::SparseMatrix<float, Eigen::RowMajor> laplacian;
  double lambda = 0.0;
};

struct TrainResult {
  std::vector<std::pair<long long, double>> loss_curve;  // (step, batch loss)
};

namespace detail {

struct SampleGrads {
  double loss = 0.0;
  std::vector<Mat<float>> grads;
};

}  // namespace detail

/// Minibatch training with cosine learning-rate decay. Per-sample gradients
/// are computed on independent tapes (optionally in parallel) and reduced in
/// sample order, so results do not depend on the thread count.
inline TrainResult train_loop(const ModelConfig& cfg, ad::ParamStore<float>& params,
                              const MeshHierarchy& hierarchy, const TetMesh& mesh,
                              const DatasetFile& data, const TrainConfig& tc,
                              const AdvTrainContext* adv = nullptr) {
  cfg.validate();
  const auto prepared = prepare_dataset(mesh, data);
  if (prepared.empty()) throw std::invalid_argument("train: empty dataset");
  if (tc.batch < 1 || tc.epochs < 0) throw std::invalid_argument("train: bad schedule");

  const auto trainable = trainable_mask(params, tc.freeze);
  AdamState adam = make_adam_state(params);
  Rng shuffle_rng(tc.seed);

  const int n = static_cast<int>(prepared.size());
  const int batches_per_epoch = (n + tc.batch - 1) / tc.batch;
  const long long total_steps = static_cast<long long>(tc.epochs) * batches_per_epoch;

  std::vector<int> adv_order;
  size_t adv_cursor = 0;
  const bool use_adv = adv && adv->lambda != 0.0 && !adv->signal_features.empty();
  if (use_adv)
    for (size_t i = 0; i < adv->signal_features.size(); ++i)
      adv_order.push_back(static_cast<int>(i));

  const std::vector<uint8_t> no_cut(mesh.vertex_count(), 0);

  auto run_supervised = [&](const PreparedSample& s, detail::SampleGrads& out) {
    ad::Tape<float> tape;
    auto bm = bind_model(tape, cfg, params);
    ad::Value pred = model_forward(tape, bm, hierarchy, s.raw, s.cut);
    ad::Value target = tape.leaf(s.target);
    ad::Value loss = mse_loss(tape, pred, target, s.mask);
    out.loss = tape.value(loss)(0, 0);
    tape.backward(loss);
    out.grads.clear();
    out.grads.reserve(params.size());
    for (int p = 0; p < params.size(); ++p) out.grads.push_back(tape.grad(bm.bound[p]));
  };

  auto run_adversarial = [&](const Mat<float>& raw, detail::SampleGrads& out) {
    ad::Tape<float> tape;
    auto bm = bind_model(tape, cfg, params);
    ad::Value pred = model_forward(tape, bm, hierarchy, raw, no_cut);
    ad::Value rough = dirichlet_roughness(tape, pred, adv->laplacian, 1e-8f);
    out.loss = tape.value(rough)(0, 0);
    tape.backward(rough);
    out.grads.clear();
    out.grads.reserve(params.size());
    for (int p = 0; p < params.size(); ++p) out.grads.push_back(tape.grad(bm.bound[p]));
  };

  TrainResult result;
  long long step = 0;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

    for (int b = 0; b < batches_per_epoch; ++b) {
      const int begin = b * tc.batch;
      const int count = std::min(tc.batch, n - begin);

      std::vector<detail::SampleGrads> grads(count);
      run_indexed(count, tc.threads, [&](int k) {
        run_supervised(prepared[order[begin + k]], grads[k]);
      });

      int adv_count = 0;
      std::vector<detail::SampleGrads> adv_grads;
      if (use_adv) {
        adv_count = std::min<int>(count, static_cast<int>(adv_order.size()));
        std::vector<int> picks(adv_count);
        for (int k = 0; k < adv_count; ++k) {
          if (adv_cursor == adv_order.size()) adv_cursor = 0;
          picks[k] = adv_order[adv_cursor++];
        }
        adv_grads.resize(adv_count);
        run_indexed(adv_count, tc.threads, [&](int k) {
          run_adversarial(adv->signal_features[picks[k]], adv_grads[k]);
        });
      }

      params.zero_grad();
      double batch_loss = 0.0;
      const float w = 1.0f / static_cast<float>(count);
      for (int k = 0; k < count; ++k) {
        batch_loss += grads[k].loss / count;
        for (int p = 0; p < params.size(); ++p)
          params.grad(p) += grads[k].grads[p] * w;
      }
      if (adv_count > 0) {
        const float wa = static_cast<float>(adv->lambda) / adv_count;
        for (int k = 0; k < adv_count; ++k) {
          batch_loss += adv->lambda * adv_grads[k].loss / adv_count;
          for (int p = 0; p < params.size(); ++p)
            params.grad(p) += adv_grads[k].grads[p] * wa;
        }
      }

      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: loss is not finite at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(b));

      const double progress =
          total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 1.0;
      const double lr = tc.lr_min + 0.5 * (tc.lr - tc.lr_min) *
                                        (1.0 + std::cos(std::numbers::pi * progress));
      adam_step(params, adam, tc, lr, trainable);
      result.loss_curve.emplace_back(step, batch_loss);
      step++;
    }
  }
  return result;
}

struct EvalSummary {
  double nrmse = 0.0;
  double nmaxerr = 0.0;
  double dcm = 0.0;
  double mdr = 0.0;  // mean prediction roughness
  double time_ms_median = 0.0;
  double time_ms_mean = 0.0;
  long long params = 0;
  int samples = 0;
  int undefined_skipped = 0;
};

/// Forward-only pass over a dataset: averaged metrics (undefined samples
/// excluded with a warning), mean prediction roughness, and per-sample
/// wall-clock inference times.
inline EvalSummary evaluate(const ModelConfig& cfg, const ad::ParamStore<float>& params,
                            const MeshHierarchy& hierarchy, const TetMesh& mesh,
                            const DatasetFile& data) {
  const auto prepared = prepare_dataset(mesh, data);
  const SpMatRow lap = graph_laplacian(hierarchy.levels[0].edges, hierarchy.node_count(0));

  EvalSummary summary;
  summary.params = params.coordinate_count();
  std::vector<double> times;
  times.reserve(prepared.size());
  double nrmse = 0, nmaxerr = 0, dcm = 0, mdr = 0;
  int defined = 0;

  for (size_t i = 0; i < prepared.size(); ++i) {
    const auto& s = prepared[i];
    const auto t0 = std::chrono::steady_clock::now();
    ad::Tape<float> tape;
    auto bm = bind_model(tape, cfg, params);
    ad::Value pred = model_forward(tape, bm, hierarchy, s.raw, s.cut);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());

    const MatX3d p = tape.value(pred).cast<double>();
    mdr += dirichlet_roughness(p, lap);
    const SampleMetrics m = metric_suite(p, s.target.cast<double>(), s.mask);
    if (!m.defined) {
      std::cerr << "eval: sample " << i << " has an all-zero target, excluded\n";
      summary.undefined_skipped++;
      continue;
    }
    nrmse += m.nrmse;
    nmaxerr += m.nmaxerr;
    dcm += m.dcm;
    defined++;
  }

  summary.samples = defined;
  if (defined > 0) {
    summary.nrmse = nrmse / defined;
    summary.nmaxerr = nmaxerr / defined;
    summary.dcm = dcm / defined;
  }
  if (!prepared.empty()) summary.mdr = mdr / static_cast<double>(prepared.size());
  if (!times.empty()) {
    summary.time_ms_mean = 0.0;
    for (double t : times) summary.time_ms_mean += t;
    summary.time_ms_mean /= static_cast<double>(times.size());
    std::sort(times.begin(), times.end());
    const size_t mid = times.size() / 2;
    summary.time_ms_median = times.size() % 2 == 1
                                 ? times[mid]
                                 : 0.5 * (times[mid - 1] + times[mid]);
  }
  return summary;
}

}  // namespace surgformer
