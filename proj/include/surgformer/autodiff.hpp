#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "surgformer/hierarchy.hpp"
#include "surgformer/mesh.hpp"
#include "surgformer/rng.hpp"
#include "surgformer/types.hpp"

namespace surgformer::ad {

/// Handle into a Tape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

[[noreturn]] inline void shape_error(const char* op, Eigen::Index ar,
                                     Eigen::Index ac, Eigen::Index br,
                                     Eigen::Index bc) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                              shape_str(ar, ac) + " vs " + shape_str(br, bc) +
                              ")");
}

}  // namespace detail

/// Reverse-mode tape over dense matrices. Every primitive appends one slot
/// holding the forward value and a pull closure that routes the slot's
/// gradient to its parents. backward() runs the closures once, newest first;
/// a tape is single-shot.
template <typename S>
class Tape {
 public:
  using Matrix = Mat<S>;

  Value leaf(Matrix v) { return record(std::move(v), nullptr); }

  template <typename F>
  Value record(Matrix v, F&& pull) {
    Slot slot;
    slot.value = std::move(v);
    if constexpr (!std::is_same_v<std::decay_t<F>, std::nullptr_t>)
      slot.pull = std::forward<F>(pull);
    slots_.push_back(std::move(slot));
    return Value{static_cast<int>(slots_.size()) - 1};
  }

  const Matrix& value(Value v) const { return slots_.at(v.id).value; }

  const Matrix& grad(Value v) const {
    if (!ran_backward_) throw std::logic_error("tape: grad before backward");
    return slots_.at(v.id).grad;
  }

  Matrix& grad_ref(int id) { return slots_[id].grad; }
  const Matrix& value_of(int id) const { return slots_[id].value; }

  int size() const { return static_cast<int>(slots_.size()); }

  void backward(Value loss) {
    if (slots_.empty()) throw std::logic_error("tape: backward on empty tape");
    if (ran_backward_)
      throw std::logic_error("tape: backward already ran; build a fresh tape");
    const Matrix& l = value(loss);
    if (l.rows() != 1 || l.cols() != 1)
      throw std::invalid_argument("tape: backward target must be 1x1, got " +
                                  detail::shape_str(l.rows(), l.cols()));
    ran_backward_ = true;
    for (auto& s : slots_) s.grad = Matrix::Zero(s.value.rows(), s.value.cols());
    slots_[loss.id].grad(0, 0) = S(1);
    for (int i = static_cast<int>(slots_.size()) - 1; i >= 0; --i)
      if (slots_[i].pull) slots_[i].pull(*this, i);
  }

 private:
  struct Slot {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int)> pull;
  };
  std::vector<Slot> slots_;
  bool ran_backward_ = false;
};

// ---- primitives ------------------------------------------------------------

template <typename S>
Value matmul(Tape<S>& t, Value a, Value b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.cols() != B.rows())
    detail::shape_error("matmul", A.rows(), A.cols(), B.rows(), B.cols());
  return t.record(Mat<S>(A * B), [a, b](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    t.grad_ref(a.id).noalias() += G * t.value_of(b.id).transpose();
    t.grad_ref(b.id).noalias() += t.value_of(a.id).transpose() * G;
  });
}

/// A * B^T
template <typename S>
Value matmul_nt(Tape<S>& t, Value a, Value b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.cols() != B.cols())
    detail::shape_error("matmul_nt", A.rows(), A.cols(), B.rows(), B.cols());
  return t.record(Mat<S>(A * B.transpose()), [a, b](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    t.grad_ref(a.id).noalias() += G * t.value_of(b.id);
    t.grad_ref(b.id).noalias() += G.transpose() * t.value_of(a.id);
  });
}

template <typename S>
Value add(Tape<S>& t, Value a, Value b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    detail::shape_error("add", A.rows(), A.cols(), B.rows(), B.cols());
  return t.record(Mat<S>(A + B), [a, b](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    t.grad_ref(a.id) += G;
    t.grad_ref(b.id) += G;
  });
}

template <typename S>
Value sub(Tape<S>& t, Value a, Value b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    detail::shape_error("sub", A.rows(), A.cols(), B.rows(), B.cols());
  return t.record(Mat<S>(A - B), [a, b](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    t.grad_ref(a.id) += G;
    t.grad_ref(b.id) -= G;
  });
}

template <typename S>
Value scale(Tape<S>& t, Value x, S c) {
  return t.record(Mat<S>(t.value(x) * c), [x, c](Tape<S>& t, int self) {
    t.grad_ref(x.id) += t.grad_ref(self) * c;
  });
}

template <typename S>
Value add_const(Tape<S>& t, Value x, S c) {
  return t.record(Mat<S>(t.value(x).array() + c), [x](Tape<S>& t, int self) {
    t.grad_ref(x.id) += t.grad_ref(self);
  });
}

/// X + 1 b^T with b a 1 x C row.
template <typename S>
Value add_bias(Tape<S>& t, Value x, Value bias) {
  const auto& X = t.value(x);
  const auto& B = t.value(bias);
  if (B.rows() != 1 || B.cols() != X.cols())
    detail::shape_error("add_bias", X.rows(), X.cols(), B.rows(), B.cols());
  Mat<S> out = X;
  out.rowwise() += B.row(0);
  return t.record(std::move(out), [x, bias](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    t.grad_ref(x.id) += G;
    t.grad_ref(bias.id).row(0) += G.colwise().sum();
  });
}

template <typename S>
Value relu(Tape<S>& t, Value x) {
  const auto& X = t.value(x);
  return t.record(Mat<S>(X.array().max(S(0))), [x](Tape<S>& t, int self) {
    const auto& X = t.value_of(x.id);
    const auto& G = t.grad_ref(self);
    t.grad_ref(x.id).array() += (X.array() > S(0)).template cast<S>() * G.array();
  });
}

template <typename S>
Value leaky_relu(Tape<S>& t, Value x, S slope) {
  const auto& X = t.value(x);
  Mat<S> out = X.array().max(X.array() * slope);
  return t.record(std::move(out), [x, slope](Tape<S>& t, int self) {
    const auto& X = t.value_of(x.id);
    const auto& G = t.grad_ref(self);
    t.grad_ref(x.id).array() +=
        (X.array() > S(0)).select(G.array(), G.array() * slope);
  });
}

/// Per-row normalization with learned gain/bias (both 1 x C rows):
/// y = (x - mean) / sqrt(var + eps) * gain + bias, biased variance.
template <typename S>
Value layer_norm(Tape<S>& t, Value x, Value gain, Value bias, S eps) {
  const auto& X = t.value(x);
  const auto& Gn = t.value(gain);
  const auto& Bs = t.value(bias);
  if (Gn.rows() != 1 || Gn.cols() != X.cols())
    detail::shape_error("layer_norm gain", X.rows(), X.cols(), Gn.rows(), Gn.cols());
  if (Bs.rows() != 1 || Bs.cols() != X.cols())
    detail::shape_error("layer_norm bias", X.rows(), X.cols(), Bs.rows(), Bs.cols());

  const Eigen::Index n = X.rows(), c = X.cols();
  Mat<S> xhat(n, c);
  Mat<S> inv_sd(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mu = X.row(i).mean();
    const S var = (X.row(i).array() - mu).square().sum() / S(c);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_sd(i, 0) = inv;
    xhat.row(i) = (X.row(i).array() - mu) * inv;
  }
  Mat<S> out = xhat;
  for (Eigen::Index i = 0; i < n; ++i)
    out.row(i) = xhat.row(i).cwiseProduct(Gn.row(0)) + Bs.row(0);

  return t.record(std::move(out), [x, gain, bias, xhat = std::move(xhat),
                                   inv_sd = std::move(inv_sd)](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    const auto& Gn = t.value_of(gain.id);
    auto& dX = t.grad_ref(x.id);
    auto& dGain = t.grad_ref(gain.id);
    auto& dBias = t.grad_ref(bias.id);
    const Eigen::Index n = G.rows(), c = G.cols();
    dBias.row(0) += G.colwise().sum();
    for (Eigen::Index i = 0; i < n; ++i)
      dGain.row(0) += G.row(i).cwiseProduct(xhat.row(i));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> dxh = G.row(i).cwiseProduct(Gn.row(0));
      const S m1 = dxh.mean();
      const S m2 = dxh.cwiseProduct(xhat.row(i)).mean();
      dX.row(i) +=
          (((dxh.array() - m1) - xhat.row(i).array() * m2) * inv_sd(i, 0)).matrix();
    }
    (void)c;
  });
}

template <typename S>
Value softmax_rows(Tape<S>& t, Value x) {
  const auto& X = t.value(x);
  Mat<S> out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const S m = X.row(i).maxCoeff();
    out.row(i) = (X.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return t.record(std::move(out), [x](Tape<S>& t, int self) {
    const auto& Y = t.value_of(self);
    const auto& G = t.grad_ref(self);
    auto& dX = t.grad_ref(x.id);
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      const S dot = G.row(i).cwiseProduct(Y.row(i)).sum();
      dX.row(i) += Y.row(i).cwiseProduct(G.row(i)).array().matrix() -
                   dot * Y.row(i);
    }
  });
}

/// Softmax within contiguous row runs, per column. Runs are given per group
/// as (first, count) and must partition the rows; used to normalize edge
/// scores over each receiver's incoming edges.
template <typename S>
Value segment_softmax(Tape<S>& t, Value x, std::vector<int> run_first,
                      std::vector<int> run_count) {
  const auto& X = t.value(x);
  Mat<S> out(X.rows(), X.cols());
  Eigen::Index covered = 0;
  for (size_t g = 0; g < run_first.size(); ++g) {
    const int f = run_first[g], n = run_count[g];
    covered += n;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      S m = X(f, j);
      for (int k = 1; k < n; ++k) m = std::max(m, X(f + k, j));
      S sum = S(0);
      for (int k = 0; k < n; ++k) {
        out(f + k, j) = std::exp(X(f + k, j) - m);
        sum += out(f + k, j);
      }
      for (int k = 0; k < n; ++k) out(f + k, j) /= sum;
    }
  }
  if (covered != X.rows())
    throw std::invalid_argument("segment_softmax: runs do not partition rows");
  return t.record(std::move(out), [x, run_first = std::move(run_first),
                                   run_count = std::move(run_count)](Tape<S>& t,
                                                                     int self) {
    const auto& Y = t.value_of(self);
    const auto& G = t.grad_ref(self);
    auto& dX = t.grad_ref(x.id);
    for (size_t g = 0; g < run_first.size(); ++g) {
      const int f = run_first[g], n = run_count[g];
      for (Eigen::Index j = 0; j < Y.cols(); ++j) {
        S dot = S(0);
        for (int k = 0; k < n; ++k) dot += G(f + k, j) * Y(f + k, j);
        for (int k = 0; k < n; ++k)
          dX(f + k, j) += Y(f + k, j) * (G(f + k, j) - dot);
      }
    }
  });
}

template <typename S>
Value concat_channels(Tape<S>& t, const std::vector<Value>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_channels: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Value p : parts) {
    if (t.value(p).rows() != rows)
      detail::shape_error("concat_channels", rows, t.value(parts[0]).cols(),
                          t.value(p).rows(), t.value(p).cols());
    cols += t.value(p).cols();
  }
  Mat<S> out(rows, cols);
  Eigen::Index at = 0;
  for (Value p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  return t.record(std::move(out), [parts](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    Eigen::Index at = 0;
    for (Value p : parts) {
      const Eigen::Index w = t.value_of(p.id).cols();
      t.grad_ref(p.id) += G.middleCols(at, w);
      at += w;
    }
  });
}

template <typename S>
Value elementwise_mul(Tape<S>& t, Value a, Value b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    detail::shape_error("elementwise_mul", A.rows(), A.cols(), B.rows(), B.cols());
  return t.record(Mat<S>(A.cwiseProduct(B)), [a, b](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    t.grad_ref(a.id) += G.cwiseProduct(t.value_of(b.id));
    t.grad_ref(b.id) += G.cwiseProduct(t.value_of(a.id));
  });
}

template <typename S>
Value gather_rows(Tape<S>& t, Value x, std::vector<int> index) {
  const auto& X = t.value(x);
  Mat<S> out(static_cast<Eigen::Index>(index.size()), X.cols());
  for (size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= X.rows())
      throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = X.row(index[k]);
  }
  return t.record(std::move(out), [x, index = std::move(index)](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    auto& dX = t.grad_ref(x.id);
    for (size_t k = 0; k < index.size(); ++k)
      dX.row(index[k]) += G.row(static_cast<Eigen::Index>(k));
  });
}

/// Y[k, :] = s[k] * X[k, :], with s a column (E x 1).
template <typename S>
Value scale_rows(Tape<S>& t, Value x, Value s) {
  const auto& X = t.value(x);
  const auto& Sc = t.value(s);
  if (Sc.cols() != 1 || Sc.rows() != X.rows())
    detail::shape_error("scale_rows", X.rows(), X.cols(), Sc.rows(), Sc.cols());
  Mat<S> out = X;
  for (Eigen::Index k = 0; k < X.rows(); ++k) out.row(k) *= Sc(k, 0);
  return t.record(std::move(out), [x, s](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    const auto& X = t.value_of(x.id);
    const auto& Sc = t.value_of(s.id);
    auto& dX = t.grad_ref(x.id);
    auto& dS = t.grad_ref(s.id);
    for (Eigen::Index k = 0; k < X.rows(); ++k) {
      dX.row(k) += Sc(k, 0) * G.row(k);
      dS(k, 0) += G.row(k).cwiseProduct(X.row(k)).sum();
    }
  });
}

template <typename S>
Value scatter_sum_rows(Tape<S>& t, Value x, std::vector<int> to, int n_out) {
  const auto& X = t.value(x);
  if (static_cast<Eigen::Index>(to.size()) != X.rows())
    throw std::invalid_argument("scatter_sum_rows: index size mismatch");
  Mat<S> out = Mat<S>::Zero(n_out, X.cols());
  for (size_t k = 0; k < to.size(); ++k) {
    if (to[k] < 0 || to[k] >= n_out)
      throw std::invalid_argument("scatter_sum_rows: index out of range");
    out.row(to[k]) += X.row(static_cast<Eigen::Index>(k));
  }
  return t.record(std::move(out), [x, to = std::move(to)](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    auto& dX = t.grad_ref(x.id);
    for (size_t k = 0; k < to.size(); ++k)
      dX.row(static_cast<Eigen::Index>(k)) += G.row(to[k]);
  });
}

/// Channelwise max pooling over clusters; the gradient routes each coarse
/// entry to the first fine row attaining the max.
template <typename S>
Value scatter_max(Tape<S>& t, Value x, const ClusterSet& clusters) {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
  Mat<S> out = pool_max(t.value(x), clusters, &argmax);
  return t.record(std::move(out), [x, argmax = std::move(argmax)](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    auto& dX = t.grad_ref(x.id);
    for (Eigen::Index s = 0; s < G.rows(); ++s)
      for (Eigen::Index j = 0; j < G.cols(); ++j)
        dX(argmax(s, j), j) += G(s, j);
  });
}

/// X[i, :] = Y[owner[i], :]; the gradient of each coarse row accumulates over
/// the fine rows it owns.
template <typename S>
Value broadcast_rows(Tape<S>& t, Value y, std::vector<int> owner) {
  const auto& Y = t.value(y);
  Mat<S> out(static_cast<Eigen::Index>(owner.size()), Y.cols());
  for (size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] < 0 || owner[i] >= Y.rows())
      throw std::invalid_argument("broadcast_rows: owner out of range");
    out.row(static_cast<Eigen::Index>(i)) = Y.row(owner[i]);
  }
  return t.record(std::move(out), [y, owner = std::move(owner)](Tape<S>& t, int self) {
    const auto& G = t.grad_ref(self);
    auto& dY = t.grad_ref(y.id);
    for (size_t i = 0; i < owner.size(); ++i)
      dY.row(owner[i]) += G.row(static_cast<Eigen::Index>(i));
  });
}

template <typename S>
Value slice_cols(Tape<S>& t, Value x, int start, int len) {
  const auto& X = t.value(x);
  if (start < 0 || len < 1 || start + len > X.cols())
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) +
                                ", " + std::to_string(start + len) +
                                ") outside " + std::to_string(X.cols()) +
                                " columns");
  return t.record(Mat<S>(X.middleCols(start, len)), [x, start, len](Tape<S>& t, int self) {
    t.grad_ref(x.id).middleCols(start, len) += t.grad_ref(self);
  });
}

/// Softmax across the branch axis of an N x (B*D) matrix laid out so branch b
/// of channel c sits at column b*D + c.
template <typename S>
Value branch_softmax(Tape<S>& t, Value x, int branches) {
  const auto& X = t.value(x);
  if (branches < 1 || X.cols() % branches != 0)
    throw std::invalid_argument("branch_softmax: columns not divisible by " +
                                std::to_string(branches) + " branches");
  const Eigen::Index d = X.cols() / branches;
  Mat<S> out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < d; ++c) {
      S m = X(i, c);
      for (int b = 1; b < branches; ++b) m = std::max(m, X(i, b * d + c));
      S sum = S(0);
      for (int b = 0; b < branches; ++b) {
        out(i, b * d + c) = std::exp(X(i, b * d + c) - m);
        sum += out(i, b * d + c);
      }
      for (int b = 0; b < branches; ++b) out(i, b * d + c) /= sum;
    }
  }
  return t.record(std::move(out), [x, branches](Tape<S>& t, int self) {
    const auto& Y = t.value_of(self);
    const auto& G = t.grad_ref(self);
    auto& dX = t.grad_ref(x.id);
    const Eigen::Index d = Y.cols() / branches;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      for (Eigen::Index c = 0; c < d; ++c) {
        S dot = S(0);
        for (int b = 0; b < branches; ++b)
          dot += G(i, b * d + c) * Y(i, b * d + c);
        for (int b = 0; b < branches; ++b)
          dX(i, b * d + c) += Y(i, b * d + c) * (G(i, b * d + c) - dot);
      }
    }
  });
}

template <typename S>
Value sum_all(Tape<S>& t, Value x) {
  Mat<S> out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.record(std::move(out), [x](Tape<S>& t, int self) {
    t.grad_ref(x.id).array() += t.grad_ref(self)(0, 0);
  });
}

template <typename S>
Value mean_all(Tape<S>& t, Value x) {
  const auto& X = t.value(x);
  const S inv = S(1) / static_cast<S>(X.size());
  Mat<S> out(1, 1);
  out(0, 0) = X.sum() * inv;
  return t.record(std::move(out), [x, inv](Tape<S>& t, int self) {
    t.grad_ref(x.id).array() += t.grad_ref(self)(0, 0) * inv;
  });
}

/// Quotient of two 1x1 values.
template <typename S>
Value div_scalar(Tape<S>& t, Value num, Value den) {
  const auto& A = t.value(num);
  const auto& B = t.value(den);
  if (A.size() != 1 || B.size() != 1)
    detail::shape_error("div_scalar", A.rows(), A.cols(), B.rows(), B.cols());
  Mat<S> out(1, 1);
  out(0, 0) = A(0, 0) / B(0, 0);
  return t.record(std::move(out), [num, den](Tape<S>& t, int self) {
    const S g = t.grad_ref(self)(0, 0);
    const S a = t.value_of(num.id)(0, 0);
    const S b = t.value_of(den.id)(0, 0);
    t.grad_ref(num.id)(0, 0) += g / b;
    t.grad_ref(den.id)(0, 0) -= g * a / (b * b);
  });
}

/// L * X for a symmetric sparse L (copied in; symmetry makes the pull another
/// apply of L).
template <typename S>
Value sparse_sym_apply(Tape<S>& t, Eigen::SparseMatrix<S, Eigen::RowMajor> L,
                       Value x) {
  const auto& X = t.value(x);
  if (L.cols() != X.rows())
    detail::shape_error("sparse_sym_apply", L.rows(), L.cols(), X.rows(), X.cols());
  return t.record(Mat<S>(L * X), [L = std::move(L), x](Tape<S>& t, int self) {
    t.grad_ref(x.id).noalias() += L * t.grad_ref(self);
  });
}

/// softmax(Q K^T / sqrt(d)) V for one attention head.
template <typename S>
Value scaled_dot_attention(Tape<S>& t, Value q, Value k, Value v) {
  const S inv = S(1) / std::sqrt(static_cast<S>(t.value(q).cols()));
  Value logits = scale(t, matmul_nt(t, q, k), inv);
  return matmul(t, softmax_rows(t, logits), v);
}

// ---- parameters ------------------------------------------------------------

/// Named parameter tensors with gradient accumulators. Insertion order is the
/// canonical order for initialization, binding and serialization.
template <typename S>
class ParamStore {
 public:
  int add(const std::string& name, Mat<S> value) {
    if (index_.count(name))
      throw std::invalid_argument("params: duplicate name " + name);
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    grads_.push_back(Mat<S>::Zero(value.rows(), value.cols()));
    values_.push_back(std::move(value));
    return static_cast<int>(names_.size()) - 1;
  }

  int find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? -1 : it->second;
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(i); }
  Mat<S>& value(int i) { return values_.at(i); }
  const Mat<S>& value(int i) const { return values_.at(i); }
  Mat<S>& grad(int i) { return grads_.at(i); }
  const Mat<S>& grad(int i) const { return grads_.at(i); }

  long long coordinate_count() const {
    long long n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& g : grads_) g.setZero();
  }

  /// One leaf per parameter, in insertion order.
  std::vector<Value> bind(Tape<S>& t) const {
    std::vector<Value> bound;
    bound.reserve(values_.size());
    for (const auto& v : values_) bound.push_back(t.leaf(v));
    return bound;
  }

  /// grads += scale * tape-gradients of the bound leaves.
  void accumulate(const Tape<S>& t, const std::vector<Value>& bound, S scale) {
    for (int i = 0; i < size(); ++i) grads_[i] += t.grad(bound[i]) * scale;
  }

  template <typename S2>
  ParamStore<S2> cast() const {
    ParamStore<S2> out;
    for (int i = 0; i < size(); ++i)
      out.add(names_[i], values_[i].template cast<S2>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
  std::vector<Mat<S>> grads_;
  std::unordered_map<std::string, int> index_;
};

// ---- finite-difference verification ----------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;
  std::string worst;  // "name[i]" of the worst coordinate
};

/// Central finite differences against tape gradients, on a sampled subset of
/// at least 64 coordinates per tensor (all of them for smaller tensors).
/// build_loss must deterministically map (tape, bound leaves) to a 1x1 value.
/// skip(param, coord) exempts known nondifferentiable coordinates; they are
/// counted, not checked.
template <typename BuildLoss>
GradCheckResult grad_check(
    BuildLoss&& build_loss, ParamStore<double>& params, double eps,
    uint64_t seed,
    const std::function<bool(int, Eigen::Index)>& skip = nullptr) {
  // analytic pass
  std::vector<Mat<double>> analytic;
  {
    Tape<double> tape;
    auto bound = params.bind(tape);
    Value loss = build_loss(tape, bound);
    tape.backward(loss);
    analytic.reserve(params.size());
    for (int p = 0; p < params.size(); ++p)
      analytic.push_back(tape.grad(bound[p]));
  }

  auto eval = [&]() {
    Tape<double> tape;
    auto bound = params.bind(tape);
    return tape.value(build_loss(tape, bound))(0, 0);
  };

  Rng rng(seed);
  GradCheckResult result;
  for (int p = 0; p < params.size(); ++p) {
    auto& v = params.value(p);
    const Eigen::Index total = v.size();
    std::vector<Eigen::Index> coords(total);
    for (Eigen::Index i = 0; i < total; ++i) coords[i] = i;
    Eigen::Index take = std::min<Eigen::Index>(total, 64);
    for (Eigen::Index i = 0; i < take; ++i)
      std::swap(coords[i], coords[i + rng.uniform_int(static_cast<int>(total - i))]);

    double* data = v.data();
    for (Eigen::Index i = 0; i < take; ++i) {
      const Eigen::Index c = coords[i];
      if (skip && skip(p, c)) {
        result.skipped++;
        continue;
      }
      const double save = data[c];
      data[c] = save + eps;
      const double up = eval();
      data[c] = save - eps;
      const double dn = eval();
      data[c] = save;
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = analytic[p].data()[c];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst = params.name(p) + "[" + std::to_string(c) + "]";
      }
      result.checked++;
    }
  }
  return result;
}

}  // namespace surgformer::ad
