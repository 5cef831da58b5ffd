#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "diflab/common.hpp"
#include "diflab/params.hpp"

// Reverse-mode differentiation over batched Eigen matrices.
//
// Model code is written once against an "engine" interface and instantiated
// with either of two engines:
//   - Direct: plain evaluation, no recording (sampling, oracles, line search);
//   - Tape:   records the operation graph and provides one exact backward
//             pass with respect to every ParameterStore slice.
// Batches are laid out with one sample per column (d x N).

namespace diflab::ad {

// ---------------------------------------------------------------------------
// Direct engine

class Direct {
 public:
  using Value = Matrix;

  Direct() = default;
  explicit Direct(const ParameterStore& store) : store_(&store) {}

  Value constant(Matrix m) const { return m; }
  Value param(const ParamSlice& s) const {
    check(store_ != nullptr, "Direct engine has no parameter store bound");
    return store_->view(s);
  }

  Value add(const Value& a, const Value& b) const { return a + b; }
  Value sub(const Value& a, const Value& b) const { return a - b; }
  Value neg(const Value& a) const { return -a; }
  Value cmul(const Value& a, const Value& b) const {
    return a.cwiseProduct(b);
  }
  Value scale(const Value& a, double c) const { return c * a; }
  Value add_scalar(const Value& a, double c) const {
    return (a.array() + c).matrix();
  }
  Value matmul(const Value& a, const Value& b) const { return a * b; }

  Value add_col(const Value& a, const Value& c) const {
    return (a.array().colwise() + c.col(0).array()).matrix();
  }
  Value sub_col(const Value& a, const Value& c) const {
    return (a.array().colwise() - c.col(0).array()).matrix();
  }
  Value mul_col(const Value& a, const Value& c) const {
    return (a.array().colwise() * c.col(0).array()).matrix();
  }
  Value add_row(const Value& a, const Value& r) const {
    return (a.array().rowwise() + r.row(0).array()).matrix();
  }
  Value sub_row(const Value& a, const Value& r) const {
    return (a.array().rowwise() - r.row(0).array()).matrix();
  }

  Value exp(const Value& a) const { return a.array().exp().matrix(); }
  Value log(const Value& a) const { return a.array().log().matrix(); }
  Value tanh(const Value& a) const { return a.array().tanh().matrix(); }
  Value sigmoid(const Value& a) const {
    return (1.0 / (1.0 + (-a.array()).exp())).matrix();
  }
  Value sqrt(const Value& a) const { return a.array().sqrt().matrix(); }
  Value relu(const Value& a) const { return a.array().max(0.0).matrix(); }

  Value colwise_sum(const Value& a) const { return a.colwise().sum(); }
  Value rowwise_sum(const Value& a) const { return a.rowwise().sum(); }
  Value total_sum(const Value& a) const {
    Matrix m(1, 1);
    m(0, 0) = a.sum();
    return m;
  }

  Value logsumexp_colwise(const Value& a) const {
    Matrix out(1, a.cols());
    for (Index j = 0; j < a.cols(); ++j) {
      double m = a.col(j).maxCoeff();
      if (!std::isfinite(m)) {
        out(0, j) = m;  // all -inf stays -inf
        continue;
      }
      out(0, j) = m + std::log((a.col(j).array() - m).exp().sum());
    }
    return out;
  }

  Value vstack(const std::vector<Value>& parts) const {
    Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Matrix out(rows, parts.front().cols());
    Index r = 0;
    for (const auto& p : parts) {
      out.middleRows(r, p.rows()) = p;
      r += p.rows();
    }
    return out;
  }

  Value select_rows(const Value& a, const std::vector<int>& idx) const {
    Matrix out(static_cast<Index>(idx.size()), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = a.row(idx[i]);
    return out;
  }

  Value interleave_rows(Index total_rows, const std::vector<int>& idx_a,
                        const Value& a, const std::vector<int>& idx_b,
                        const Value& b) const {
    Matrix out(total_rows, a.cols());
    for (std::size_t i = 0; i < idx_a.size(); ++i) out.row(idx_a[i]) = a.row(i);
    for (std::size_t i = 0; i < idx_b.size(); ++i) out.row(idx_b[i]) = b.row(i);
    return out;
  }

  Value broadcast_row(const Value& a, Index n) const {
    return Matrix::Constant(1, n, a(0, 0));
  }

  const Matrix& value(const Value& v) const { return v; }
  double scalar(const Value& v) const { return v(0, 0); }
  Index cols(const Value& v) const { return v.cols(); }
  Index rows(const Value& v) const { return v.rows(); }

 private:
  const ParameterStore* store_ = nullptr;
};

// ---------------------------------------------------------------------------
// Tape engine

class Tape {
 public:
  struct Ref {
    int id = -1;
  };
  using Value = Ref;

  explicit Tape(const ParameterStore& store) : store_(&store) {}

  Ref constant(Matrix m) { return push(Op::kConstant, std::move(m)); }

  Ref param(const ParamSlice& s) {
    Ref r = push(Op::kParam, store_->view(s));
    nodes_[r.id].offset = s.offset;
    return r;
  }

  Ref add(Ref a, Ref b) { return binary(Op::kAdd, a, b, val(a) + val(b)); }
  Ref sub(Ref a, Ref b) { return binary(Op::kSub, a, b, val(a) - val(b)); }
  Ref neg(Ref a) { return unary(Op::kNeg, a, -val(a)); }
  Ref cmul(Ref a, Ref b) {
    return binary(Op::kCMul, a, b, val(a).cwiseProduct(val(b)));
  }
  Ref scale(Ref a, double c) {
    Ref r = unary(Op::kScale, a, c * val(a));
    nodes_[r.id].alpha = c;
    return r;
  }
  Ref add_scalar(Ref a, double c) {
    return unary(Op::kAddScalar, a, (val(a).array() + c).matrix());
  }
  Ref matmul(Ref a, Ref b) {
    return binary(Op::kMatMul, a, b, val(a) * val(b));
  }

  Ref add_col(Ref a, Ref c) {
    return binary(Op::kAddCol, a, c,
                  (val(a).array().colwise() + val(c).col(0).array()).matrix());
  }
  Ref sub_col(Ref a, Ref c) {
    return binary(Op::kSubCol, a, c,
                  (val(a).array().colwise() - val(c).col(0).array()).matrix());
  }
  Ref mul_col(Ref a, Ref c) {
    return binary(Op::kMulCol, a, c,
                  (val(a).array().colwise() * val(c).col(0).array()).matrix());
  }
  Ref add_row(Ref a, Ref r) {
    return binary(Op::kAddRow, a, r,
                  (val(a).array().rowwise() + val(r).row(0).array()).matrix());
  }
  Ref sub_row(Ref a, Ref r) {
    return binary(Op::kSubRow, a, r,
                  (val(a).array().rowwise() - val(r).row(0).array()).matrix());
  }

  Ref exp(Ref a) { return unary(Op::kExp, a, val(a).array().exp().matrix()); }
  Ref log(Ref a) { return unary(Op::kLog, a, val(a).array().log().matrix()); }
  Ref tanh(Ref a) {
    return unary(Op::kTanh, a, val(a).array().tanh().matrix());
  }
  Ref sigmoid(Ref a) {
    return unary(Op::kSigmoid, a,
                 (1.0 / (1.0 + (-val(a).array()).exp())).matrix());
  }
  Ref sqrt(Ref a) {
    return unary(Op::kSqrt, a, val(a).array().sqrt().matrix());
  }
  Ref relu(Ref a) {
    return unary(Op::kRelu, a, val(a).array().max(0.0).matrix());
  }

  Ref colwise_sum(Ref a) {
    return unary(Op::kColwiseSum, a, val(a).colwise().sum());
  }
  Ref rowwise_sum(Ref a) {
    return unary(Op::kRowwiseSum, a, val(a).rowwise().sum());
  }
  Ref total_sum(Ref a) {
    Matrix m(1, 1);
    m(0, 0) = val(a).sum();
    return unary(Op::kTotalSum, a, std::move(m));
  }

  Ref logsumexp_colwise(Ref a) {
    return unary(Op::kLogSumExpColwise, a, Direct().logsumexp_colwise(val(a)));
  }

  Ref vstack(const std::vector<Ref>& parts) {
    Index rows = 0;
    for (Ref p : parts) rows += val(p).rows();
    Matrix out(rows, val(parts.front()).cols());
    Index r = 0;
    std::vector<int> ids;
    for (Ref p : parts) {
      out.middleRows(r, val(p).rows()) = val(p);
      r += val(p).rows();
      ids.push_back(p.id);
    }
    Ref res = push(Op::kVStack, std::move(out));
    nodes_[res.id].idx = std::move(ids);
    return res;
  }

  Ref select_rows(Ref a, const std::vector<int>& idx) {
    Ref r = unary(Op::kSelectRows, a, Direct().select_rows(val(a), idx));
    nodes_[r.id].idx = idx;
    return r;
  }

  Ref interleave_rows(Index total_rows, const std::vector<int>& idx_a, Ref a,
                      const std::vector<int>& idx_b, Ref b) {
    Ref r = binary(Op::kInterleaveRows, a, b,
                   Direct().interleave_rows(total_rows, idx_a, val(a), idx_b,
                                            val(b)));
    nodes_[r.id].idx = idx_a;
    nodes_[r.id].idx2 = idx_b;
    return r;
  }

  Ref broadcast_row(Ref a, Index n) {
    return unary(Op::kBroadcastRow, a, Matrix::Constant(1, n, val(a)(0, 0)));
  }

  const Matrix& value(Ref r) const { return nodes_[r.id].value; }
  Index cols(Ref r) const { return nodes_[r.id].value.cols(); }
  Index rows(Ref r) const { return nodes_[r.id].value.rows(); }

  double scalar(Ref r) const {
    const Matrix& m = nodes_[r.id].value;
    check(m.rows() == 1 && m.cols() == 1, "scalar() on non-1x1 value");
    double v = m(0, 0);
    if (!std::isfinite(v)) throw NumericError("non-finite scalar objective");
    return v;
  }

  // One backward pass from a 1x1 seed; returns d(seed)/d(theta) for the full
  // flat parameter vector. A tape is single-use.
  Vector gradient(Ref seed) {
    check(!consumed_, "gradient(): tape already consumed");
    consumed_ = true;
    const Matrix& sm = nodes_[seed.id].value;
    check(sm.rows() == 1 && sm.cols() == 1, "gradient() seed must be 1x1");

    std::vector<Matrix> adj(nodes_.size());
    adj[seed.id] = Matrix::Ones(1, 1);
    Vector grad = Vector::Zero(store_->size());

    for (int i = seed.id; i >= 0; --i) {
      if (adj[i].size() == 0) continue;
      backprop(i, adj, grad);
    }
    return grad;
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  enum class Op {
    kConstant,
    kParam,
    kAdd,
    kSub,
    kNeg,
    kCMul,
    kScale,
    kAddScalar,
    kMatMul,
    kAddCol,
    kSubCol,
    kMulCol,
    kAddRow,
    kSubRow,
    kExp,
    kLog,
    kTanh,
    kSigmoid,
    kSqrt,
    kRelu,
    kColwiseSum,
    kRowwiseSum,
    kTotalSum,
    kLogSumExpColwise,
    kVStack,
    kSelectRows,
    kInterleaveRows,
    kBroadcastRow,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double alpha = 0.0;
    Index offset = -1;           // kParam: slice offset in the store
    std::vector<int> idx, idx2;  // row indices / vstack children
    Matrix value;
  };

  const Matrix& val(Ref r) const { return nodes_[r.id].value; }

  Ref push(Op op, Matrix v) {
    Node n;
    n.op = op;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int>(nodes_.size()) - 1};
  }
  Ref unary(Op op, Ref a, Matrix v) {
    Ref r = push(op, std::move(v));
    nodes_[r.id].a = a.id;
    return r;
  }
  Ref binary(Op op, Ref a, Ref b, Matrix v) {
    Ref r = push(op, std::move(v));
    nodes_[r.id].a = a.id;
    nodes_[r.id].b = b.id;
    return r;
  }

  static void accumulate(std::vector<Matrix>& adj, int id, const Matrix& g) {
    if (adj[id].size() == 0)
      adj[id] = g;
    else
      adj[id] += g;
  }

  void backprop(int i, std::vector<Matrix>& adj, Vector& grad) const {
    const Node& n = nodes_[i];
    const Matrix& g = adj[i];
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParam: {
        Eigen::Map<const Vector> flat(g.data(), g.size());
        grad.segment(n.offset, g.size()) += flat;
        break;
      }
      case Op::kAdd:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g);
        break;
      case Op::kSub:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, -g);
        break;
      case Op::kNeg:
        accumulate(adj, n.a, -g);
        break;
      case Op::kCMul:
        accumulate(adj, n.a, g.cwiseProduct(nodes_[n.b].value));
        accumulate(adj, n.b, g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::kScale:
        accumulate(adj, n.a, n.alpha * g);
        break;
      case Op::kAddScalar:
        accumulate(adj, n.a, g);
        break;
      case Op::kMatMul:
        accumulate(adj, n.a, g * nodes_[n.b].value.transpose());
        accumulate(adj, n.b, nodes_[n.a].value.transpose() * g);
        break;
      case Op::kAddCol:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g.rowwise().sum());
        break;
      case Op::kSubCol:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, -g.rowwise().sum());
        break;
      case Op::kMulCol: {
        const Matrix& a = nodes_[n.a].value;
        const Matrix& c = nodes_[n.b].value;
        accumulate(adj, n.a,
                   (g.array().colwise() * c.col(0).array()).matrix());
        accumulate(adj, n.b, g.cwiseProduct(a).rowwise().sum());
        break;
      }
      case Op::kAddRow:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g.colwise().sum());
        break;
      case Op::kSubRow:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, -g.colwise().sum());
        break;
      case Op::kExp:
        accumulate(adj, n.a, g.cwiseProduct(n.value));
        break;
      case Op::kLog:
        accumulate(adj, n.a, g.cwiseQuotient(nodes_[n.a].value));
        break;
      case Op::kTanh:
        accumulate(adj, n.a,
                   (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::kSigmoid:
        accumulate(
            adj, n.a,
            (g.array() * n.value.array() * (1.0 - n.value.array())).matrix());
        break;
      case Op::kSqrt:
        accumulate(adj, n.a, (g.array() / (2.0 * n.value.array())).matrix());
        break;
      case Op::kRelu:
        accumulate(
            adj, n.a,
            (g.array() * (nodes_[n.a].value.array() > 0.0).cast<double>())
                .matrix());
        break;
      case Op::kColwiseSum:
        accumulate(adj, n.a,
                   g.replicate(nodes_[n.a].value.rows(), 1));
        break;
      case Op::kRowwiseSum:
        accumulate(adj, n.a, g.replicate(1, nodes_[n.a].value.cols()));
        break;
      case Op::kTotalSum:
        accumulate(adj, n.a,
                   Matrix::Constant(nodes_[n.a].value.rows(),
                                    nodes_[n.a].value.cols(), g(0, 0)));
        break;
      case Op::kLogSumExpColwise: {
        const Matrix& x = nodes_[n.a].value;
        Matrix d(x.rows(), x.cols());
        for (Index j = 0; j < x.cols(); ++j) {
          if (!std::isfinite(n.value(0, j))) {
            d.col(j).setZero();
            continue;
          }
          d.col(j) =
              (x.col(j).array() - n.value(0, j)).exp().matrix() * g(0, j);
        }
        accumulate(adj, n.a, d);
        break;
      }
      case Op::kVStack: {
        Index r = 0;
        for (int child : n.idx) {
          Index h = nodes_[child].value.rows();
          accumulate(adj, child, g.middleRows(r, h));
          r += h;
        }
        break;
      }
      case Op::kSelectRows: {
        Matrix d = Matrix::Zero(nodes_[n.a].value.rows(),
                                nodes_[n.a].value.cols());
        for (std::size_t k = 0; k < n.idx.size(); ++k)
          d.row(n.idx[k]) += g.row(static_cast<Index>(k));
        accumulate(adj, n.a, d);
        break;
      }
      case Op::kInterleaveRows: {
        Matrix da(n.idx.size(), g.cols());
        Matrix db(n.idx2.size(), g.cols());
        for (std::size_t k = 0; k < n.idx.size(); ++k)
          da.row(k) = g.row(n.idx[k]);
        for (std::size_t k = 0; k < n.idx2.size(); ++k)
          db.row(k) = g.row(n.idx2[k]);
        accumulate(adj, n.a, da);
        accumulate(adj, n.b, db);
        break;
      }
      case Op::kBroadcastRow: {
        Matrix d(1, 1);
        d(0, 0) = g.sum();
        accumulate(adj, n.a, d);
        break;
      }
    }
  }

  const ParameterStore* store_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Helpers over a differentiable program f(engine) -> scalar Value.

template <class F>
double eval_scalar(const ParameterStore& store, F&& f) {
  Direct eng(store);
  Matrix v = f(eng);
  check(v.rows() == 1 && v.cols() == 1, "objective must be 1x1");
  return v(0, 0);
}

struct ForwardResult {
  double value;
  Tape tape;
  Tape::Ref root;
};

template <class F>
ForwardResult forward_eval(const ParameterStore& store, F&& f) {
  Tape tape(store);
  Tape::Ref root = f(tape);
  double value = tape.scalar(root);
  return ForwardResult{value, std::move(tape), root};
}

template <class F>
std::pair<double, Vector> value_and_gradient(const ParameterStore& store,
                                             F&& f) {
  ForwardResult r = forward_eval(store, f);
  return {r.value, r.tape.gradient(r.root)};
}

// Max over parameters of |analytic - central difference| / (|analytic| + step).
template <class F>
double finite_diff_check(ParameterStore& store, F&& f, double step) {
  check(step > 0.0, "finite_diff_check: step must be positive");
  auto [value, grad] = value_and_gradient(store, f);
  (void)value;
  double worst = 0.0;
  for (Index i = 0; i < store.size(); ++i) {
    double saved = store.values()[i];
    store.values()[i] = saved + step;
    double up = eval_scalar(store, f);
    store.values()[i] = saved - step;
    double down = eval_scalar(store, f);
    store.values()[i] = saved;
    double numeric = (up - down) / (2.0 * step);
    double err = std::abs(grad[i] - numeric) / (std::abs(grad[i]) + step);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace diflab::ad
