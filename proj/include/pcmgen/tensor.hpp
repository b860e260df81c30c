#pragma once

// Dense row-major matrices, a reverse-mode autodiff tape over whole-matrix
// operations, and the Adam optimizer. Templated on the scalar so the same
// graphs can be gradient-checked in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcmgen/error.hpp"
#include "pcmgen/rng.hpp"

namespace pcmgen {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Mat<float>;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
Mat<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Parameters and gradients
// ---------------------------------------------------------------------------

template <typename T>
class ParameterStore {
 public:
  int add(std::string name, Mat<T> value) {
    if (find(name)) throw Error("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const Mat<T>& value(int id) const { return values_.at(static_cast<std::size_t>(id)); }
  Mat<T>& value(int id) { return values_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      out.add(names_[i], values_[i].template cast<U>());
    }
    return out;
  }

  bool operator==(const ParameterStore& o) const {
    if (names_ != o.names_ || values_.size() != o.values_.size()) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i].rows() != o.values_[i].rows() || values_[i].cols() != o.values_[i].cols() ||
          values_[i] != o.values_[i]) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<T>> values_;
};

/// One gradient matrix per parameter id, zero where the loss does not reach.
template <typename T>
using Gradients = std::vector<Mat<T>>;

template <typename T>
Gradients<T> zero_gradients(const ParameterStore<T>& params) {
  Gradients<T> g;
  g.reserve(static_cast<std::size_t>(params.size()));
  for (int i = 0; i < params.size(); ++i) {
    g.push_back(Mat<T>::Zero(params.value(i).rows(), params.value(i).cols()));
  }
  return g;
}

template <typename T>
void accumulate(Gradients<T>& into, const Gradients<T>& g, T weight = T(1)) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += weight * g[i];
}

template <typename T>
double global_norm(const Gradients<T>& g) {
  double sq = 0;
  for (const auto& m : g) sq += static_cast<double>(m.squaredNorm());
  return std::sqrt(sq);
}

/// Rescales so the global norm is at most max_norm. Returns the pre-clip norm.
template <typename T>
double clip_global_norm(Gradients<T>& g, double max_norm) {
  const double norm = global_norm(g);
  if (norm > max_norm && norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& m : g) m *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  MatMulNT,
  Add,
  Mul,
  AddBias,
  Tanh,
  Sigmoid,
  Softmax,
  Embedding,
  Concat,
  StackRows,
  SliceRows,
  CrossEntropy,
  Gru,
  Blend,
  AttentionScores,
  AttentionContext,
  Scale,
  Sum,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Embedding: return "embedding";
    case OpKind::Concat: return "concat";
    case OpKind::StackRows: return "stack_rows";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Gru: return "gru";
    case OpKind::Blend: return "blend";
    case OpKind::AttentionScores: return "attention_scores";
    case OpKind::AttentionContext: return "attention_context";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
  }
  return "?";
}

/// Handle to a tape node.
struct Var {
  int id = -1;
};

/// Append-only record of operations. Node ids are topologically ordered by
/// construction, so backward is a single reverse sweep. A tape reads
/// parameters but never mutates them; gradients come back from backward().
template <typename T>
class Tape {
 public:
  explicit Tape(const ParameterStore<T>& params) : params_(params) {
    param_nodes_.assign(static_cast<std::size_t>(params.size()), -1);
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Mat<T>& value(Var v) const { return node(v).val(); }
  OpKind kind(Var v) const { return node(v).op; }

  Var constant(Mat<T> value) {
    Node n;
    n.op = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// The node for a parameter; repeated calls return the same node.
  Var parameter(int pid) {
    auto& slot = param_nodes_.at(static_cast<std::size_t>(pid));
    if (slot >= 0) return Var{slot};
    Node n;
    n.op = OpKind::Parameter;
    n.param = pid;
    n.ref = &params_.value(pid);
    n.needs_grad = true;
    slot = push(std::move(n)).id;
    return Var{slot};
  }

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows()) shape_fail("matmul", A, B);
    Node n = make(OpKind::MatMul, {a, b});
    n.value.noalias() = A * B;
    return push(std::move(n));
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.cols()) shape_fail("matmul_nt", A, B);
    Node n = make(OpKind::MatMulNT, {a, b});
    n.value.noalias() = A * B.transpose();
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    same_shape("add", a, b);
    Node n = make(OpKind::Add, {a, b});
    n.value = value(a) + value(b);
    return push(std::move(n));
  }

  Var mul(Var a, Var b) {
    same_shape("mul", a, b);
    Node n = make(OpKind::Mul, {a, b});
    n.value = value(a).cwiseProduct(value(b));
    return push(std::move(n));
  }

  /// Adds a 1 x n bias row to every row of a.
  Var add_bias(Var a, Var bias) {
    const auto& A = value(a);
    const auto& b = value(bias);
    if (b.rows() != 1 || b.cols() != A.cols()) shape_fail("add_bias", A, b);
    Node n = make(OpKind::AddBias, {a, bias});
    n.value = A.rowwise() + b.row(0);
    return push(std::move(n));
  }

  Var tanh(Var a) {
    Node n = make(OpKind::Tanh, {a});
    n.value = value(a).array().tanh().matrix();
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    Node n = make(OpKind::Sigmoid, {a});
    n.value = value(a).unaryExpr([](T x) { return stable_sigmoid(x); });
    return push(std::move(n));
  }

  /// Row-wise softmax.
  Var softmax(Var a) {
    Node n = make(OpKind::Softmax, {a});
    n.value = row_softmax(value(a));
    return push(std::move(n));
  }

  /// Rows of `table` selected by ids.
  Var embedding(Var table, std::span<const int> ids) {
    const auto& E = value(table);
    Node n = make(OpKind::Embedding, {table});
    n.value.resize(static_cast<Eigen::Index>(ids.size()), E.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= E.rows()) {
        throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " +
                         shape_str(E.rows(), E.cols()));
      }
      n.value.row(static_cast<Eigen::Index>(i)) = E.row(ids[i]);
    }
    n.ids.assign(ids.begin(), ids.end());
    return push(std::move(n));
  }

  /// Column-wise concatenation.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) shape_fail("concat", value(parts[0]), value(p));
      cols += value(p).cols();
    }
    Node n = make(OpKind::Concat, parts);
    n.value.resize(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
      n.value.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(std::move(n));
  }
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

  /// Row-wise concatenation.
  Var stack_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("stack_rows: no inputs");
    const auto cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) shape_fail("stack_rows", value(parts[0]), value(p));
      rows += value(p).rows();
    }
    Node n = make(OpKind::StackRows, parts);
    n.value.resize(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
      n.value.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    return push(std::move(n));
  }

  Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
    const auto& A = value(a);
    if (begin < 0 || count < 1 || begin + count > A.rows()) {
      throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                       std::to_string(begin + count) + ") outside " + shape_str(A.rows(), A.cols()));
    }
    Node n = make(OpKind::SliceRows, {a});
    n.value = A.middleRows(begin, count);
    n.begin = begin;
    return push(std::move(n));
  }

  /// Mean token cross entropy of row-wise logits against target ids,
  /// skipping rows whose target is `ignore_index`. Result is 1x1.
  Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index = 0) {
    const auto& L = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != L.rows()) {
      throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                       shape_str(L.rows(), L.cols()));
    }
    Node n = make(OpKind::CrossEntropy, {logits});
    n.aux = row_softmax(L);
    double total = 0;
    int count = 0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
      const int t = targets[static_cast<std::size_t>(i)];
      if (t == ignore_index) continue;
      if (t < 0 || t >= L.cols()) throw ShapeError("cross_entropy: target id out of range");
      const T mx = L.row(i).maxCoeff();
      const double lse = static_cast<double>(mx) +
                         std::log(static_cast<double>((L.row(i).array() - mx).exp().sum()));
      total += lse - static_cast<double>(L(i, t));
      ++count;
    }
    if (count == 0) throw ShapeError("cross_entropy: every target is ignored");
    n.value = Mat<T>::Constant(1, 1, static_cast<T>(total / count));
    n.ids.assign(targets.begin(), targets.end());
    n.ignore = ignore_index;
    n.count = count;
    return push(std::move(n));
  }

  /// Gated recurrent update. gx and gh are B x 3H pre-activations laid out
  /// [reset | update | candidate] from the input and the previous state;
  /// h is B x H.
  ///   r = s(gx_r + gh_r), z = s(gx_z + gh_z), n = tanh(gx_n + r * gh_n)
  ///   h' = (1 - z) * n + z * h
  Var gru(Var gx, Var gh, Var h) {
    const auto& X = value(gx);
    const auto& G = value(gh);
    const auto& H = value(h);
    const auto hidden = H.cols();
    if (X.cols() != 3 * hidden || G.cols() != 3 * hidden || X.rows() != H.rows() ||
        G.rows() != H.rows()) {
      throw ShapeError("gru: gates " + shape_str(X.rows(), X.cols()) + " / " +
                       shape_str(G.rows(), G.cols()) + " vs state " + shape_str(H.rows(), H.cols()));
    }
    Node n = make(OpKind::Gru, {gx, gh, h});
    n.aux.resize(H.rows(), 3 * hidden);
    auto r = n.aux.leftCols(hidden);
    auto z = n.aux.middleCols(hidden, hidden);
    auto c = n.aux.rightCols(hidden);
    r = (X.leftCols(hidden) + G.leftCols(hidden)).unaryExpr([](T v) { return stable_sigmoid(v); });
    z = (X.middleCols(hidden, hidden) + G.middleCols(hidden, hidden)).unaryExpr([](T v) {
      return stable_sigmoid(v);
    });
    c = (X.rightCols(hidden).array() + r.array() * G.rightCols(hidden).array()).tanh().matrix();
    n.value = ((T(1) - z.array()) * c.array() + z.array() * H.array()).matrix();
    return push(std::move(n));
  }

  /// Row i: mask[i] * a + (1 - mask[i]) * b. Carries recurrent state through
  /// padded positions.
  Var blend(Var a, Var b, std::span<const T> mask) {
    same_shape("blend", a, b);
    if (static_cast<Eigen::Index>(mask.size()) != value(a).rows()) {
      throw ShapeError("blend: mask length " + std::to_string(mask.size()) + " for " +
                       shape_str(value(a).rows(), value(a).cols()));
    }
    Node n = make(OpKind::Blend, {a, b});
    n.aux = Eigen::Map<const Mat<T>>(mask.data(), static_cast<Eigen::Index>(mask.size()), 1);
    n.value = value(a);
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      const T m = n.aux(i, 0);
      n.value.row(i) = m * value(a).row(i) + (T(1) - m) * value(b).row(i);
    }
    return push(std::move(n));
  }

  /// query: B x D, keys: (S*B) x D with position j of item b at row j*B + b.
  /// Returns B x S dot products.
  Var attention_scores(Var query, Var keys) {
    const auto& Q = value(query);
    const auto& K = value(keys);
    const auto batch = Q.rows();
    if (K.cols() != Q.cols() || K.rows() % batch != 0) shape_fail("attention_scores", Q, K);
    const auto steps = K.rows() / batch;
    Node n = make(OpKind::AttentionScores, {query, keys});
    n.value.resize(batch, steps);
    for (Eigen::Index j = 0; j < steps; ++j) {
      n.value.col(j) = Q.cwiseProduct(K.middleRows(j * batch, batch)).rowwise().sum();
    }
    return push(std::move(n));
  }

  /// weights: B x S, values: (S*B) x D. Returns B x D weighted sums.
  Var attention_context(Var weights, Var values) {
    const auto& W = value(weights);
    const auto& V = value(values);
    const auto batch = W.rows();
    const auto steps = W.cols();
    if (V.rows() != steps * batch) shape_fail("attention_context", W, V);
    Node n = make(OpKind::AttentionContext, {weights, values});
    n.value = Mat<T>::Zero(batch, V.cols());
    for (Eigen::Index j = 0; j < steps; ++j) {
      n.value += (V.middleRows(j * batch, batch).array().colwise() * W.col(j).array()).matrix();
    }
    return push(std::move(n));
  }

  Var scale(Var a, T s) {
    Node n = make(OpKind::Scale, {a});
    n.value = value(a) * s;
    n.scalar = s;
    return push(std::move(n));
  }

  /// Sum of all entries, 1x1.
  Var sum(Var a) {
    Node n = make(OpKind::Sum, {a});
    n.value = Mat<T>::Constant(1, 1, value(a).sum());
    return push(std::move(n));
  }

  /// Reverse sweep from a scalar loss. Returns per-parameter gradients,
  /// zero for parameters the loss does not depend on.
  Gradients<T> backward(Var loss) {
    const auto& L = value(loss);
    if (L.rows() != 1 || L.cols() != 1) {
      throw ShapeError("backward: loss must be 1x1, got " + shape_str(L.rows(), L.cols()));
    }
    grads_.assign(nodes_.size(), Mat<T>());
    grads_[static_cast<std::size_t>(loss.id)] = Mat<T>::Constant(1, 1, T(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& nd = nodes_[static_cast<std::size_t>(id)];
      Mat<T>& G = grads_[static_cast<std::size_t>(id)];
      if (!nd.needs_grad || G.size() == 0) continue;
      backprop(nd, G);
    }
    Gradients<T> out = zero_gradients(params_);
    for (std::size_t pid = 0; pid < param_nodes_.size(); ++pid) {
      const int nid = param_nodes_[pid];
      if (nid >= 0 && grads_[static_cast<std::size_t>(nid)].size() != 0) {
        out[pid] = grads_[static_cast<std::size_t>(nid)];
      }
    }
    grads_.clear();
    return out;
  }

  static T stable_sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  static Mat<T> row_softmax(const Mat<T>& x) {
    Mat<T> y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const T mx = x.row(i).maxCoeff();
      y.row(i) = (x.row(i).array() - mx).exp().matrix();
      y.row(i) /= y.row(i).sum();
    }
    return y;
  }

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    std::vector<int> inputs;
    Mat<T> value;
    const Mat<T>* ref = nullptr;  // parameter nodes alias the store
    Mat<T> aux;
    std::vector<int> ids;
    int param = -1;
    int ignore = 0;
    int count = 0;
    Eigen::Index begin = 0;
    T scalar{};
    bool needs_grad = false;

    const Mat<T>& val() const { return ref ? *ref : value; }
  };

  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw Error("invalid tape variable " + std::to_string(v.id));
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Node make(OpKind op, std::initializer_list<Var> in) {
    return make(op, std::span<const Var>(in.begin(), in.size()));
  }

  Node make(OpKind op, std::span<const Var> in) {
    Node n;
    n.op = op;
    n.inputs.reserve(in.size());
    for (Var v : in) {
      n.needs_grad |= node(v).needs_grad;
      n.inputs.push_back(v.id);
    }
    return n;
  }

  Var push(Node n) {
    if (!n.ref && !n.value.allFinite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op_name(n.op) +
                         "' at node " + std::to_string(nodes_.size()));
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  [[noreturn]] static void shape_fail(const char* op, const Mat<T>& a, const Mat<T>& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.rows(), a.cols()) +
                     " and " + shape_str(b.rows(), b.cols()));
  }

  void same_shape(const char* op, Var a, Var b) const {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail(op, A, B);
  }

  Mat<T>& grad_of(int id) {
    Mat<T>& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) {
      const auto& v = nodes_[static_cast<std::size_t>(id)].val();
      g = Mat<T>::Zero(v.rows(), v.cols());
    }
    return g;
  }

  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  void backprop(const Node& nd, const Mat<T>& G) {
    const auto& in = nd.inputs;
    auto val = [&](std::size_t k) -> const Mat<T>& {
      return nodes_[static_cast<std::size_t>(in[k])].val();
    };
    switch (nd.op) {
      case OpKind::Constant:
      case OpKind::Parameter:
        break;
      case OpKind::MatMul:
        if (wants(in[0])) grad_of(in[0]).noalias() += G * val(1).transpose();
        if (wants(in[1])) grad_of(in[1]).noalias() += val(0).transpose() * G;
        break;
      case OpKind::MatMulNT:
        if (wants(in[0])) grad_of(in[0]).noalias() += G * val(1);
        if (wants(in[1])) grad_of(in[1]).noalias() += G.transpose() * val(0);
        break;
      case OpKind::Add:
        if (wants(in[0])) grad_of(in[0]) += G;
        if (wants(in[1])) grad_of(in[1]) += G;
        break;
      case OpKind::Mul:
        if (wants(in[0])) grad_of(in[0]) += G.cwiseProduct(val(1));
        if (wants(in[1])) grad_of(in[1]) += G.cwiseProduct(val(0));
        break;
      case OpKind::AddBias:
        if (wants(in[0])) grad_of(in[0]) += G;
        if (wants(in[1])) grad_of(in[1]) += G.colwise().sum();
        break;
      case OpKind::Tanh:
        if (wants(in[0])) {
          grad_of(in[0]).array() += G.array() * (T(1) - nd.value.array().square());
        }
        break;
      case OpKind::Sigmoid:
        if (wants(in[0])) {
          grad_of(in[0]).array() += G.array() * nd.value.array() * (T(1) - nd.value.array());
        }
        break;
      case OpKind::Softmax:
        if (wants(in[0])) {
          const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = G.cwiseProduct(nd.value).rowwise().sum();
          grad_of(in[0]).array() +=
              nd.value.array() * (G.array().colwise() - dots.array());
        }
        break;
      case OpKind::Embedding:
        if (wants(in[0])) {
          Mat<T>& gt = grad_of(in[0]);
          for (std::size_t i = 0; i < nd.ids.size(); ++i) {
            gt.row(nd.ids[i]) += G.row(static_cast<Eigen::Index>(i));
          }
        }
        break;
      case OpKind::Concat: {
        Eigen::Index c = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const auto w = val(k).cols();
          if (wants(in[k])) grad_of(in[k]) += G.middleCols(c, w);
          c += w;
        }
        break;
      }
      case OpKind::StackRows: {
        Eigen::Index r = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const auto h = val(k).rows();
          if (wants(in[k])) grad_of(in[k]) += G.middleRows(r, h);
          r += h;
        }
        break;
      }
      case OpKind::SliceRows:
        if (wants(in[0])) grad_of(in[0]).middleRows(nd.begin, G.rows()) += G;
        break;
      case OpKind::CrossEntropy:
        if (wants(in[0])) {
          Mat<T>& gl = grad_of(in[0]);
          const T s = G(0, 0) / static_cast<T>(nd.count);
          for (Eigen::Index i = 0; i < gl.rows(); ++i) {
            const int t = nd.ids[static_cast<std::size_t>(i)];
            if (t == nd.ignore) continue;
            gl.row(i) += s * nd.aux.row(i);
            gl(i, t) -= s;
          }
        }
        break;
      case OpKind::Gru: {
        const auto hidden = val(2).cols();
        const auto r = nd.aux.leftCols(hidden).array();
        const auto z = nd.aux.middleCols(hidden, hidden).array();
        const auto c = nd.aux.rightCols(hidden).array();
        const auto Ga = G.array();
        const auto& GH = val(1);
        Mat<T> dn = (Ga * (T(1) - z) * (T(1) - c.square())).matrix();
        Mat<T> dz = (Ga * (val(2).array() - c) * z * (T(1) - z)).matrix();
        Mat<T> dr = (dn.array() * GH.rightCols(hidden).array() * r * (T(1) - r)).matrix();
        if (wants(in[0])) {
          Mat<T>& gx = grad_of(in[0]);
          gx.leftCols(hidden) += dr;
          gx.middleCols(hidden, hidden) += dz;
          gx.rightCols(hidden) += dn;
        }
        if (wants(in[1])) {
          Mat<T>& gh = grad_of(in[1]);
          gh.leftCols(hidden) += dr;
          gh.middleCols(hidden, hidden) += dz;
          gh.rightCols(hidden).array() += dn.array() * r;
        }
        if (wants(in[2])) grad_of(in[2]).array() += Ga * z;
        break;
      }
      case OpKind::Blend:
        for (Eigen::Index i = 0; i < G.rows(); ++i) {
          const T m = nd.aux(i, 0);
          if (wants(in[0])) grad_of(in[0]).row(i) += m * G.row(i);
          if (wants(in[1])) grad_of(in[1]).row(i) += (T(1) - m) * G.row(i);
        }
        break;
      case OpKind::AttentionScores: {
        const auto& Q = val(0);
        const auto& K = val(1);
        const auto batch = Q.rows();
        for (Eigen::Index j = 0; j < G.cols(); ++j) {
          const auto gcol = G.col(j).array();
          if (wants(in[0])) {
            grad_of(in[0]).array() += K.middleRows(j * batch, batch).array().colwise() * gcol;
          }
          if (wants(in[1])) {
            grad_of(in[1]).middleRows(j * batch, batch).array() += Q.array().colwise() * gcol;
          }
        }
        break;
      }
      case OpKind::AttentionContext: {
        const auto& W = val(0);
        const auto& V = val(1);
        const auto batch = W.rows();
        for (Eigen::Index j = 0; j < W.cols(); ++j) {
          if (wants(in[0])) {
            grad_of(in[0]).col(j) += G.cwiseProduct(V.middleRows(j * batch, batch)).rowwise().sum();
          }
          if (wants(in[1])) {
            grad_of(in[1]).middleRows(j * batch, batch).array() +=
                G.array().colwise() * W.col(j).array();
          }
        }
        break;
      }
      case OpKind::Scale:
        if (wants(in[0])) grad_of(in[0]) += nd.scalar * G;
        break;
      case OpKind::Sum:
        if (wants(in[0])) grad_of(in[0]).array() += G(0, 0);
        break;
    }
  }

  const ParameterStore<T>& params_;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
  std::vector<Mat<T>> grads_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::uint64_t t = 0;
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;

  AdamState() = default;
  AdamState(const ParameterStore<T>& params, AdamConfig config) : cfg(config) {
    m = zero_gradients(params);
    v = zero_gradients(params);
  }
};

/// Bias-corrected adaptive-moment update, in place.
template <typename T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
  if (grads.size() != static_cast<std::size_t>(params.size()) || state.m.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  state.t += 1;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T step = static_cast<T>(c.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = params.value(static_cast<int>(i));
    const auto& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeError("adam_step: gradient " + shape_str(g.rows(), g.cols()) + " for parameter '" +
                       params.name(static_cast<int>(i)) + "' " + shape_str(p.rows(), p.cols()));
    }
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g.cwiseAbs2();
    p.array() -= step * state.m[i].array() / (state.v[i].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

}  // namespace pcmgen
