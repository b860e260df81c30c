#pragma once

// One small graph per tape op kind, each reduced to a scalar through a fixed
// random projection so every output entry contributes to the loss.

#include <functional>
#include <string>
#include <vector>

#include "pcmgen/rng.hpp"
#include "pcmgen/tensor.hpp"
#include "support/gradcheck.hpp"

namespace pcmgen::oracle {

template <typename T>
struct OpCase {
  std::string name;
  ParameterStore<T> params;
  std::function<Var(Tape<T>&)> loss;
};

// sum(out * R) for a fixed random R of out's shape.
template <typename T>
Var project_to_scalar(Tape<T>& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  const auto& v = tape.value(out);
  Var r = tape.constant(uniform_matrix<T>(v.rows(), v.cols(), 1.0, rng));
  return tape.sum(tape.mul(out, r));
}

template <typename T>
std::vector<OpCase<T>> op_cases(std::uint64_t seed = 7) {
  std::vector<OpCase<T>> cases;
  Rng rng(seed);
  auto mat = [&](int r, int c, double bound = 1.0) { return uniform_matrix<T>(r, c, bound, rng); };
  auto add_case = [&](std::string name, std::vector<std::pair<std::string, Mat<T>>> inputs,
                      std::function<Var(Tape<T>&, const std::vector<Var>&)> body) {
    OpCase<T> c;
    c.name = std::move(name);
    for (auto& [n, m] : inputs) c.params.add(n, std::move(m));
    const auto s = rng.next();
    c.loss = [body, s, count = static_cast<int>(inputs.size())](Tape<T>& tape) {
      std::vector<Var> vars;
      for (int i = 0; i < count; ++i) vars.push_back(tape.parameter(i));
      return project_to_scalar(tape, body(tape, vars), s);
    };
    cases.push_back(std::move(c));
  };

  add_case("matmul", {{"a", mat(3, 4)}, {"b", mat(4, 5)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); });
  add_case("matmul_nt", {{"a", mat(3, 4)}, {"b", mat(6, 4)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.matmul_nt(v[0], v[1]); });
  add_case("add", {{"a", mat(3, 4)}, {"b", mat(3, 4)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); });
  add_case("mul", {{"a", mat(3, 4)}, {"b", mat(3, 4)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); });
  add_case("add_bias", {{"a", mat(3, 4)}, {"b", mat(1, 4)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.add_bias(v[0], v[1]); });
  add_case("tanh", {{"a", mat(3, 4, 2.0)}}, [](Tape<T>& t, const std::vector<Var>& v) { return t.tanh(v[0]); });
  add_case("sigmoid", {{"a", mat(3, 4, 3.0)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); });
  add_case("softmax", {{"a", mat(3, 5, 2.0)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.softmax(v[0]); });
  add_case("embedding", {{"table", mat(6, 3)}}, [](Tape<T>& t, const std::vector<Var>& v) {
    const std::vector<int> ids = {2, 0, 2, 5};
    return t.embedding(v[0], ids);
  });
  add_case("concat", {{"a", mat(3, 2)}, {"b", mat(3, 4)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.concat({v[0], v[1]}); });
  add_case("stack_rows", {{"a", mat(2, 3)}, {"b", mat(4, 3)}}, [](Tape<T>& t, const std::vector<Var>& v) {
    const std::vector<Var> parts = {v[0], v[1]};
    return t.stack_rows(parts);
  });
  add_case("slice_rows", {{"a", mat(5, 3)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.slice_rows(v[0], 1, 3); });
  add_case("cross_entropy", {{"logits", mat(4, 5, 2.0)}}, [](Tape<T>& t, const std::vector<Var>& v) {
    const std::vector<int> targets = {1, 0, 4, 3};  // row 1 ignored (PAD = 0)
    return t.cross_entropy(v[0], targets, 0);
  });
  add_case("gru", {{"gx", mat(3, 6)}, {"gh", mat(3, 6)}, {"h", mat(3, 2)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.gru(v[0], v[1], v[2]); });
  add_case("blend", {{"a", mat(3, 4)}, {"b", mat(3, 4)}}, [](Tape<T>& t, const std::vector<Var>& v) {
    const std::vector<T> mask = {T(1), T(0), T(1)};
    return t.blend(v[0], v[1], mask);
  });
  add_case("attention_scores", {{"q", mat(2, 3)}, {"k", mat(8, 3)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.attention_scores(v[0], v[1]); });
  add_case("attention_context", {{"w", mat(2, 4)}, {"v", mat(8, 3)}},
           [](Tape<T>& t, const std::vector<Var>& v) { return t.attention_context(v[0], v[1]); });
  add_case("scale", {{"a", mat(3, 4)}}, [](Tape<T>& t, const std::vector<Var>& v) { return t.scale(v[0], T(-2.5)); });
  add_case("sum", {{"a", mat(3, 4)}}, [](Tape<T>& t, const std::vector<Var>& v) { return t.sum(v[0]); });
  return cases;
}

/// Random two-layer network with a cross-entropy head.
template <typename T>
OpCase<T> two_layer_network(std::uint64_t seed = 11) {
  Rng rng(seed);
  OpCase<T> c;
  c.name = "two_layer_network";
  c.params.add("x", uniform_matrix<T>(4, 5, 1.0, rng));
  c.params.add("w1", uniform_matrix<T>(5, 6, 0.8, rng));
  c.params.add("b1", uniform_matrix<T>(1, 6, 0.5, rng));
  c.params.add("w2", uniform_matrix<T>(6, 3, 0.8, rng));
  c.params.add("b2", uniform_matrix<T>(1, 3, 0.5, rng));
  c.loss = [](Tape<T>& t) {
    Var h = t.tanh(t.add_bias(t.matmul(t.parameter(0), t.parameter(1)), t.parameter(2)));
    Var logits = t.add_bias(t.matmul(h, t.parameter(3)), t.parameter(4));
    const std::vector<int> targets = {2, 1, 0, 1};
    return t.cross_entropy(logits, targets, -1);
  };
  return c;
}

}  // namespace pcmgen::oracle
