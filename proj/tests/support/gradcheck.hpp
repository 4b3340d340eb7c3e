#pragma once

// Central finite-difference checking for graph-built functions.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tagxfer/autodiff.hpp"
#include "tagxfer/corpus.hpp"
#include "tagxfer/model.hpp"
#include "tagxfer/random.hpp"

namespace tagxfer::testing {

using GraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline Array random_array(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(shape));
  for (double& v : a.raw()) v = rng.uniform(lo, hi);
  return a;
}

inline double eval_scalar(const GraphFn& f, const std::vector<Array>& xs) {
  Graph g(false);
  std::vector<Var> vs;
  for (const auto& x : xs) vs.push_back(g.constant(x));
  return f(g, vs).value()[0];
}

// Largest relative error between analytic and central-difference gradients
// over every input element.
inline double max_input_grad_error(const GraphFn& f, std::vector<Array> xs, double h = 1e-6) {
  Graph g;
  std::vector<Var> vs;
  for (const auto& x : xs) vs.push_back(g.input(x));
  Var out = f(g, vs);
  g.backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Array analytic = vs[k].grad();
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double keep = xs[k][i];
      xs[k][i] = keep + h;
      const double up = eval_scalar(f, xs);
      xs[k][i] = keep - h;
      const double down = eval_scalar(f, xs);
      xs[k][i] = keep;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

// Same check for every element of every parameter of a model, with the loss
// built by `loss`.
inline double max_param_grad_error(TaggerModel& model,
                                   const std::function<Var(Graph&)>& loss, double h = 1e-5) {
  model.zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  auto value = [&]() {
    Graph g(false);
    return loss(g).value()[0];
  };
  double worst = 0.0;
  for (Parameter* p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = value();
      p->value[i] = keep - h;
      const double down = value();
      p->value[i] = keep;
      worst = std::max(worst, rel_error(p->grad[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

// The whole tagger on one 3-token sentence at tiny dims, parameters nudged
// off their special initial values (zero biases, u = v = 1).
inline double tiny_tagger_grad_error(bool pretrand, std::uint64_t seed = 8) {
  AnnotatedCorpus c;
  c.sentences.push_back({{"ab", "c", "ba"}, {"X", "Y", "Z"}});
  ModelConfig cfg;
  cfg.char_emb_dim = 3;
  cfg.char_lstm_hidden = 2;
  cfg.word_emb_dim = 4;
  cfg.fe_hidden = 3;
  cfg.random_branch_k = 2;
  cfg.seed = 21;
  TaggerModel m(cfg, build_vocab(c), pretrand);
  Rng rng(seed);
  for (Parameter* p : m.parameters()) {
    for (double& v : p->value.raw()) v += rng.uniform(-0.3, 0.3);
  }
  const auto e = m.vocab().encode(c.sentences[0]);
  return max_param_grad_error(m, [&](Graph& g) { return m.loss(g, e); });
}

// One case per primitive plus a small composite. Each draws fresh inputs.
struct PrimitiveCase {
  const char* name;
  std::function<std::vector<Array>(Rng&)> inputs;
  GraphFn fn;
};

namespace detail {

// A fixed random projection turns any output into a scalar with
// non-uniform upstream gradients.
inline Var project(Graph& g, Var y) {
  Rng rng(99 + y.value().size());
  return g.sum(g.mul(y, g.constant(random_array(rng, y.shape()))));
}

inline std::vector<Array> vec(Rng& r, std::size_t n) { return {random_array(r, {n}, -2, 2)}; }

}  // namespace detail

inline std::vector<PrimitiveCase> primitive_cases() {
  using detail::project;
  using detail::vec;
  return {
      PrimitiveCase{"matmul_mv",
                    [](Rng& r) {
                      return std::vector<Array>{random_array(r, {3, 4}), random_array(r, {4})};
                    },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.matmul(v[0], v[1])); }},
      PrimitiveCase{"matmul_mm",
                    [](Rng& r) {
                      return std::vector<Array>{random_array(r, {2, 3}), random_array(r, {3, 4})};
                    },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.matmul(v[0], v[1])); }},
      PrimitiveCase{"add",
                    [](Rng& r) { return std::vector<Array>{random_array(r, {5}), random_array(r, {5})}; },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.add(v[0], v[1])); }},
      PrimitiveCase{"mul",
                    [](Rng& r) { return std::vector<Array>{random_array(r, {5}), random_array(r, {5})}; },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.mul(v[0], v[1])); }},
      PrimitiveCase{"concat",
                    [](Rng& r) { return std::vector<Array>{random_array(r, {2}), random_array(r, {3})}; },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.concat({v[0], v[1]})); }},
      PrimitiveCase{"sigmoid", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.sigmoid(v[0])); }},
      PrimitiveCase{"tanh", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.tanh(v[0])); }},
      PrimitiveCase{"l2_normalize", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.l2_normalize(v[0])); }},
      PrimitiveCase{"log_softmax", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.log_softmax(v[0])); }},
      PrimitiveCase{"softmax_cross_entropy", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) {
                      return g.softmax_cross_entropy(v[0], 4);
                    }},
      PrimitiveCase{"slice", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.slice(v[0], 2, 3)); }},
      PrimitiveCase{"scale", [](Rng& r) { return vec(r, 6); },
                    [](Graph& g, const std::vector<Var>& v) { return project(g, g.scale(v[0], -1.7)); }},
      PrimitiveCase{"two_layer",
                    [](Rng& r) {
                      return std::vector<Array>{random_array(r, {4}), random_array(r, {5, 4}),
                                              random_array(r, {3, 5})};
                    },
                    [](Graph& g, const std::vector<Var>& v) {
                      Var h = g.tanh(g.matmul(v[1], v[0]));
                      return g.softmax_cross_entropy(g.matmul(v[2], h), 1);
                    }}};
}

}  // namespace tagxfer::testing
