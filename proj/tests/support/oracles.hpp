#pragma once

// Independent reference implementations used to cross-check diagnostics.
// They favour directness over speed.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "tagxfer/array.hpp"
#include "tagxfer/random.hpp"

namespace tagxfer::testing {

// Pearson correlation written straight from the definition.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> column(const Array& a, std::size_t j) {
  std::vector<double> c(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) c[i] = a.at(i, j);
  return c;
}

// c[j][t] = pearson(after unit j, before unit t).
inline std::vector<std::vector<double>> correlation_oracle(const Array& before, const Array& after) {
  const std::size_t H = before.cols();
  std::vector<std::vector<double>> c(H, std::vector<double>(H));
  for (std::size_t j = 0; j < H; ++j) {
    for (std::size_t t = 0; t < H; ++t) c[j][t] = pearson(column(after, j), column(before, t));
  }
  return c;
}

// --- spans -------------------------------------------------------------------

using SpanKey = std::tuple<std::size_t, std::string, std::size_t, std::size_t>;  // sentence, type, start, end

inline std::string type_of(const std::string& label) { return label == "O" ? "" : label.substr(2); }

// Checks every (type, start, end) candidate: it is a chunk when its first
// label opens a chunk of that type, every later label is I-type, and the
// next label does not continue it. A label opens a chunk when it is B-type,
// or I-type not preceded by B-type/I-type.
inline std::set<SpanKey> brute_force_spans(std::size_t sentence, const std::vector<std::string>& labels) {
  std::set<SpanKey> out;
  const std::size_t n = labels.size();
  auto is = [&](std::size_t i, char p, const std::string& type) {
    return labels[i] != "O" && labels[i][0] == p && type_of(labels[i]) == type;
  };
  std::set<std::string> types;
  for (const auto& l : labels) {
    if (l != "O") types.insert(type_of(l));
  }
  for (const auto& type : types) {
    for (std::size_t s = 0; s < n; ++s) {
      const bool opens = is(s, 'B', type) ||
                         (is(s, 'I', type) && (s == 0 || !(is(s - 1, 'B', type) || is(s - 1, 'I', type))));
      if (!opens) continue;
      for (std::size_t e = s; e < n; ++e) {
        bool inside = true;
        for (std::size_t i = s + 1; i <= e; ++i) inside = inside && is(i, 'I', type);
        if (!inside) break;
        const bool closed = e + 1 == n || !is(e + 1, 'I', type);
        if (closed) out.insert({sentence, type, s, e});
      }
    }
  }
  return out;
}

struct SpanCounts {
  std::size_t gold = 0, pred = 0, matched = 0;
  double f1() const {
    const double p = pred ? static_cast<double>(matched) / static_cast<double>(pred) : 0.0;
    const double r = gold ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

inline SpanCounts span_oracle(const std::vector<std::vector<std::string>>& gold,
                              const std::vector<std::vector<std::string>>& pred) {
  std::set<SpanKey> g, p;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto gs = brute_force_spans(i, gold[i]);
    auto ps = brute_force_spans(i, pred[i]);
    g.insert(gs.begin(), gs.end());
    p.insert(ps.begin(), ps.end());
  }
  SpanCounts c;
  c.gold = g.size();
  c.pred = p.size();
  for (const auto& s : p) c.matched += g.count(s);
  return c;
}

inline std::vector<std::string> random_bio(Rng& rng, std::size_t n) {
  static const std::vector<std::string> labels = {"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"};
  std::vector<std::string> out(n);
  for (auto& l : out) l = labels[rng.below(labels.size())];
  return out;
}

// --- top-k -------------------------------------------------------------------

// Indices of the k largest (descending) or smallest (ascending) values, ties
// by index, via a full stable sort.
inline std::vector<std::size_t> topk_oracle(const std::vector<double>& v, std::size_t k, bool largest) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return largest ? v[a] > v[b] : v[a] < v[b];
  });
  idx.resize(k);
  return idx;
}

}  // namespace tagxfer::testing
