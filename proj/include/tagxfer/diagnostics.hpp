#pragma once

// Measurement instruments: accuracy and exact-match span F1, positive/negative
// transfer accounting, neuron correlation, top-k stimulus words, per-class
// deltas, weight histograms and the average normalized relative gain.
// Everything here is a pure function of its inputs. Fractions throughout;
// percentages are a presentation concern.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/array.hpp"
#include "tagxfer/errors.hpp"
#include "tagxfer/model.hpp"

namespace tagxfer {

using TagSequences = std::vector<std::vector<std::string>>;

namespace detail {

inline void check_aligned(const TagSequences& a, const TagSequences& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + " sentences");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) {
      throw ShapeError(std::string(what) + ": sentence " + std::to_string(i) + " has " +
                       std::to_string(a[i].size()) + " vs " + std::to_string(b[i].size()) +
                       " tokens");
    }
  }
}

}  // namespace detail

// --- token accuracy --------------------------------------------------------

template <typename T>
double token_accuracy(const std::vector<T>& gold, const std::vector<T>& pred) {
  if (gold.size() != pred.size()) {
    throw ShapeError("token_accuracy: " + std::to_string(gold.size()) + " gold vs " +
                     std::to_string(pred.size()) + " predicted labels");
  }
  if (gold.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += gold[i] == pred[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

inline double token_accuracy(const TagSequences& gold, const TagSequences& pred) {
  detail::check_aligned(gold, pred, "token_accuracy");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      hit += gold[i][t] == pred[i][t] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

// --- BIO spans -------------------------------------------------------------

struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  friend auto operator<=>(const Span&, const Span&) = default;
};

struct BioLabel {
  char prefix = 'O';  // 'O', 'B' or 'I'
  std::string type;
};

inline BioLabel parse_bio(const std::string& label) {
  if (label == "O") return {};
  if (label.size() >= 3 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-') {
    return {label[0], label.substr(2)};
  }
  throw LabelError("malformed BIO label '" + label + "'");
}

inline bool is_bio_label(const std::string& label) {
  try {
    parse_bio(label);
    return true;
  } catch (const LabelError&) {
    return false;
  }
}

// True when every tag is O, B-X or I-X and at least one is not O.
inline bool is_bio_tagset(const std::vector<std::string>& tags) {
  bool entity = false;
  for (const auto& t : tags) {
    if (!is_bio_label(t)) return false;
    entity = entity || t != "O";
  }
  return entity;
}

// Chunks of one sentence. An I-X that does not continue an open X chunk opens
// a new one, as conlleval does.
inline std::vector<Span> extract_spans(const std::vector<std::string>& labels) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const BioLabel l = parse_bio(labels[i]);
    const bool continues = l.prefix == 'I' && open && cur.type == l.type;
    if (continues) {
      cur.end = i;
      continue;
    }
    if (open) spans.push_back(cur);
    open = l.prefix != 'O';
    if (open) cur = Span{l.type, i, i};
  }
  if (open) spans.push_back(cur);
  return spans;
}

struct SpanScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold_spans = 0;
  std::size_t pred_spans = 0;
  std::size_t matched = 0;
};

inline SpanScore span_f1(const TagSequences& gold, const TagSequences& pred) {
  detail::check_aligned(gold, pred, "span_f1");
  SpanScore s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = extract_spans(gold[i]);
    auto p = extract_spans(pred[i]);
    std::set<Span> gs(g.begin(), g.end());
    s.gold_spans += g.size();
    s.pred_spans += p.size();
    for (const auto& sp : p) s.matched += gs.count(sp);
  }
  s.precision = s.pred_spans ? static_cast<double>(s.matched) / static_cast<double>(s.pred_spans) : 0.0;
  s.recall = s.gold_spans ? static_cast<double>(s.matched) / static_cast<double>(s.gold_spans) : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

inline SpanScore span_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  return span_f1(TagSequences{gold}, TagSequences{pred});
}

// --- evaluation ------------------------------------------------------------

struct EvalResult {
  std::size_t tokens = 0;
  double token_accuracy = 0.0;
  std::optional<SpanScore> span;
  std::map<std::string, double> per_class_accuracy;
  std::map<std::string, std::size_t> per_class_count;
  std::map<std::string, std::map<std::string, std::size_t>> confusion;  // gold -> pred -> n

  nlohmann::json to_json() const {
    nlohmann::json j = {{"format", "tagxfer.eval"},
                        {"version", 1},
                        {"tokens", tokens},
                        {"token_accuracy", token_accuracy},
                        {"per_class_accuracy", per_class_accuracy},
                        {"per_class_count", per_class_count},
                        {"confusion", confusion}};
    if (span) {
      j["span_f1"] = {{"precision", span->precision}, {"recall", span->recall},
                      {"f1", span->f1},               {"gold_spans", span->gold_spans},
                      {"pred_spans", span->pred_spans}, {"matched", span->matched}};
    } else {
      j["span_f1"] = nullptr;
    }
    return j;
  }
};

// Span F1 is filled in when the gold labels form a BIO tag-set.
inline EvalResult evaluate(const TagSequences& gold, const TagSequences& pred) {
  detail::check_aligned(gold, pred, "evaluate");
  EvalResult r;
  std::map<std::string, std::size_t> hits;
  std::vector<std::string> gold_tags;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      const auto& g = gold[i][t];
      const auto& p = pred[i][t];
      ++r.tokens;
      ++r.per_class_count[g];
      ++r.confusion[g][p];
      if (g == p) ++hits[g];
      gold_tags.push_back(g);
    }
  }
  std::size_t correct = 0;
  for (const auto& [tag, n] : r.per_class_count) {
    const std::size_t h = hits.count(tag) ? hits.at(tag) : 0;
    correct += h;
    r.per_class_accuracy[tag] = static_cast<double>(h) / static_cast<double>(n);
  }
  r.token_accuracy = r.tokens ? static_cast<double>(correct) / static_cast<double>(r.tokens) : 0.0;
  std::set<std::string> uniq(gold_tags.begin(), gold_tags.end());
  if (is_bio_tagset({uniq.begin(), uniq.end()})) {
    bool pred_ok = true;
    for (const auto& s : pred) {
      for (const auto& l : s) pred_ok = pred_ok && is_bio_label(l);
    }
    if (pred_ok) r.span = span_f1(gold, pred);
  }
  return r;
}

// --- positive / negative transfer -----------------------------------------

struct TransferToken {
  std::size_t sentence = 0;
  std::size_t token = 0;
  std::string gold;
  std::string pred_baseline;
  std::string pred_transfer;
};

struct TransferReport {
  std::size_t n = 0;
  std::size_t n_corrected = 0;
  std::size_t n_falsified = 0;
  double pt = 0.0;
  double nt = 0.0;
  double gain = 0.0;
  double accuracy_baseline = 0.0;
  double accuracy_transfer = 0.0;
  std::vector<TransferToken> corrected;
  std::vector<TransferToken> falsified;

  nlohmann::json to_json() const {
    auto list = [](const std::vector<TransferToken>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& t : v) {
        a.push_back({{"sentence", t.sentence},
                     {"token", t.token},
                     {"gold", t.gold},
                     {"pred_baseline", t.pred_baseline},
                     {"pred_transfer", t.pred_transfer}});
      }
      return a;
    };
    return {{"format", "tagxfer.transfer_report"},
            {"version", 1},
            {"n", n},
            {"n_corrected", n_corrected},
            {"n_falsified", n_falsified},
            {"pt", pt},
            {"nt", nt},
            {"gain", gain},
            {"accuracy_baseline", accuracy_baseline},
            {"accuracy_transfer", accuracy_transfer},
            {"corrected", list(corrected)},
            {"falsified", list(falsified)}};
  }
};

// corrected: wrong under the baseline, right under transfer;
// falsified: right under the baseline, wrong under transfer.
inline TransferReport transfer_decomposition(const TagSequences& gold, const TagSequences& baseline,
                                             const TagSequences& transfer) {
  detail::check_aligned(gold, baseline, "transfer_decomposition (baseline)");
  detail::check_aligned(gold, transfer, "transfer_decomposition (transfer)");
  TransferReport r;
  std::size_t right_a = 0, right_b = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      const bool a = baseline[i][t] == gold[i][t];
      const bool b = transfer[i][t] == gold[i][t];
      ++r.n;
      right_a += a;
      right_b += b;
      if (!a && b) r.corrected.push_back({i, t, gold[i][t], baseline[i][t], transfer[i][t]});
      if (a && !b) r.falsified.push_back({i, t, gold[i][t], baseline[i][t], transfer[i][t]});
    }
  }
  r.n_corrected = r.corrected.size();
  r.n_falsified = r.falsified.size();
  if (r.n > 0) {
    const double n = static_cast<double>(r.n);
    r.pt = static_cast<double>(r.n_corrected) / n;
    r.nt = static_cast<double>(r.n_falsified) / n;
    r.accuracy_baseline = static_cast<double>(right_a) / n;
    r.accuracy_transfer = static_cast<double>(right_b) / n;
  }
  r.gain = r.pt - r.nt;
  return r;
}

template <typename T>
TransferReport transfer_decomposition(const std::vector<T>& gold, const std::vector<T>& baseline,
                                      const std::vector<T>& transfer) {
  auto wrap = [](const std::vector<T>& v) {
    std::vector<std::string> s;
    s.reserve(v.size());
    for (const auto& x : v) {
      if constexpr (std::is_same_v<T, std::string>) {
        s.push_back(x);
      } else {
        s.push_back(std::to_string(x));
      }
    }
    return TagSequences{std::move(s)};
  };
  return transfer_decomposition(wrap(gold), wrap(baseline), wrap(transfer));
}

// --- neuron correlation ----------------------------------------------------

struct CorrelationMatrix {
  Array c;  // H x H; rows = units after fine-tuning, columns = units before
  std::vector<std::size_t> constant_after;   // zero-variance units, after
  std::vector<std::size_t> constant_before;  // zero-variance units, before

  std::vector<double> charges() const {
    std::vector<double> d(c.rows());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = c.at(j, j);
    return d;
  }
};

// Standard deviations below this are treated as a constant unit.
inline constexpr double kZeroVariance = 1e-12;

// c_jt = Pearson(after[:, j], before[:, t]) with population moments. Any pair
// involving a constant unit is 0 and the unit is listed.
inline CorrelationMatrix correlation_matrix(const Array& before, const Array& after) {
  if (before.rank() != 2 || after.rank() != 2) throw ShapeError("activation records must be matrices");
  if (before.rows() != after.rows()) {
    throw ShapeError("token counts differ: before " + std::to_string(before.rows()) + ", after " +
                     std::to_string(after.rows()));
  }
  if (before.cols() != after.cols()) {
    throw ShapeError("unit counts differ: before " + std::to_string(before.cols()) + ", after " +
                     std::to_string(after.cols()));
  }
  const std::size_t N = before.rows();
  const std::size_t H = before.cols();
  CorrelationMatrix out;
  out.c = Array({H, H});

  auto standardize = [&](const Array& a, std::vector<std::size_t>& flagged) {
    Array z({N, H});
    for (std::size_t j = 0; j < H; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < N; ++i) mean += a.at(i, j);
      mean /= static_cast<double>(N);
      double var = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double d = a.at(i, j) - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / static_cast<double>(N));
      if (sd < kZeroVariance) {
        flagged.push_back(j);
        continue;  // column stays zero
      }
      for (std::size_t i = 0; i < N; ++i) z.at(i, j) = (a.at(i, j) - mean) / sd;
    }
    return z;
  };
  const Array za = standardize(after, out.constant_after);
  const Array zb = standardize(before, out.constant_before);
  for (std::size_t j = 0; j < H; ++j) {
    for (std::size_t t = 0; t < H; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) acc += za.at(i, j) * zb.at(i, t);
      out.c.at(j, t) = acc / static_cast<double>(N);
    }
  }
  return out;
}

inline CorrelationMatrix correlation_matrix(const ActivationRecord& before,
                                            const ActivationRecord& after) {
  if (!before.tokens.empty() && !after.tokens.empty() && before.tokens != after.tokens) {
    throw ShapeError("activation records were taken over different token sequences");
  }
  return correlation_matrix(before.h, after.h);
}

// --- top-k stimulus words --------------------------------------------------

struct Stimulus {
  std::size_t token = 0;  // index into the validation token sequence
  std::string word;
  double activation = 0.0;
};

struct TopKMatrix {
  std::size_t unit = 0;
  std::vector<int> epochs;
  std::vector<std::vector<Stimulus>> best_positive;  // [epoch][rank], descending
  std::vector<std::vector<Stimulus>> best_negative;  // [epoch][rank], ascending
};

// For every unit and snapshot, the k tokens with the highest and the lowest
// activation. Equal activations are ordered by token index.
inline std::vector<TopKMatrix> topk_stimulus(const std::vector<ActivationRecord>& snapshots,
                                             std::size_t k) {
  if (snapshots.empty()) throw ConfigError("topk_stimulus needs at least one snapshot");
  const std::size_t N = snapshots.front().token_count();
  const std::size_t H = snapshots.front().units();
  if (k == 0 || k > N) {
    throw ConfigError("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(N) + "]");
  }
  for (const auto& s : snapshots) {
    if (s.token_count() != N || s.units() != H) {
      throw ShapeError("snapshots disagree on token count or unit count");
    }
    if (!s.tokens.empty() && s.tokens != snapshots.front().tokens) {
      throw ShapeError("snapshots were taken over different token sequences");
    }
  }
  const auto& words = snapshots.front().tokens;
  std::vector<TopKMatrix> out(H);
  std::vector<std::size_t> order(N);
  for (std::size_t j = 0; j < H; ++j) {
    TopKMatrix& m = out[j];
    m.unit = j;
    for (const auto& s : snapshots) {
      m.epochs.push_back(s.epoch);
      for (std::size_t i = 0; i < N; ++i) order[i] = i;
      auto pick = [&](auto cmp) {
        std::vector<std::size_t> idx = order;
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
        std::vector<Stimulus> col;
        for (std::size_t r = 0; r < k; ++r) {
          const std::size_t i = idx[r];
          col.push_back({i, i < words.size() ? words[i] : std::string(), s.h.at(i, j)});
        }
        return col;
      };
      m.best_positive.push_back(pick([&](std::size_t a, std::size_t b) {
        const double va = s.h.at(a, j), vb = s.h.at(b, j);
        return va > vb || (va == vb && a < b);
      }));
      m.best_negative.push_back(pick([&](std::size_t a, std::size_t b) {
        const double va = s.h.at(a, j), vb = s.h.at(b, j);
        return va < vb || (va == vb && a < b);
      }));
    }
  }
  return out;
}

// --- aNRG ------------------------------------------------------------------

struct ScoreTable {
  std::vector<std::string> approaches;
  std::vector<std::string> datasets;
  Array scores;  // approaches x datasets
  std::string reference;

  std::size_t approach_index(const std::string& name) const {
    auto it = std::find(approaches.begin(), approaches.end(), name);
    if (it == approaches.end()) throw ConfigError("approach '" + name + "' not in score table");
    return static_cast<std::size_t>(it - approaches.begin());
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::object();
    for (std::size_t a = 0; a < approaches.size(); ++a) {
      auto r = scores.row(a);
      rows[approaches[a]] = std::vector<double>(r.begin(), r.end());
    }
    return {{"format", "tagxfer.score_table"}, {"version", 1},     {"reference", reference},
            {"datasets", datasets},           {"scores", rows}};
  }
};

// CSV with a header row "approach,<dataset>,..." and one row per approach.
inline ScoreTable parse_score_table(std::istream& in, const std::string& reference) {
  ScoreTable t;
  t.reference = reference;
  std::string line;
  std::vector<double> data;
  std::size_t lineno = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      f.push_back(cell);
    }
    return f;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split(line);
    if (t.datasets.empty()) {
      if (f.size() < 2) throw ParseError(lineno, "score table header needs at least one dataset");
      t.datasets.assign(f.begin() + 1, f.end());
      continue;
    }
    if (f.size() != t.datasets.size() + 1) {
      throw ParseError(lineno, "expected " + std::to_string(t.datasets.size() + 1) + " columns");
    }
    t.approaches.push_back(f[0]);
    for (std::size_t i = 1; i < f.size(); ++i) {
      try {
        data.push_back(std::stod(f[i]));
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad score '" + f[i] + "'");
      }
    }
  }
  if (t.approaches.empty()) throw ConfigError("score table is empty");
  t.scores = Array({t.approaches.size(), t.datasets.size()}, std::move(data));
  t.approach_index(reference);
  return t;
}

struct AnrgResult {
  double value = 0.0;
  std::vector<std::string> skipped;  // datasets with s_max == s_ref
};

// Mean over datasets of (s_i - s_ref) / (s_max - s_ref).
inline AnrgResult anrg(const ScoreTable& table, const std::string& approach) {
  if (table.approaches.empty() || table.datasets.empty()) throw ConfigError("score table is empty");
  const std::size_t i = table.approach_index(approach);
  const std::size_t ref = table.approach_index(table.reference);
  AnrgResult r;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t d = 0; d < table.datasets.size(); ++d) {
    double best = table.scores.at(0, d);
    for (std::size_t a = 1; a < table.approaches.size(); ++a) best = std::max(best, table.scores.at(a, d));
    const double denom = best - table.scores.at(ref, d);
    if (denom == 0.0) {
      r.skipped.push_back(table.datasets[d]);
      continue;
    }
    total += (table.scores.at(i, d) - table.scores.at(ref, d)) / denom;
    ++used;
  }
  r.value = used ? total / static_cast<double>(used) : 0.0;
  return r;
}

// --- weight histograms -----------------------------------------------------

struct Histogram {
  std::vector<double> edges;  // bins + 1, ascending
  std::map<std::string, std::vector<std::size_t>> counts;

  nlohmann::json to_json() const {
    return {{"format", "tagxfer.weight_histogram"},
            {"version", 1},
            {"edges", edges},
            {"counts", counts}};
  }
};

// Bin i covers [edges[i], edges[i+1]); the last bin also includes its right
// edge. Values outside the edges are not counted.
inline std::vector<std::size_t> bin_counts(std::span<const double> values,
                                           const std::vector<double>& edges) {
  if (edges.size() < 2) throw ConfigError("a histogram needs at least one bin");
  std::vector<std::size_t> counts(edges.size() - 1, 0);
  for (double v : values) {
    if (v < edges.front() || v > edges.back()) continue;
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin());
    bin = bin == 0 ? 0 : bin - 1;
    if (bin >= counts.size()) bin = counts.size() - 1;
    ++counts[bin];
  }
  return counts;
}

// Symmetric shared edges over [-a, a], a the largest |w| across all groups
// (0.5 when every weight is zero).
inline Histogram weight_histogram(const std::map<std::string, std::vector<double>>& groups,
                                  std::size_t bins) {
  if (bins == 0) throw ConfigError("bins must be at least 1");
  double a = 0.0;
  for (const auto& [name, w] : groups) {
    for (double v : w) a = std::max(a, std::abs(v));
  }
  if (a == 0.0) a = 0.5;
  Histogram h;
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges.push_back(-a + 2.0 * a * static_cast<double>(i) / static_cast<double>(bins));
  }
  h.edges.back() = a;
  for (const auto& [name, w] : groups) h.counts[name] = bin_counts(w, h.edges);
  return h;
}

// Fully-connected weight matrices of each branch of a model.
inline Histogram classifier_weight_histogram(TaggerModel& model, std::size_t bins) {
  std::map<std::string, std::vector<double>> groups;
  groups["pretrained"] = model.classifier(Branch::kPretrained).weight.value.raw();
  if (model.has_pretrand()) groups["random"] = model.classifier(Branch::kRandom).weight.value.raw();
  return weight_histogram(groups, bins);
}

// --- per-class deltas ------------------------------------------------------

struct ClassDelta {
  std::string tag;
  std::size_t support = 0;
  double accuracy_a = 0.0;
  double accuracy_b = 0.0;
  double delta = 0.0;  // b - a
};

struct PerClassReport {
  std::vector<ClassDelta> deltas;  // descending by delta, ties by tag
  std::vector<std::string> excluded;  // predicted tags absent from gold

  nlohmann::json to_json() const {
    nlohmann::json d = nlohmann::json::array();
    for (const auto& c : deltas) {
      d.push_back({{"tag", c.tag},
                   {"support", c.support},
                   {"accuracy_a", c.accuracy_a},
                   {"accuracy_b", c.accuracy_b},
                   {"delta", c.delta}});
    }
    return {{"format", "tagxfer.per_class"}, {"version", 1}, {"deltas", d}, {"excluded", excluded}};
  }
};

inline PerClassReport per_class_delta(const TagSequences& gold, const TagSequences& a,
                                      const TagSequences& b) {
  detail::check_aligned(gold, a, "per_class_delta (a)");
  detail::check_aligned(gold, b, "per_class_delta (b)");
  std::map<std::string, std::tuple<std::size_t, std::size_t, std::size_t>> stats;
  std::set<std::string> predicted;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      auto& [n, ha, hb] = stats[gold[i][t]];
      ++n;
      ha += a[i][t] == gold[i][t];
      hb += b[i][t] == gold[i][t];
      predicted.insert(a[i][t]);
      predicted.insert(b[i][t]);
    }
  }
  PerClassReport r;
  for (const auto& [tag, s] : stats) {
    const auto [n, ha, hb] = s;
    ClassDelta c;
    c.tag = tag;
    c.support = n;
    c.accuracy_a = static_cast<double>(ha) / static_cast<double>(n);
    c.accuracy_b = static_cast<double>(hb) / static_cast<double>(n);
    c.delta = c.accuracy_b - c.accuracy_a;
    r.deltas.push_back(c);
  }
  std::stable_sort(r.deltas.begin(), r.deltas.end(),
                   [](const ClassDelta& x, const ClassDelta& y) { return x.delta > y.delta; });
  for (const auto& p : predicted) {
    if (!stats.count(p)) r.excluded.push_back(p);
  }
  return r;
}

// --- emitters --------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

inline std::string correlation_csv(const CorrelationMatrix& m) {
  std::string out;
  for (std::size_t j = 0; j < m.c.rows(); ++j) {
    for (std::size_t t = 0; t < m.c.cols(); ++t) {
      if (t) out += ',';
      out += format_double(m.c.at(j, t));
    }
    out += '\n';
  }
  return out;
}

// One block per unit: a header line, then k rows for the positive side and k
// for the negative side; columns are epochs, cells "word (activation)".
inline std::string topk_tsv(const std::vector<TopKMatrix>& matrices) {
  std::ostringstream out;
  out << std::setprecision(6);
  for (const auto& m : matrices) {
    out << "# unit " << m.unit << '\n' << "side\trank";
    for (int e : m.epochs) out << "\tepoch_" << e;
    out << '\n';
    const std::size_t k = m.best_positive.empty() ? 0 : m.best_positive.front().size();
    for (const auto& [side, cols] :
         {std::pair{"best+", &m.best_positive}, std::pair{"best-", &m.best_negative}}) {
      for (std::size_t r = 0; r < k; ++r) {
        out << side << '\t' << r + 1;
        for (const auto& col : *cols) out << '\t' << col[r].word << " (" << col[r].activation << ')';
        out << '\n';
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tagxfer
