#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/autodiff.hpp"
#include "tagxfer/corpus.hpp"
#include "tagxfer/errors.hpp"
#include "tagxfer/random.hpp"

namespace tagxfer {

struct ModelConfig {
  std::size_t char_emb_dim = 50;
  std::size_t char_lstm_hidden = 100;
  std::size_t word_emb_dim = 300;
  std::size_t fe_hidden = 200;  // per direction
  std::size_t random_branch_k = 200;  // per direction
  std::size_t num_classes = 0;
  std::uint64_t seed = 1;

  std::size_t wre_dim() const { return word_emb_dim + 2 * char_lstm_hidden; }

  void validate() const {
    if (char_emb_dim == 0 || char_lstm_hidden == 0 || word_emb_dim == 0 || fe_hidden == 0 ||
        random_branch_k == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  }

  nlohmann::json to_json() const {
    return {{"char_emb_dim", char_emb_dim},       {"char_lstm_hidden", char_lstm_hidden},
            {"word_emb_dim", word_emb_dim},       {"fe_hidden", fe_hidden},
            {"random_branch_k", random_branch_k}, {"num_classes", num_classes},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    for (const auto& [key, value] : j.items()) {
      if (key == "char_emb_dim") {
        c.char_emb_dim = value.get<std::size_t>();
      } else if (key == "char_lstm_hidden") {
        c.char_lstm_hidden = value.get<std::size_t>();
      } else if (key == "word_emb_dim") {
        c.word_emb_dim = value.get<std::size_t>();
      } else if (key == "fe_hidden") {
        c.fe_hidden = value.get<std::size_t>();
      } else if (key == "random_branch_k") {
        c.random_branch_k = value.get<std::size_t>();
      } else if (key == "num_classes") {
        c.num_classes = value.get<std::size_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown model config key '" + key + "'");
      }
    }
    return c;
  }
};

enum class Branch { kPretrained, kRandom };

inline std::string branch_name(Branch b) {
  return b == Branch::kPretrained ? "pretrained" : "random";
}

inline Branch parse_branch(std::string_view name) {
  if (name == "pretrained") return Branch::kPretrained;
  if (name == "random") return Branch::kRandom;
  throw ConfigError("unknown branch '" + std::string(name) + "'");
}

// --- layers ----------------------------------------------------------------

namespace detail {

inline Array glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  Array a({rows, cols});
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : a.raw()) v = rng.uniform(-bound, bound);
  return a;
}

}  // namespace detail

struct Linear {
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(name + ".W", detail::glorot(out, in, rng)), bias(name + ".b", Array({out})) {}

  Var forward(Graph& g, Var x) { return add(matmul(g.param(weight), x), g.param(bias)); }

  std::size_t in_dim() const { return weight.value.shape()[1]; }
  std::size_t out_dim() const { return weight.value.shape()[0]; }

  Parameter weight;
  Parameter bias;
};

// One LSTM direction. Gate rows are ordered input, forget, cell, output.
struct Lstm {
  Lstm() = default;
  Lstm(const std::string& name, std::size_t in, std::size_t hidden_dim, Rng& rng)
      : weight(name + ".W", detail::glorot(4 * hidden_dim, in + hidden_dim, rng)),
        bias(name + ".b", Array({4 * hidden_dim})),
        hidden(hidden_dim) {
    for (std::size_t i = hidden; i < 2 * hidden; ++i) bias.value[i] = 1.0;
  }

  // Runs over `xs` (reversed when `reverse`), returning hidden states aligned
  // with the input positions.
  std::vector<Var> scan(Graph& g, const std::vector<Var>& xs, bool reverse) {
    std::vector<Var> out(xs.size());
    Var W = g.param(weight);
    Var b = g.param(bias);
    Var h = g.constant(Array({hidden}));
    Var c = g.constant(Array({hidden}));
    for (std::size_t step = 0; step < xs.size(); ++step) {
      const std::size_t t = reverse ? xs.size() - 1 - step : step;
      Var z = add(matmul(W, concat({xs[t], h})), b);
      Var i = sigmoid(slice(z, 0, hidden));
      Var f = sigmoid(slice(z, hidden, hidden));
      Var u = tanh(slice(z, 2 * hidden, hidden));
      Var o = sigmoid(slice(z, 3 * hidden, hidden));
      c = add(mul(f, c), mul(i, u));
      h = mul(o, tanh(c));
      out[t] = h;
    }
    return out;
  }

  std::size_t in_dim() const { return weight.value.shape()[1] - hidden; }

  Parameter weight;
  Parameter bias;
  std::size_t hidden = 0;
};

struct BiLstm {
  BiLstm() = default;
  BiLstm(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng)
      : fwd(name + ".fwd", in, hidden, rng), bwd(name + ".bwd", in, hidden, rng) {}

  // h_t = [forward state at t ; backward state at t].
  std::vector<Var> forward(Graph& g, const std::vector<Var>& xs) {
    auto f = fwd.scan(g, xs, false);
    auto b = bwd.scan(g, xs, true);
    std::vector<Var> out;
    out.reserve(xs.size());
    for (std::size_t t = 0; t < xs.size(); ++t) out.push_back(concat({f[t], b[t]}));
    return out;
  }

  // [forward state after the last input ; backward state after the first].
  Var final_states(Graph& g, const std::vector<Var>& xs) {
    auto f = fwd.scan(g, xs, false);
    auto b = bwd.scan(g, xs, true);
    return concat({f.back(), b.front()});
  }

  std::vector<Parameter*> parameters() { return {&fwd.weight, &fwd.bias, &bwd.weight, &bwd.bias}; }

  Lstm fwd;
  Lstm bwd;
};

struct PretRandHead {
  BiLstm fe;      // random feature extractor, k units per direction
  Linear cl;      // random classifier
  Parameter u;    // weights the normalised pretrained-branch logits
  Parameter v;    // weights the normalised random-branch logits
};

struct ParamCount {
  std::size_t char_embeddings = 0;
  std::size_t char_lstm = 0;
  std::size_t word_embeddings = 0;
  std::size_t fe_pretrained = 0;
  std::size_t classifier_pretrained = 0;
  std::size_t fe_random = 0;
  std::size_t classifier_random = 0;
  std::size_t weighting = 0;

  std::size_t base_total() const {
    return char_embeddings + char_lstm + word_embeddings + fe_pretrained + classifier_pretrained;
  }
  std::size_t head_total() const { return fe_random + classifier_random + weighting; }
  std::size_t pretrand_total() const { return base_total() + head_total(); }
  double ratio() const {
    return static_cast<double>(pretrand_total()) / static_cast<double>(base_total());
  }
  double ratio_without_embeddings() const {
    const double base = static_cast<double>(base_total() - char_embeddings - word_embeddings);
    return (base + static_cast<double>(head_total())) / base;
  }

  nlohmann::json to_json() const {
    return {{"char_embeddings", char_embeddings},
            {"char_lstm", char_lstm},
            {"word_embeddings", word_embeddings},
            {"fe_pretrained", fe_pretrained},
            {"classifier_pretrained", classifier_pretrained},
            {"fe_random", fe_random},
            {"classifier_random", classifier_random},
            {"weighting", weighting},
            {"base_total", base_total()},
            {"pretrand_total", pretrand_total()},
            {"ratio", ratio()},
            {"ratio_without_embeddings", ratio_without_embeddings()}};
  }
};

inline std::size_t lstm_param_count(std::size_t in, std::size_t hidden) {
  return 4 * (in + hidden + 1) * hidden;
}

inline std::size_t linear_param_count(std::size_t in, std::size_t out) { return (in + 1) * out; }

// Closed-form parameter accounting; no model needs to exist.
inline ParamCount param_count(const ModelConfig& cfg, std::size_t vocab_words,
                              std::size_t vocab_chars) {
  ParamCount p;
  p.char_embeddings = vocab_chars * cfg.char_emb_dim;
  p.char_lstm = 2 * lstm_param_count(cfg.char_emb_dim, cfg.char_lstm_hidden);
  p.word_embeddings = vocab_words * cfg.word_emb_dim;
  p.fe_pretrained = 2 * lstm_param_count(cfg.wre_dim(), cfg.fe_hidden);
  p.classifier_pretrained = linear_param_count(2 * cfg.fe_hidden, cfg.num_classes);
  p.fe_random = 2 * lstm_param_count(cfg.wre_dim(), cfg.random_branch_k);
  p.classifier_random = linear_param_count(2 * cfg.random_branch_k, cfg.num_classes);
  p.weighting = 2 * cfg.num_classes;
  return p;
}

// --- tagger ----------------------------------------------------------------

// Word representation extractor -> biLSTM feature extractor -> linear
// classifier, with an optional PretRand head sharing the word representation.
class TaggerModel {
 public:
  TaggerModel() = default;

  TaggerModel(ModelConfig config, Vocabulary vocab, bool with_pretrand = false)
      : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.num_classes = vocab_.num_classes();
    config_.validate();
    Rng rng(config_.seed);
    Rng wre_rng(rng.fork());
    Rng fe_rng(rng.fork());
    Rng cl_rng(rng.fork());
    Rng head_rng(rng.fork());
    char_emb_ = Parameter("wre.char_emb", uniform_table(vocab_.chars().size(),
                                                        config_.char_emb_dim, wre_rng));
    char_lstm_ = BiLstm("wre.char_lstm", config_.char_emb_dim, config_.char_lstm_hidden, wre_rng);
    word_emb_ = Parameter("wre.word_emb", uniform_table(vocab_.words().size(),
                                                        config_.word_emb_dim, wre_rng));
    fe_ = BiLstm("fe_p", config_.wre_dim(), config_.fe_hidden, fe_rng);
    cl_ = Linear("cl_p", 2 * config_.fe_hidden, config_.num_classes, cl_rng);
    if (with_pretrand) add_pretrand_head(head_rng.next());
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t num_classes() const { return config_.num_classes; }
  bool has_pretrand() const { return head_.has_value(); }

  void add_pretrand_head(std::uint64_t seed) {
    Rng rng(seed);
    PretRandHead h;
    h.fe = BiLstm("fe_r", config_.wre_dim(), config_.random_branch_k, rng);
    h.cl = Linear("cl_r", 2 * config_.random_branch_k, config_.num_classes, rng);
    h.u = Parameter("pretrand.u", Array({config_.num_classes}, 1.0));
    h.v = Parameter("pretrand.v", Array({config_.num_classes}, 1.0));
    head_ = std::move(h);
  }

  // Fresh classifier for a (possibly different) tag-set.
  void reset_classifier(std::uint64_t seed) {
    Rng rng(seed);
    cl_ = Linear("cl_p", 2 * config_.fe_hidden, config_.num_classes, rng);
  }

  // Replaces the vocabulary by `target`, which must extend the current word and
  // char maps (same ids for existing entries). New embedding rows are seeded
  // random; the tag-set may change, in which case the classifier is re-drawn.
  void retarget(Vocabulary target, std::uint64_t seed) {
    for (std::size_t i = 0; i < vocab_.words().size(); ++i) {
      if (i >= target.words().size() || target.words().key(i) != vocab_.words().key(i)) {
        throw ConfigError("target vocabulary does not extend the source word map");
      }
    }
    for (std::size_t i = 0; i < vocab_.chars().size(); ++i) {
      if (i >= target.chars().size() || target.chars().key(i) != vocab_.chars().key(i)) {
        throw ConfigError("target vocabulary does not extend the source char map");
      }
    }
    Rng rng(seed);
    grow_table(word_emb_, target.words().size(), rng);
    grow_table(char_emb_, target.chars().size(), rng);
    vocab_ = std::move(target);
    config_.num_classes = vocab_.num_classes();
    config_.validate();
    reset_classifier(rng.next());
    if (head_) add_pretrand_head(rng.next());
  }

  // --- parameter groups ---

  std::vector<Parameter*> wre_parameters() {
    std::vector<Parameter*> out = {&char_emb_};
    for (Parameter* p : char_lstm_.parameters()) out.push_back(p);
    out.push_back(&word_emb_);
    return out;
  }

  std::vector<Parameter*> fe_parameters(Branch b) {
    if (b == Branch::kPretrained) return fe_.parameters();
    return head().fe.parameters();
  }

  std::vector<Parameter*> classifier_parameters(Branch b) {
    if (b == Branch::kPretrained) return {&cl_.weight, &cl_.bias};
    return {&head().cl.weight, &head().cl.bias};
  }

  std::vector<Parameter*> weighting_parameters() { return {&head().u, &head().v}; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = wre_parameters();
    for (Parameter* p : fe_parameters(Branch::kPretrained)) out.push_back(p);
    for (Parameter* p : classifier_parameters(Branch::kPretrained)) out.push_back(p);
    if (head_) {
      for (Parameter* p : fe_parameters(Branch::kRandom)) out.push_back(p);
      for (Parameter* p : classifier_parameters(Branch::kRandom)) out.push_back(p);
      for (Parameter* p : weighting_parameters()) out.push_back(p);
    }
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<TaggerModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  Parameter* find_parameter(const std::string& name) {
    for (Parameter* p : parameters()) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  void set_trainable(const std::vector<Parameter*>& ps, bool trainable) {
    for (Parameter* p : ps) p->trainable = trainable;
  }

  Parameter& word_embeddings() { return word_emb_; }
  Parameter& char_embeddings() { return char_emb_; }
  Linear& classifier(Branch b) { return b == Branch::kPretrained ? cl_ : head().cl; }

  ParamCount count() const {
    return param_count(config_, vocab_.words().size(), vocab_.chars().size());
  }

  // --- forward passes ---

  // x_t = [word embedding of the lower-cased token ; char biLSTM final states].
  std::vector<Var> wre_forward(Graph& g, const EncodedSentence& s) {
    std::vector<Var> xs;
    xs.reserve(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) {
      std::vector<Var> chars;
      for (std::size_t c : s.char_ids[t]) chars.push_back(g.row(char_emb_, c));
      if (chars.empty()) chars.push_back(g.row(char_emb_, Vocabulary::kUnk));
      Var char_state = char_lstm_.final_states(g, chars);
      xs.push_back(concat({g.row(word_emb_, s.word_ids[t]), char_state}));
    }
    return xs;
  }

  std::vector<Var> fe_forward(Graph& g, const std::vector<Var>& xs, Branch b) {
    if (b == Branch::kRandom && !head_) throw ConfigError("model has no random branch");
    return b == Branch::kPretrained ? fe_.forward(g, xs) : head_->fe.forward(g, xs);
  }

  std::vector<Var> forward_standard(Graph& g, const EncodedSentence& s) {
    auto hs = fe_forward(g, wre_forward(g, s), Branch::kPretrained);
    std::vector<Var> logits;
    logits.reserve(hs.size());
    for (Var h : hs) logits.push_back(cl_.forward(g, h));
    return logits;
  }

  // merged_t = u * N(yp_t) + v * N(yr_t), N the l2 normalisation over classes.
  std::vector<Var> forward_pretrand(Graph& g, const EncodedSentence& s) {
    if (!head_) throw ConfigError("model has no PretRand head");
    auto xs = wre_forward(g, s);
    auto hp = fe_.forward(g, xs);
    auto hr = head_->fe.forward(g, xs);
    Var u = g.param(head_->u);
    Var v = g.param(head_->v);
    std::vector<Var> merged;
    merged.reserve(xs.size());
    for (std::size_t t = 0; t < xs.size(); ++t) {
      Var yp = l2_normalize(cl_.forward(g, hp[t]));
      Var yr = l2_normalize(head_->cl.forward(g, hr[t]));
      merged.push_back(add(mul(u, yp), mul(v, yr)));
    }
    return merged;
  }

  std::vector<Var> forward(Graph& g, const EncodedSentence& s) {
    return head_ ? forward_pretrand(g, s) : forward_standard(g, s);
  }

  // Sum of per-token softmax cross-entropy losses, times `weight`.
  Var loss(Graph& g, const EncodedSentence& s, double weight = 1.0) {
    auto logits = forward(g, s);
    std::vector<Var> per_token;
    per_token.reserve(logits.size());
    for (std::size_t t = 0; t < logits.size(); ++t) {
      per_token.push_back(softmax_cross_entropy(logits[t], s.tag_ids[t]));
    }
    Var total = sum(concat(per_token));
    return weight == 1.0 ? total : scale(total, weight);
  }

  // n x C matrix of output scores (merged scores for PretRand models).
  Array logits(const EncodedSentence& s) {
    Graph g(false);
    auto out = forward(g, s);
    Array m({s.size(), num_classes()});
    for (std::size_t t = 0; t < out.size(); ++t) {
      const auto& v = out[t].value();
      std::copy(v.raw().begin(), v.raw().end(), m.row(t).begin());
    }
    return m;
  }

  std::vector<std::size_t> predict(const EncodedSentence& s) {
    Array m = logits(s);
    std::vector<std::size_t> out(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) out[t] = argmax(m.row(t));
    return out;
  }

  // Feature-extractor outputs for every token of `s`, one row per token.
  Array activations(const EncodedSentence& s, Branch b) {
    Graph g(false);
    auto hs = fe_forward(g, wre_forward(g, s), b);
    const std::size_t H = hs.front().value().size();
    Array m({s.size(), H});
    for (std::size_t t = 0; t < hs.size(); ++t) {
      const auto& v = hs[t].value();
      std::copy(v.raw().begin(), v.raw().end(), m.row(t).begin());
    }
    return m;
  }

 private:
  static Array uniform_table(std::size_t rows, std::size_t dim, Rng& rng) {
    Array a({rows, dim});
    const double b = oov_bound(dim);
    for (double& v : a.raw()) v = rng.uniform(-b, b);
    return a;
  }

  static void grow_table(Parameter& p, std::size_t rows, Rng& rng) {
    const std::size_t old_rows = p.value.rows();
    if (rows == old_rows) return;
    const std::size_t dim = p.value.cols();
    std::vector<double> data = p.value.raw();
    const double b = oov_bound(dim);
    for (std::size_t i = old_rows * dim; i < rows * dim; ++i) data.push_back(rng.uniform(-b, b));
    p.value = Array({rows, dim}, std::move(data));
    p.grad = Array({rows, dim});
  }

  PretRandHead& head() {
    if (!head_) throw ConfigError("model has no random branch");
    return *head_;
  }

  ModelConfig config_;
  Vocabulary vocab_;
  Parameter char_emb_;
  BiLstm char_lstm_;
  Parameter word_emb_;
  BiLstm fe_;
  Linear cl_;
  std::optional<PretRandHead> head_;
};

// Replaces pretrained word vectors into the model's embedding table for every
// vocabulary row the table covers.
inline void assign_embeddings(TaggerModel& model, const EmbeddingTable& table) {
  Parameter& w = model.word_embeddings();
  if (table.matrix.shape() != w.value.shape()) {
    throw ConfigError("embedding table shape " + shape_str(table.matrix.shape()) +
                      " does not match model " + shape_str(w.value.shape()));
  }
  w.value = table.matrix;
}

// Per-token feature-extractor activations over a corpus split.
struct ActivationRecord {
  Array h;  // N_tokens x H
  int epoch = 0;
  Branch branch = Branch::kPretrained;
  std::vector<std::string> tokens;

  std::size_t token_count() const { return h.rows(); }
  std::size_t units() const { return h.cols(); }
};

inline ActivationRecord extract_activations(TaggerModel& model, const AnnotatedCorpus& corpus,
                                            Branch branch, int epoch = 0) {
  if (corpus.sentences.empty()) throw EmptyCorpusError("activation corpus is empty");
  if (branch == Branch::kRandom && !model.has_pretrand()) {
    throw ConfigError("model has no random branch");
  }
  ActivationRecord rec;
  rec.epoch = epoch;
  rec.branch = branch;
  std::vector<double> data;
  std::size_t H = 0;
  for (const auto& s : corpus.sentences) {
    Array a = model.activations(model.vocab().encode_words(s), branch);
    H = a.cols();
    data.insert(data.end(), a.raw().begin(), a.raw().end());
    rec.tokens.insert(rec.tokens.end(), s.words.begin(), s.words.end());
  }
  rec.h = Array({rec.tokens.size(), H}, std::move(data));
  return rec;
}

}  // namespace tagxfer
