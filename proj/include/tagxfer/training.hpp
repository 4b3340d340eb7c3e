#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/autodiff.hpp"
#include "tagxfer/corpus.hpp"
#include "tagxfer/diagnostics.hpp"
#include "tagxfer/errors.hpp"
#include "tagxfer/model.hpp"
#include "tagxfer/optimizer.hpp"

namespace tagxfer {

enum class Scheme { kScratch, kFeatureExtraction, kSft, kPretRand, kEnsemble2Rand, kEnsemble1P1R };

inline std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kScratch:
      return "scratch";
    case Scheme::kFeatureExtraction:
      return "feature_extraction";
    case Scheme::kSft:
      return "sft";
    case Scheme::kPretRand:
      return "pretrand";
    case Scheme::kEnsemble2Rand:
      return "ensemble_2rand";
    case Scheme::kEnsemble1P1R:
      return "ensemble_1p1r";
  }
  return "scratch";
}

inline Scheme parse_scheme(std::string_view name) {
  for (Scheme s : {Scheme::kScratch, Scheme::kFeatureExtraction, Scheme::kSft, Scheme::kPretRand,
                   Scheme::kEnsemble2Rand, Scheme::kEnsemble1P1R}) {
    if (scheme_name(s) == name) return s;
  }
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

inline bool needs_checkpoint(Scheme s) {
  return s == Scheme::kFeatureExtraction || s == Scheme::kSft || s == Scheme::kPretRand ||
         s == Scheme::kEnsemble1P1R;
}

enum class Metric { kAuto, kAccuracy, kSpanF1 };

// How per-token losses of a mini-batch are combined before the update:
// plain sum, sum divided by the number of sentences, or mean over tokens.
enum class LossScale { kSum, kSentenceMean, kTokenMean };

inline std::string loss_scale_name(LossScale s) {
  switch (s) {
    case LossScale::kSum:
      return "sum";
    case LossScale::kSentenceMean:
      return "sentence_mean";
    case LossScale::kTokenMean:
      return "token_mean";
  }
  return "sum";
}

inline LossScale parse_loss_scale(std::string_view name) {
  for (LossScale s : {LossScale::kSum, LossScale::kSentenceMean, LossScale::kTokenMean}) {
    if (loss_scale_name(s) == name) return s;
  }
  throw ConfigError("unknown loss_scale '" + std::string(name) + "'");
}

struct TrainConfig {
  Scheme scheme = Scheme::kScratch;
  double learning_rate = 1.5e-2;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::size_t patience = 5;
  std::size_t max_epochs = 20;
  bool early_stopping = true;
  std::size_t warmup_epochs = 5;     // random++ warmup length (upper bound with warmup_patience)
  std::size_t warmup_patience = 0;   // 0: fixed-length warmup
  bool train_uv_during_warmup = false;
  std::vector<std::size_t> snapshot_epochs = {0, 5, 10, 15, 20};
  Metric metric = Metric::kAuto;
  LossScale loss_scale = LossScale::kSum;
  std::uint64_t seed = 1;

  void validate() const {
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    for (std::size_t e : snapshot_epochs) {
      if (e > max_epochs) {
        throw ConfigError("snapshot epoch " + std::to_string(e) + " exceeds max_epochs " +
                          std::to_string(max_epochs));
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"scheme", scheme_name(scheme)},
            {"learning_rate", learning_rate},
            {"momentum", momentum},
            {"batch_size", batch_size},
            {"patience", patience},
            {"max_epochs", max_epochs},
            {"early_stopping", early_stopping},
            {"warmup_epochs", warmup_epochs},
            {"warmup_patience", warmup_patience},
            {"train_uv_during_warmup", train_uv_during_warmup},
            {"snapshot_epochs", snapshot_epochs},
            {"metric", metric == Metric::kAuto       ? "auto"
                       : metric == Metric::kAccuracy ? "accuracy"
                                                     : "span_f1"},
            {"loss_scale", loss_scale_name(loss_scale)},
            {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

  // Overrides the fields present in `j` on top of `c`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig c) {
    for (const auto& [key, value] : j.items()) {
      if (key == "scheme") {
        c.scheme = parse_scheme(value.get<std::string>());
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "momentum") {
        c.momentum = value.get<double>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "patience") {
        c.patience = value.get<std::size_t>();
      } else if (key == "max_epochs") {
        c.max_epochs = value.get<std::size_t>();
      } else if (key == "early_stopping") {
        c.early_stopping = value.get<bool>();
      } else if (key == "warmup_epochs") {
        c.warmup_epochs = value.get<std::size_t>();
      } else if (key == "warmup_patience") {
        c.warmup_patience = value.get<std::size_t>();
      } else if (key == "train_uv_during_warmup") {
        c.train_uv_during_warmup = value.get<bool>();
      } else if (key == "snapshot_epochs") {
        c.snapshot_epochs = value.get<std::vector<std::size_t>>();
      } else if (key == "metric") {
        const auto m = value.get<std::string>();
        if (m == "auto") {
          c.metric = Metric::kAuto;
        } else if (m == "accuracy") {
          c.metric = Metric::kAccuracy;
        } else if (m == "span_f1") {
          c.metric = Metric::kSpanF1;
        } else {
          throw ConfigError("unknown metric '" + m + "'");
        }
      } else if (key == "loss_scale") {
        c.loss_scale = parse_loss_scale(value.get<std::string>());
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown train config key '" + key + "'");
      }
    }
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;  // "train", "warmup" or "joint"
  double train_loss = 0.0;  // mean per-token loss over the epoch
  std::optional<double> val_metric;
};

struct RunRecord {
  std::string scheme;
  std::uint64_t seed = 0;
  std::string metric = "accuracy";
  std::optional<double> initial_val_metric;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0: the initial model was never beaten
  std::optional<double> best_val_metric;
  bool stopped_early = false;
  std::vector<ActivationRecord> snapshots;

  nlohmann::json to_json() const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
      ep.push_back({{"epoch", e.epoch},
                    {"phase", e.phase},
                    {"train_loss", e.train_loss},
                    {"val_metric", e.val_metric ? nlohmann::json(*e.val_metric) : nlohmann::json()}});
    }
    nlohmann::json snaps = nlohmann::json::array();
    for (const auto& s : snapshots) {
      snaps.push_back({{"epoch", s.epoch}, {"branch", branch_name(s.branch)}});
    }
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    return {{"format", "tagxfer.run_record"},
            {"version", 1},
            {"scheme", scheme},
            {"seed", seed},
            {"metric", metric},
            {"initial_val_metric", opt(initial_val_metric)},
            {"epochs", ep},
            {"best_epoch", best_epoch},
            {"best_val_metric", opt(best_val_metric)},
            {"stopped_early", stopped_early},
            {"snapshots", snaps}};
  }
};

// --- prediction and evaluation --------------------------------------------

inline TagSequences gold_tags(const AnnotatedCorpus& c) {
  TagSequences out;
  for (const auto& s : c.sentences) out.push_back(s.tags);
  return out;
}

inline TagSequences predict_corpus(TaggerModel& model, const AnnotatedCorpus& c) {
  TagSequences out;
  const auto& tags = model.vocab().tags();
  for (const auto& s : c.sentences) {
    std::vector<std::string> p;
    for (std::size_t id : model.predict(model.vocab().encode_words(s))) p.push_back(tags.key(id));
    out.push_back(std::move(p));
  }
  return out;
}

// Mean of per-model softmax distributions per token (n x C).
inline Array ensemble_probabilities(std::vector<TaggerModel>& models, const Sentence& s) {
  if (models.empty()) throw ConfigError("ensemble has no members");
  const std::size_t C = models.front().num_classes();
  for (auto& m : models) {
    if (m.num_classes() != C || !(m.vocab().tags() == models.front().vocab().tags())) {
      throw ConfigError("ensemble members disagree on the tag-set");
    }
  }
  Array mean({s.size(), C});
  for (auto& m : models) {
    Array logits = m.logits(m.vocab().encode_words(s));
    for (std::size_t t = 0; t < s.size(); ++t) {
      auto p = softmax(logits.row(t));
      for (std::size_t c = 0; c < C; ++c) mean.at(t, c) += p[c];
    }
  }
  for (double& v : mean.raw()) v /= static_cast<double>(models.size());
  return mean;
}

// Argmax of the averaged distributions; ties go to the lowest class id.
inline std::vector<std::size_t> ensemble_predict(std::vector<TaggerModel>& models, const Sentence& s) {
  Array p = ensemble_probabilities(models, s);
  std::vector<std::size_t> out(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) out[t] = argmax(p.row(t));
  return out;
}

inline TagSequences predict_corpus(std::vector<TaggerModel>& models, const AnnotatedCorpus& c) {
  if (models.size() == 1) return predict_corpus(models.front(), c);
  TagSequences out;
  const auto& tags = models.front().vocab().tags();
  for (const auto& s : c.sentences) {
    std::vector<std::string> p;
    for (std::size_t id : ensemble_predict(models, s)) p.push_back(tags.key(id));
    out.push_back(std::move(p));
  }
  return out;
}

inline Metric resolve_metric(Metric m, const Vocabulary& vocab) {
  if (m != Metric::kAuto) return m;
  return is_bio_tagset(vocab.tags().keys()) ? Metric::kSpanF1 : Metric::kAccuracy;
}

inline double score(const TagSequences& gold, const TagSequences& pred, Metric m) {
  return m == Metric::kSpanF1 ? span_f1(gold, pred).f1 : token_accuracy(gold, pred);
}

// --- training loop ---------------------------------------------------------

// Strict-improvement early stopping. Epochs that do not count (PretRand
// warmup) can still set a new best but never add to the stale streak.
struct EarlyStopping {
  explicit EarlyStopping(std::size_t patience) : patience(patience) {}

  // Returns true when `metric` is a new best.
  bool observe(std::size_t epoch, double metric, bool counts = true) {
    if (epochs_seen++ == 0 || metric > best) {
      best = metric;
      best_epoch = epoch;
      stale = 0;
      return true;
    }
    if (counts) ++stale;
    return false;
  }

  bool should_stop() const { return stale >= patience; }

  std::size_t patience;
  double best = 0.0;  // meaningful once an epoch has been observed
  std::size_t best_epoch = 0;
  std::size_t stale = 0;
  std::size_t epochs_seen = 0;
};

// Called before every epoch (1-based) to adjust which parameters train.
// Returns the phase label recorded for that epoch.
using PhaseHook = std::function<std::string(TaggerModel&, std::size_t epoch)>;

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  Rng r(seed * 0x100000001B3ULL + epoch);
  return r.next();
}

inline void take_snapshots(TaggerModel& model, const AnnotatedCorpus& val, std::size_t epoch,
                           RunRecord& rec) {
  rec.snapshots.push_back(extract_activations(model, val, Branch::kPretrained, static_cast<int>(epoch)));
  if (model.has_pretrand()) {
    rec.snapshots.push_back(extract_activations(model, val, Branch::kRandom, static_cast<int>(epoch)));
  }
}

}  // namespace detail

// Mini-batch SGD with momentum on the token cross-entropy, combined per batch
// as `cfg.loss_scale` says. The recorded train loss is always the per-token
// mean. On return
// `model` holds the parameters of the best validation epoch (the last epoch
// when there is no validation split). Patience only counts epochs for which
// `counts_for_patience` is true.
inline RunRecord train_loop(TaggerModel& model, const AnnotatedCorpus& train,
                            const AnnotatedCorpus* val, const TrainConfig& cfg,
                            const PhaseHook& phase = {},
                            const std::function<bool(std::size_t)>& counts_for_patience = {}) {
  cfg.validate();
  if (cfg.early_stopping && (val == nullptr || val->sentences.empty())) {
    throw ConfigError("early stopping needs a validation split");
  }
  if (train.sentences.empty()) throw EmptyCorpusError("training corpus is empty");

  RunRecord rec;
  rec.scheme = scheme_name(cfg.scheme);
  rec.seed = cfg.seed;
  const Metric metric = resolve_metric(cfg.metric, model.vocab());
  rec.metric = metric == Metric::kSpanF1 ? "span_f1" : "accuracy";

  const auto encoded = model.vocab().encode(train);
  TagSequences val_gold;
  if (val) val_gold = gold_tags(*val);
  auto validate = [&]() -> std::optional<double> {
    if (!val || val->sentences.empty()) return std::nullopt;
    return score(val_gold, predict_corpus(model, *val), metric);
  };
  const std::set<std::size_t> snapshot_at(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end());

  rec.initial_val_metric = validate();
  rec.best_val_metric = rec.initial_val_metric;
  EarlyStopping stopper(cfg.patience);
  if (rec.initial_val_metric) stopper.observe(0, *rec.initial_val_metric);
  if (val && snapshot_at.count(0)) detail::take_snapshots(model, *val, 0, rec);

  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  auto params = model.parameters();
  opt.register_parameters(params);

  TaggerModel best = model;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord er;
    er.epoch = epoch;
    er.phase = phase ? phase(model, epoch) : "train";
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    for (const auto& batch : batch_iter(encoded.size(), cfg.batch_size,
                                        detail::epoch_seed(cfg.seed, epoch))) {
      std::size_t tokens = 0;
      for (std::size_t i : batch) tokens += encoded[i].size();
      double weight = 1.0;
      if (cfg.loss_scale == LossScale::kSentenceMean) weight = 1.0 / static_cast<double>(batch.size());
      if (cfg.loss_scale == LossScale::kTokenMean) weight = 1.0 / static_cast<double>(tokens);
      model.zero_grad();
      for (std::size_t i : batch) {
        Graph g;
        Var loss = model.loss(g, encoded[i], weight);
        const double l = loss.value()[0];
        if (!std::isfinite(l)) throw NumericError("training loss became non-finite");
        loss_sum += l / weight;
        g.backward(loss);
      }
      token_sum += tokens;
      opt.step(params);
    }
    er.train_loss = token_sum ? loss_sum / static_cast<double>(token_sum) : 0.0;
    er.val_metric = validate();
    rec.epochs.push_back(er);
    if (val && snapshot_at.count(epoch)) detail::take_snapshots(model, *val, epoch, rec);

    const bool counts = !counts_for_patience || counts_for_patience(epoch);
    if (!er.val_metric) {
      best = model;
      rec.best_epoch = epoch;
      continue;
    }
    if (stopper.observe(epoch, *er.val_metric, counts)) {
      rec.best_val_metric = er.val_metric;
      rec.best_epoch = epoch;
      best = model;
    }
    if (cfg.early_stopping && stopper.should_stop()) {
      rec.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  // Trainable flags are run state, not part of the returned parameters.
  for (Parameter* p : best.parameters()) p->trainable = true;
  model = std::move(best);
  return rec;
}

// --- schemes ---------------------------------------------------------------

// Plain supervised training on the source domain.
struct TrainedModel {
  TaggerModel model;
  RunRecord record;
};

inline TrainedModel pretrain(const AnnotatedCorpus& train, const AnnotatedCorpus* val,
                             ModelConfig model_cfg, TrainConfig cfg,
                             const EmbeddingTable* embeddings = nullptr, std::size_t min_count = 1) {
  Vocabulary vocab = build_vocab(train, min_count);
  if (model_cfg.num_classes != 0 && model_cfg.num_classes != vocab.num_classes()) {
    throw ConfigError("config expects " + std::to_string(model_cfg.num_classes) +
                      " classes but the corpus tag-set has " +
                      std::to_string(vocab.num_classes()));
  }
  model_cfg.seed = cfg.seed;
  TaggerModel model(model_cfg, std::move(vocab));
  if (embeddings) assign_embeddings(model, *embeddings);
  cfg.scheme = Scheme::kScratch;
  RunRecord rec = train_loop(model, train, val, cfg);
  rec.scheme = "pretrain";
  return {std::move(model), std::move(rec)};
}

// Source word/char maps extended with the target training split; tag-set of
// the target.
inline Vocabulary transfer_vocabulary(const Vocabulary& source, const AnnotatedCorpus& target_train) {
  Vocabulary target_only = build_vocab(target_train, 1);
  Vocabulary v = source;
  for (const auto& w : target_only.words().keys()) v.add_word(w);
  for (const auto& c : target_only.chars().keys()) v.add_char(c);
  v.clear_tags();
  for (const auto& t : target_only.tags().keys()) v.add_tag(t);
  return v;
}

struct AdaptResult {
  std::vector<TaggerModel> models;  // one model, or the ensemble members
  std::vector<RunRecord> records;
};

// Builds the target-side starting model of a transfer scheme: word/char
// representation and pretrained feature extractor copied from the source, a
// fresh classifier, plus a fresh random branch for PretRand.
inline TaggerModel transfer_init(const TaggerModel& source, const AnnotatedCorpus& target_train,
                                 std::uint64_t seed, bool with_pretrand) {
  TaggerModel m = source;
  Rng rng(seed);
  m.retarget(transfer_vocabulary(source.vocab(), target_train), rng.next());
  if (with_pretrand) {
    m.add_pretrand_head(rng.next());
  }
  for (Parameter* p : m.parameters()) p->trainable = true;
  return m;
}

inline AdaptResult adapt(const TaggerModel* source, const AnnotatedCorpus& train,
                         const AnnotatedCorpus* val, const ModelConfig& scratch_cfg,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (needs_checkpoint(cfg.scheme) && source == nullptr) {
    throw StateError("scheme '" + scheme_name(cfg.scheme) + "' needs a source checkpoint");
  }
  auto scratch = [&](std::uint64_t seed) {
    ModelConfig mc = scratch_cfg;
    mc.seed = seed;
    mc.num_classes = 0;
    TaggerModel m(mc, build_vocab(train, 1));
    TrainConfig c = cfg;
    c.scheme = Scheme::kScratch;
    c.seed = seed;
    RunRecord r = train_loop(m, train, val, c);
    return TrainedModel{std::move(m), std::move(r)};
  };
  auto fine_tune = [&](bool freeze) {
    TaggerModel m = transfer_init(*source, train, cfg.seed, false);
    if (freeze) {
      m.set_trainable(m.wre_parameters(), false);
      m.set_trainable(m.fe_parameters(Branch::kPretrained), false);
    }
    TrainConfig c = cfg;
    c.scheme = freeze ? Scheme::kFeatureExtraction : Scheme::kSft;
    RunRecord r = train_loop(m, train, val, c);
    return TrainedModel{std::move(m), std::move(r)};
  };

  AdaptResult out;
  auto keep = [&](TrainedModel t) {
    out.models.push_back(std::move(t.model));
    out.records.push_back(std::move(t.record));
  };

  switch (cfg.scheme) {
    case Scheme::kScratch:
      keep(scratch(cfg.seed));
      break;
    case Scheme::kSft:
      keep(fine_tune(false));
      break;
    case Scheme::kFeatureExtraction:
      keep(fine_tune(true));
      break;
    case Scheme::kEnsemble2Rand:
      keep(scratch(cfg.seed));
      keep(scratch(cfg.seed + 1));
      break;
    case Scheme::kEnsemble1P1R:
      keep(fine_tune(false));
      keep(scratch(cfg.seed));
      break;
    case Scheme::kPretRand: {
      TaggerModel m = transfer_init(*source, train, cfg.seed, true);
      // random++: only the random branch trains until the warmup ends, then
      // everything (including u and v) trains jointly.
      std::size_t warm_end = cfg.warmup_epochs;
      std::optional<double> warm_best;
      std::size_t warm_stale = 0;
      const Metric metric = resolve_metric(cfg.metric, m.vocab());
      TagSequences val_gold;
      if (val) val_gold = gold_tags(*val);
      bool warm = cfg.warmup_epochs > 0;
      auto phase = [&](TaggerModel& model, std::size_t epoch) -> std::string {
        if (warm && cfg.warmup_patience > 0 && epoch > 1 && val) {
          const double s = score(val_gold, predict_corpus(model, *val), metric);
          if (!warm_best || s > *warm_best) {
            warm_best = s;
            warm_stale = 0;
          } else if (++warm_stale >= cfg.warmup_patience) {
            warm_end = epoch - 1;
          }
        }
        warm = warm && epoch <= warm_end;
        for (Parameter* p : model.parameters()) p->trainable = !warm;
        if (warm) {
          model.set_trainable(model.fe_parameters(Branch::kRandom), true);
          model.set_trainable(model.classifier_parameters(Branch::kRandom), true);
          if (cfg.train_uv_during_warmup) model.set_trainable(model.weighting_parameters(), true);
          return "warmup";
        }
        return "joint";
      };
      auto counts = [&](std::size_t epoch) { return epoch > warm_end; };
      RunRecord r = train_loop(m, train, val, cfg, phase, counts);
      keep(TrainedModel{std::move(m), std::move(r)});
      break;
    }
  }
  return out;
}

}  // namespace tagxfer
