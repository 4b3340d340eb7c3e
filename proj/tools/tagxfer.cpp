// tagxfer command-line front end.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime or
// numeric failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tagxfer/checkpoint.hpp"
#include "tagxfer/config.hpp"
#include "tagxfer/corpus.hpp"
#include "tagxfer/diagnostics.hpp"
#include "tagxfer/io.hpp"
#include "tagxfer/synth.hpp"
#include "tagxfer/training.hpp"

namespace fs = std::filesystem;
using namespace tagxfer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Options every config-driven command accepts. Unset optionals leave the
// config value alone.
struct ConfigFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
};

struct ModelFlags {
  std::optional<std::size_t> char_emb_dim, char_hidden, word_dim, fe_hidden, random_k;
};

struct TrainFlags {
  std::optional<std::size_t> epochs, patience, batch_size, warmup_epochs;
  std::optional<double> lr, momentum;
  std::optional<std::string> metric, loss_scale;
  std::optional<std::vector<std::size_t>> snapshot_epochs;
  bool no_early_stopping = false;
  bool no_snapshots = false;
  bool uv_warmup = false;
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("-c,--config", f.config, "Experiment config (JSON)");
  app->add_option("-o,--out", f.out, "Output directory (overrides $TAGXFER_OUT and the config)");
  app->add_option("--seed", f.seed, "Experiment seed");
}

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--char-emb-dim", f.char_emb_dim, "Character embedding size");
  app->add_option("--char-hidden", f.char_hidden, "Character biLSTM hidden size per direction");
  app->add_option("--word-dim", f.word_dim, "Word embedding size");
  app->add_option("--fe-hidden", f.fe_hidden, "Feature extractor hidden size per direction");
  app->add_option("--random-k", f.random_k, "Random branch hidden size per direction");
}

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--epochs", f.epochs, "Maximum epochs");
  app->add_option("--patience", f.patience, "Early-stopping patience");
  app->add_option("--batch-size", f.batch_size, "Sentences per mini-batch");
  app->add_option("--lr", f.lr, "Learning rate");
  app->add_option("--momentum", f.momentum, "SGD momentum");
  app->add_option("--metric", f.metric, "Validation metric: auto, accuracy or span_f1");
  app->add_option("--loss-scale", f.loss_scale, "Batch loss: sum, sentence_mean or token_mean");
  app->add_option("--snapshot-epochs", f.snapshot_epochs, "Epochs at which activations are recorded");
  app->add_flag("--no-snapshots", f.no_snapshots, "Record no activation snapshots");
  app->add_flag("--no-early-stopping", f.no_early_stopping, "Run every epoch");
}

// Defaults < config file < environment (output dir only) < flags.
ExperimentConfig resolve(const ConfigFlags& cf, const ModelFlags* mf, const TrainFlags* tf,
                         bool check_inputs = true) {
  ExperimentConfig c = cf.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(cf.config, check_inputs);
  c.paths.output_dir = resolve_output_dir(c.paths.output_dir, cf.out);
  if (cf.seed) c.train.seed = *cf.seed;
  if (mf) {
    if (mf->char_emb_dim) c.model.char_emb_dim = *mf->char_emb_dim;
    if (mf->char_hidden) c.model.char_lstm_hidden = *mf->char_hidden;
    if (mf->word_dim) c.model.word_emb_dim = *mf->word_dim;
    if (mf->fe_hidden) c.model.fe_hidden = *mf->fe_hidden;
    if (mf->random_k) c.model.random_branch_k = *mf->random_k;
  }
  if (tf) {
    nlohmann::json t = nlohmann::json::object();
    if (tf->epochs) t["max_epochs"] = *tf->epochs;
    if (tf->patience) t["patience"] = *tf->patience;
    if (tf->batch_size) t["batch_size"] = *tf->batch_size;
    if (tf->warmup_epochs) t["warmup_epochs"] = *tf->warmup_epochs;
    if (tf->lr) t["learning_rate"] = *tf->lr;
    if (tf->momentum) t["momentum"] = *tf->momentum;
    if (tf->metric) t["metric"] = *tf->metric;
    if (tf->loss_scale) t["loss_scale"] = *tf->loss_scale;
    if (tf->snapshot_epochs) t["snapshot_epochs"] = *tf->snapshot_epochs;
    if (tf->no_snapshots) t["snapshot_epochs"] = nlohmann::json::array();
    if (tf->no_early_stopping) t["early_stopping"] = false;
    if (tf->uv_warmup) t["train_uv_during_warmup"] = true;
    c.train = TrainConfig::from_json(t, c.train);
  }
  return c;
}

void finish_config(ExperimentConfig& c) {
  c.check_paths();
  c.validate();
}

const std::string& require_path(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError("missing required input: " + what);
  return value;
}

void write_snapshots(const fs::path& dir, const RunRecord& rec, const std::string& prefix) {
  for (const auto& s : rec.snapshots) {
    write_activation_snapshot(dir / "snapshots" / (prefix + branch_name(s.branch) + "_epoch" + std::to_string(s.epoch)),
                              s);
  }
}

nlohmann::json checkpoint_meta(const RunRecord& rec) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"scheme", rec.scheme},
          {"seed", rec.seed},
          {"metric", rec.metric},
          {"best_epoch", rec.best_epoch},
          {"best_val_metric", opt(rec.best_val_metric)}};
}

std::vector<PredictionSentence> prediction_rows(const AnnotatedCorpus& corpus, const TagSequences& pred) {
  std::vector<PredictionSentence> out;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    out.push_back({corpus.sentences[i].words, corpus.sentences[i].tags, pred[i]});
  }
  return out;
}

void check_tagset(const Vocabulary& vocab, const AnnotatedCorpus& corpus, const std::string& what) {
  for (const auto& s : corpus.sentences) {
    for (const auto& t : s.tags) {
      if (!vocab.has_tag(t)) throw ConfigError(what + " has tag '" + t + "' unknown to the checkpoint");
    }
  }
}

void log(const std::string& msg) { std::cerr << "tagxfer: " << msg << '\n'; }

// --- commands ----------------------------------------------------------------

int cmd_synth(const ConfigFlags& cf, std::optional<double> rho) {
  // Synth writes the corpora the config may point at, so inputs need not exist.
  ExperimentConfig c = resolve(cf, nullptr, nullptr, false);
  if (rho) c.synth.rho = *rho;
  c.validate();
  const SynthCorpora corpora = synth_corpus(c.synth, c.train.seed);
  const fs::path out = c.paths.output_dir;
  write_file(out / "source_train.conll", serialize_conll(corpora.source_train));
  if (!corpora.source_val.sentences.empty()) write_file(out / "source_val.conll", serialize_conll(corpora.source_val));
  write_file(out / "target_train.conll", serialize_conll(corpora.target_train));
  write_file(out / "target_val.conll", serialize_conll(corpora.target_val));
  if (!corpora.target_test.sentences.empty()) {
    write_file(out / "target_test.conll", serialize_conll(corpora.target_test));
  }
  write_json(out / "manifest.json", synth_manifest(c.synth, c.train.seed, corpora));
  log("wrote synthetic corpora to " + out.string());
  return kExitOk;
}

int cmd_pretrain(const ConfigFlags& cf, const ModelFlags& mf, const TrainFlags& tf,
                 const std::optional<std::string>& train_path, const std::optional<std::string>& val_path) {
  ExperimentConfig c = resolve(cf, &mf, &tf);
  if (train_path) c.paths.source_train = *train_path;
  if (val_path) c.paths.source_val = *val_path;
  finish_config(c);
  const AnnotatedCorpus train = read_conll(require_path(c.paths.source_train, "source training corpus (--train)"));
  std::optional<AnnotatedCorpus> val;
  if (!c.paths.source_val.empty()) val = read_conll(c.paths.source_val, Split::kVal);

  std::optional<EmbeddingTable> emb;
  if (!c.paths.embeddings.empty()) {
    emb = load_embeddings(c.paths.embeddings, build_vocab(train, c.min_count), c.model.word_emb_dim, c.train.seed);
  }
  TrainedModel t = pretrain(train, val ? &*val : nullptr, c.model, c.train, emb ? &*emb : nullptr, c.min_count);

  const fs::path out = c.paths.output_dir;
  save_checkpoint((out / "model.ckpt").string(), t.model, checkpoint_meta(t.record));
  write_json(out / "run_record.json", t.record.to_json());
  write_json(out / "config.json", c.to_json());
  if (val) write_snapshots(out, t.record, "");
  log("pretrained " + std::to_string(t.record.epochs.size()) + " epochs, best epoch " +
      std::to_string(t.record.best_epoch) + "; wrote " + out.string());
  return kExitOk;
}

int cmd_adapt(const ConfigFlags& cf, const ModelFlags& mf, const TrainFlags& tf, const std::optional<std::string>& scheme,
              const std::optional<std::string>& from, const std::optional<std::string>& train_path,
              const std::optional<std::string>& val_path) {
  ExperimentConfig c = resolve(cf, &mf, &tf);
  if (scheme) c.train.scheme = parse_scheme(*scheme);
  if (from) c.paths.checkpoint = *from;
  if (train_path) c.paths.target_train = *train_path;
  if (val_path) c.paths.target_val = *val_path;
  finish_config(c);

  std::optional<TaggerModel> source;
  if (needs_checkpoint(c.train.scheme)) {
    if (c.paths.checkpoint.empty()) {
      throw ConfigError("scheme '" + scheme_name(c.train.scheme) + "' needs --from-checkpoint");
    }
    source = load_checkpoint(c.paths.checkpoint).model;
  } else if (!c.paths.checkpoint.empty()) {
    log("warning: scheme '" + scheme_name(c.train.scheme) + "' ignores the checkpoint " + c.paths.checkpoint);
  }
  const AnnotatedCorpus train = read_conll(require_path(c.paths.target_train, "target training corpus (--train)"));
  std::optional<AnnotatedCorpus> val;
  if (!c.paths.target_val.empty()) val = read_conll(c.paths.target_val, Split::kVal);

  AdaptResult r = adapt(source ? &*source : nullptr, train, val ? &*val : nullptr, c.model, c.train);

  const fs::path out = c.paths.output_dir;
  const bool single = r.models.size() == 1;
  for (std::size_t i = 0; i < r.models.size(); ++i) {
    const std::string suffix = single ? "" : "_" + std::to_string(i);
    save_checkpoint((out / ("model" + suffix + ".ckpt")).string(), r.models[i], checkpoint_meta(r.records[i]));
    write_json(out / ("run_record" + suffix + ".json"), r.records[i].to_json());
    if (val) write_snapshots(out, r.records[i], single ? "" : "member" + std::to_string(i) + "_");
  }
  write_json(out / "config.json", c.to_json());
  if (val) {
    const TagSequences pred = single ? predict_corpus(r.models[0], *val) : predict_corpus(r.models, *val);
    write_file(out / "predictions_val.tsv", serialize_predictions(prediction_rows(*val, pred)));
    write_json(out / "eval_val.json", evaluate(gold_tags(*val), pred).to_json());
  }
  log("adapted with scheme '" + scheme_name(c.train.scheme) + "'; wrote " + out.string());
  return kExitOk;
}

int cmd_evaluate(const ConfigFlags& cf, std::vector<std::string> checkpoints, const std::optional<std::string>& corpus,
                 const std::string& split) {
  ExperimentConfig c = resolve(cf, nullptr, nullptr);
  finish_config(c);
  if (checkpoints.empty() && !c.paths.checkpoint.empty()) checkpoints.push_back(c.paths.checkpoint);
  if (checkpoints.empty()) throw ConfigError("missing required input: --checkpoint");
  std::string path;
  if (corpus) {
    path = *corpus;
  } else if (split == "val") {
    path = require_path(c.paths.target_val, "--corpus or paths.target_val in the config");
  } else if (split == "test") {
    path = require_path(c.paths.target_test, "--corpus or paths.target_test in the config");
  } else {
    throw ConfigError("--split must be 'val' or 'test'");
  }
  if (!fs::exists(path)) throw ConfigError("corpus '" + path + "' does not exist");
  const AnnotatedCorpus data = read_conll(path, split == "test" ? Split::kTest : Split::kVal);

  std::vector<TaggerModel> models;
  for (const auto& p : checkpoints) {
    if (!fs::exists(p)) throw ConfigError("checkpoint '" + p + "' does not exist");
    models.push_back(load_checkpoint(p).model);
    check_tagset(models.back().vocab(), data, "corpus '" + path + "'");
  }
  const TagSequences pred = models.size() == 1 ? predict_corpus(models[0], data) : predict_corpus(models, data);
  const EvalResult result = evaluate(gold_tags(data), pred);

  const fs::path out = c.paths.output_dir;
  write_json(out / ("eval_" + split + ".json"), result.to_json());
  write_file(out / ("predictions_" + split + ".tsv"), serialize_predictions(prediction_rows(data, pred)));
  std::cout << json_text(result.to_json());
  return kExitOk;
}

// --- diagnose ----------------------------------------------------------------

struct DiagnoseFlags {
  std::string baseline, transfer;  // prediction files
  std::string before, after;       // snapshot sidecars
  std::vector<std::string> snapshots;
  std::string checkpoint;
  std::string table, reference;
  std::vector<std::string> approaches;
  std::optional<std::size_t> k, bins;
};

// Gold columns of two prediction files must agree token for token.
std::pair<TagSequences, std::pair<TagSequences, TagSequences>> aligned_predictions(const std::string& a_path,
                                                                                     const std::string& b_path) {
  const auto a = read_predictions(a_path);
  const auto b = read_predictions(b_path);
  if (a.size() != b.size()) throw ShapeError("prediction files hold different numbers of sentences");
  TagSequences gold, pa, pb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].gold != b[i].gold || a[i].words != b[i].words) {
      throw ShapeError("prediction files disagree on tokens or gold tags in sentence " + std::to_string(i + 1));
    }
    gold.push_back(a[i].gold);
    pa.push_back(a[i].pred);
    pb.push_back(b[i].pred);
  }
  return {gold, {pa, pb}};
}

int cmd_diagnose(const std::string& sub, const ConfigFlags& cf, const DiagnoseFlags& d) {
  ExperimentConfig c = resolve(cf, nullptr, nullptr);
  finish_config(c);
  const fs::path out = c.paths.output_dir;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("diagnose " + sub + " requires " + what);
  };

  if (sub == "transfer") {
    need(!d.baseline.empty() && !d.transfer.empty(), "--baseline and --transfer prediction files");
    const auto [gold, preds] = aligned_predictions(d.baseline, d.transfer);
    const TransferReport r = transfer_decomposition(gold, preds.first, preds.second);
    write_json(out / "transfer_report.json", r.to_json());
    std::cout << "pt " << format_double(r.pt) << "\nnt " << format_double(r.nt) << "\ngain " << format_double(r.gain)
              << '\n';
  } else if (sub == "perclass") {
    need(!d.baseline.empty() && !d.transfer.empty(), "--baseline and --transfer prediction files");
    const auto [gold, preds] = aligned_predictions(d.baseline, d.transfer);
    write_json(out / "per_class.json", per_class_delta(gold, preds.first, preds.second).to_json());
  } else if (sub == "correlation") {
    need(!d.before.empty() && !d.after.empty(), "--before and --after snapshot sidecars (.json)");
    const ActivationRecord before = read_activation_snapshot(d.before);
    const ActivationRecord after = read_activation_snapshot(d.after);
    if (before.branch != after.branch) throw ShapeError("snapshots come from different branches");
    const CorrelationMatrix m = correlation_matrix(before, after);
    write_file(out / "correlation.csv", correlation_csv(m));
    write_json(out / "correlation.json", {{"format", "tagxfer.correlation"},
                                          {"version", 1},
                                          {"epoch_before", before.epoch},
                                          {"epoch_after", after.epoch},
                                          {"branch", branch_name(before.branch)},
                                          {"units", m.c.rows()},
                                          {"token_count", before.token_count()},
                                          {"charges", m.charges()},
                                          {"constant_before", m.constant_before},
                                          {"constant_after", m.constant_after},
                                          {"matrix_file", "correlation.csv"}});
  } else if (sub == "topk") {
    need(!d.snapshots.empty(), "one or more --snapshot sidecars (.json)");
    std::vector<ActivationRecord> snaps;
    for (const auto& p : d.snapshots) snaps.push_back(read_activation_snapshot(p));
    write_file(out / "topk.tsv", topk_tsv(topk_stimulus(snaps, d.k.value_or(c.diagnostics.topk))));
  } else if (sub == "weights") {
    if (d.checkpoint.empty()) need(!c.paths.checkpoint.empty(), "--checkpoint");
    const std::string path = d.checkpoint.empty() ? c.paths.checkpoint : d.checkpoint;
    if (!fs::exists(path)) throw ConfigError("checkpoint '" + path + "' does not exist");
    TaggerModel m = load_checkpoint(path).model;
    write_json(out / "weight_histogram.json",
               classifier_weight_histogram(m, d.bins.value_or(c.diagnostics.histogram_bins)).to_json());
  } else if (sub == "anrg") {
    need(!d.table.empty() && !d.reference.empty(), "--table (CSV) and --reference");
    std::ifstream in(d.table);
    if (!in) throw ConfigError("cannot open score table '" + d.table + "'");
    const ScoreTable t = parse_score_table(in, d.reference);
    const auto names = d.approaches.empty() ? t.approaches : d.approaches;
    nlohmann::json values = nlohmann::json::object();
    std::vector<std::string> skipped;
    for (const auto& a : names) {
      const AnrgResult r = anrg(t, a);
      values[a] = r.value;
      skipped = r.skipped;
      std::cout << a << ' ' << format_double(r.value) << '\n';
    }
    for (const auto& s : skipped) log("warning: dataset '" + s + "' skipped (best score equals the reference)");
    write_json(out / "anrg.json", {{"format", "tagxfer.anrg"},
                                   {"version", 1},
                                   {"reference", t.reference},
                                   {"values", values},
                                   {"skipped", skipped},
                                   {"table", t.to_json()}});
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer learning diagnostics for biLSTM sequence taggers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tagxfer 1.0");

  ConfigFlags cf;
  ModelFlags mf;
  TrainFlags tf;

  auto* synth = app.add_subcommand("synth", "Generate seeded source/target corpora");
  add_config_flags(synth, cf);
  std::optional<double> rho;
  synth->add_option("--rho", rho, "Share of target tokens with target-only surfaces");

  std::optional<std::string> train_path, val_path;
  auto* pre = app.add_subcommand("pretrain", "Train the source model");
  add_config_flags(pre, cf);
  add_model_flags(pre, mf);
  add_train_flags(pre, tf);
  pre->add_option("--train", train_path, "Source training corpus (CoNLL)");
  pre->add_option("--val", val_path, "Source validation corpus (CoNLL)");

  std::optional<std::string> scheme, from;
  auto* ad = app.add_subcommand("adapt", "Adapt to the target domain with a transfer scheme");
  add_config_flags(ad, cf);
  add_model_flags(ad, mf);
  add_train_flags(ad, tf);
  ad->add_option("--scheme", scheme,
                 "scratch, feature_extraction, sft, pretrand, ensemble_2rand or ensemble_1p1r");
  ad->add_option("--from-checkpoint", from, "Source checkpoint");
  ad->add_option("--train", train_path, "Target training corpus (CoNLL)");
  ad->add_option("--val", val_path, "Target validation corpus (CoNLL)");
  ad->add_option("--warmup-epochs", tf.warmup_epochs, "random++ warmup length");
  ad->add_flag("--train-uv-during-warmup", tf.uv_warmup, "Let u and v train during the warmup");

  std::vector<std::string> checkpoints;
  std::optional<std::string> corpus;
  std::string split = "val";
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint (or an ensemble) on a corpus");
  add_config_flags(ev, cf);
  ev->add_option("--checkpoint", checkpoints, "Checkpoint; repeat for an ensemble");
  ev->add_option("--corpus", corpus, "Corpus to score (CoNLL); default: the split from the config");
  ev->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));

  DiagnoseFlags d;
  auto* dg = app.add_subcommand("diagnose", "Transfer and neuron-level diagnostics");
  dg->require_subcommand(1);
  auto diag_sub = [&](const std::string& name, const std::string& help) {
    auto* s = dg->add_subcommand(name, help);
    add_config_flags(s, cf);
    return s;
  };
  auto* d_transfer = diag_sub("transfer", "Positive/negative transfer against a baseline");
  d_transfer->add_option("--baseline", d.baseline, "Baseline prediction file (token, gold, pred)");
  d_transfer->add_option("--transfer", d.transfer, "Transfer prediction file (token, gold, pred)");
  auto* d_perclass = diag_sub("perclass", "Per-class accuracy change between two prediction files");
  d_perclass->add_option("--baseline", d.baseline, "Prediction file A");
  d_perclass->add_option("--transfer", d.transfer, "Prediction file B");
  auto* d_corr = diag_sub("correlation", "Unit correlation between two activation snapshots");
  d_corr->add_option("--before", d.before, "Snapshot sidecar before fine-tuning");
  d_corr->add_option("--after", d.after, "Snapshot sidecar after fine-tuning");
  auto* d_topk = diag_sub("topk", "Top-k stimulus words per unit and snapshot");
  d_topk->add_option("--snapshot", d.snapshots, "Snapshot sidecar; repeat per epoch");
  d_topk->add_option("-k,--k", d.k, "Words per side");
  auto* d_weights = diag_sub("weights", "Classifier weight histograms per branch");
  d_weights->add_option("--checkpoint", d.checkpoint, "Checkpoint");
  d_weights->add_option("--bins", d.bins, "Histogram bins");
  auto* d_anrg = diag_sub("anrg", "Average normalised relative gain from a score table");
  d_anrg->add_option("--table", d.table, "CSV score table: approach,<dataset>,...");
  d_anrg->add_option("--reference", d.reference, "Reference approach");
  d_anrg->add_option("--approach", d.approaches, "Approach to score; repeat, default all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(cf, rho);
    if (pre->parsed()) return cmd_pretrain(cf, mf, tf, train_path, val_path);
    if (ad->parsed()) return cmd_adapt(cf, mf, tf, scheme, from, train_path, val_path);
    if (ev->parsed()) return cmd_evaluate(cf, checkpoints, corpus, split);
    for (auto* s : dg->get_subcommands()) return cmd_diagnose(s->get_name(), cf, d);
  } catch (const NumericError& e) {
    std::cerr << "tagxfer: runtime error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const IndexError& e) {
    std::cerr << "tagxfer: runtime error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const Error& e) {
    // Everything else the library raises traces back to the inputs: bad
    // config, unreadable or misaligned files, missing checkpoints.
    std::cerr << "tagxfer: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "tagxfer: error: bad JSON value: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "tagxfer: runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
