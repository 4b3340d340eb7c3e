#pragma once

// The shipped synthetic transfer benchmark: default generator spec, small
// model dims so a full scratch/SFT/PretRand comparison runs in well under a
// minute on one core.

#include <cstdint>
#include <vector>

#include "tagxfer/diagnostics.hpp"
#include "tagxfer/synth.hpp"
#include "tagxfer/training.hpp"

namespace tagxfer {

inline constexpr std::uint64_t kBenchmarkSeed = 1;

struct BenchmarkSetup {
  SynthSpec spec;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig adapt;
};

inline BenchmarkSetup benchmark_setup(std::uint64_t seed = kBenchmarkSeed) {
  BenchmarkSetup b;
  b.model.char_emb_dim = 8;
  b.model.char_lstm_hidden = 8;
  b.model.word_emb_dim = 24;
  b.model.fe_hidden = 24;
  b.model.random_branch_k = 24;
  b.model.seed = seed;
  b.pretrain.max_epochs = 10;
  b.pretrain.snapshot_epochs = {};
  b.pretrain.seed = seed;
  b.adapt = b.pretrain;
  b.adapt.max_epochs = 30;
  return b;
}

struct SchemeOutcome {
  Scheme scheme;
  double accuracy = 0.0;
  std::size_t best_epoch = 0;
  TagSequences predictions;
};

struct BenchmarkOutcome {
  std::uint64_t seed = 0;
  double source_val_accuracy = 0.0;
  SchemeOutcome scratch, sft, pretrand;
  TransferReport sft_vs_scratch, pretrand_vs_scratch;
};

inline BenchmarkOutcome run_benchmark(std::uint64_t seed = kBenchmarkSeed) {
  const BenchmarkSetup b = benchmark_setup(seed);
  const SynthCorpora c = synth_corpus(b.spec, seed);
  TrainedModel source = pretrain(c.source_train, &c.source_val, b.model, b.pretrain);

  BenchmarkOutcome out;
  out.seed = seed;
  out.source_val_accuracy = source.record.best_val_metric.value_or(0.0);
  const TagSequences gold = gold_tags(c.target_val);
  auto run = [&](Scheme s) {
    TrainConfig cfg = b.adapt;
    cfg.scheme = s;
    AdaptResult r = adapt(&source.model, c.target_train, &c.target_val, b.model, cfg);
    SchemeOutcome o;
    o.scheme = s;
    o.predictions = predict_corpus(r.models, c.target_val);
    o.accuracy = token_accuracy(gold, o.predictions);
    o.best_epoch = r.records.front().best_epoch;
    return o;
  };
  out.scratch = run(Scheme::kScratch);
  out.sft = run(Scheme::kSft);
  out.pretrand = run(Scheme::kPretRand);
  out.sft_vs_scratch = transfer_decomposition(gold, out.scratch.predictions, out.sft.predictions);
  out.pretrand_vs_scratch = transfer_decomposition(gold, out.scratch.predictions, out.pretrand.predictions);
  return out;
}

}  // namespace tagxfer
