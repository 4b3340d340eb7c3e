#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "tagxfer/corpus.hpp"
#include "tagxfer/synth.hpp"

using namespace tagxfer;

namespace {

std::set<std::string> lowered_words(const AnnotatedCorpus& c) {
  std::set<std::string> out;
  for (const auto& s : c.sentences) {
    for (const auto& w : s.words) out.insert(lowercase(w));
  }
  return out;
}

std::set<std::string> tags_of(const AnnotatedCorpus& c) {
  std::set<std::string> out;
  for (const auto& s : c.sentences) out.insert(s.tags.begin(), s.tags.end());
  return out;
}

}  // namespace

TEST(Synth, SameSeedIsByteIdentical) {
  const SynthSpec spec;
  const SynthCorpora a = synth_corpus(spec, 17);
  const SynthCorpora b = synth_corpus(spec, 17);
  EXPECT_EQ(serialize_conll(a.source_train), serialize_conll(b.source_train));
  EXPECT_EQ(serialize_conll(a.target_val), serialize_conll(b.target_val));
  EXPECT_EQ(synth_manifest(spec, 17, a).dump(), synth_manifest(spec, 17, b).dump());
  EXPECT_NE(serialize_conll(synth_corpus(spec, 18).source_train), serialize_conll(a.source_train));
}

TEST(Synth, RhoZeroKeepsTargetInsideSourceLexicon) {
  SynthSpec spec;
  spec.rho = 0.0;
  spec.target_test_sentences = 50;
  const SynthCorpora c = synth_corpus(spec, 4);
  for (const auto* split : {&c.target_train, &c.target_val, &c.target_test}) {
    EXPECT_EQ(count_unseen_tokens(*split, c.source_forms), 0u);
  }
  for (const auto& w : lowered_words(c.source_train)) EXPECT_TRUE(c.source_forms.count(w)) << w;
}

TEST(Synth, RhoControlsTargetOnlyShare) {
  SynthSpec spec;
  spec.rho = 0.5;
  spec.target_val_sentences = 125;  // about 1000 tokens at mean length 8
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SynthCorpora c = synth_corpus(spec, seed);
    const double n = static_cast<double>(c.target_val.token_count());
    const double unseen = static_cast<double>(count_unseen_tokens(c.target_val, c.source_forms));
    EXPECT_NEAR(unseen / n, 0.5, 0.05) << "seed " << seed << " tokens " << n;
  }
}

TEST(Synth, TargetOnlyFormsNeverOccurInSource) {
  const SynthCorpora c = synth_corpus(SynthSpec{}, 8);
  const auto source = lowered_words(c.source_train);
  std::size_t unseen = 0;
  for (const auto& w : lowered_words(c.target_val)) {
    if (!c.source_forms.count(w)) {
      ++unseen;
      EXPECT_FALSE(source.count(w)) << w;
    }
  }
  EXPECT_GT(unseen, 0u);
}

TEST(Synth, SharedTagSetAndSplitShapes) {
  SynthSpec spec;
  const SynthCorpora c = synth_corpus(spec, 5);
  EXPECT_EQ(c.source_train.sentences.size(), spec.source_train_sentences);
  EXPECT_EQ(c.source_val.sentences.size(), spec.source_val_sentences);
  EXPECT_EQ(c.target_train.sentences.size(), spec.target_train_sentences);
  EXPECT_EQ(c.target_val.sentences.size(), spec.target_val_sentences);
  EXPECT_TRUE(c.target_test.sentences.empty());
  EXPECT_EQ(tags_of(c.source_train).size(), spec.num_tags);
  for (const auto& t : tags_of(c.target_train)) EXPECT_TRUE(tags_of(c.source_train).count(t));
  for (const auto& s : c.source_train.sentences) {
    EXPECT_GE(s.size(), spec.min_length);
    EXPECT_LE(s.size(), spec.max_length);
  }
  EXPECT_EQ(c.target_val.split, Split::kVal);
}

TEST(Synth, ManifestRecordsRhoAndCounts) {
  SynthSpec spec;
  spec.rho = 0.25;
  const SynthCorpora c = synth_corpus(spec, 6);
  const auto m = synth_manifest(spec, 6, c);
  EXPECT_EQ(m["rho"], 0.25);
  EXPECT_EQ(m["seed"], 6);
  EXPECT_EQ(m["splits"]["target_train"]["tokens"], c.target_train.token_count());
  EXPECT_EQ(m["splits"]["target_val"]["sentences"], spec.target_val_sentences);
  EXPECT_EQ(m["splits"]["source_train"]["target_only_tokens"], 0);
}

TEST(Synth, InvalidSpecsThrow) {
  auto bad = [](auto mutate) {
    SynthSpec s;
    mutate(s);
    return s;
  };
  EXPECT_THROW(synth_corpus(bad([](SynthSpec& s) { s.rho = 1.5; }), 1), ConfigError);
  EXPECT_THROW(synth_corpus(bad([](SynthSpec& s) { s.rho = -0.1; }), 1), ConfigError);
  EXPECT_THROW(synth_corpus(bad([](SynthSpec& s) { s.num_tags = 1; }), 1), ConfigError);
  EXPECT_THROW(synth_corpus(bad([](SynthSpec& s) { s.max_length = 2; }), 1), ConfigError);
  EXPECT_THROW(synth_corpus(bad([](SynthSpec& s) { s.target_train_sentences = 0; }), 1), ConfigError);
}
