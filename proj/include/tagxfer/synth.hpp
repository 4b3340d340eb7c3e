#pragma once

// Seeded source/target corpus generator for desk-scale transfer experiments.
//
// Both domains share one tag-set and one first-order tag Markov chain. Every
// tag owns a lexicon of surface forms built from a random stem plus a
// tag-specific suffix, so a character model can pick up the tag signal. A few
// words are shared between two tags and need context to disambiguate.
//
// The target domain draws each token from the source lexicon with probability
// 1-rho and from a target-only lexicon with probability rho. Target-only forms
// are vowel-stripped abbreviations of source words ("bakomus" -> "bkmus"), are
// checked never to collide with a source form, and keep the tag suffix.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/corpus.hpp"
#include "tagxfer/errors.hpp"
#include "tagxfer/random.hpp"

namespace tagxfer {

struct SynthSpec {
  std::size_t vocab_size = 400;  // source lexicon size, all tags together
  std::size_t num_tags = 8;
  std::size_t source_train_sentences = 600;
  std::size_t source_val_sentences = 100;
  std::size_t target_train_sentences = 60;
  std::size_t target_val_sentences = 150;
  std::size_t target_test_sentences = 0;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
  double rho = 0.3;             // share of target tokens with target-only surfaces
  double ambiguity = 0.1;       // share of source words also emitted by a second tag
  double target_ambiguity_flip = 0.5;  // target prefers the second tag of ambiguous words

  void validate() const {
    if (num_tags < 2) throw ConfigError("synthetic corpus needs at least 2 tags");
    if (vocab_size < num_tags) throw ConfigError("vocab_size must be at least num_tags");
    if (source_train_sentences == 0 || target_train_sentences == 0 ||
        target_val_sentences == 0) {
      throw ConfigError("train and validation splits need at least one sentence");
    }
    if (min_length == 0 || max_length < min_length) {
      throw ConfigError("sentence lengths must satisfy 1 <= min_length <= max_length");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
    if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) throw ConfigError("ambiguity must lie in [0, 1]");
    if (!(target_ambiguity_flip >= 0.0 && target_ambiguity_flip <= 1.0)) {
      throw ConfigError("target_ambiguity_flip must lie in [0, 1]");
    }
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},
            {"num_tags", num_tags},
            {"source_train_sentences", source_train_sentences},
            {"source_val_sentences", source_val_sentences},
            {"target_train_sentences", target_train_sentences},
            {"target_val_sentences", target_val_sentences},
            {"target_test_sentences", target_test_sentences},
            {"min_length", min_length},
            {"max_length", max_length},
            {"rho", rho},
            {"ambiguity", ambiguity},
            {"target_ambiguity_flip", target_ambiguity_flip}};
  }

  static SynthSpec from_json(const nlohmann::json& j) { return from_json(j, SynthSpec{}); }

  // Overrides the fields present in `j` on top of `s`; unknown keys are an error.
  static SynthSpec from_json(const nlohmann::json& j, SynthSpec s) {
    const std::map<std::string, std::size_t*> counts = {
        {"vocab_size", &s.vocab_size},
        {"num_tags", &s.num_tags},
        {"source_train_sentences", &s.source_train_sentences},
        {"source_val_sentences", &s.source_val_sentences},
        {"target_train_sentences", &s.target_train_sentences},
        {"target_val_sentences", &s.target_val_sentences},
        {"target_test_sentences", &s.target_test_sentences},
        {"min_length", &s.min_length},
        {"max_length", &s.max_length}};
    const std::map<std::string, double*> shares = {
        {"rho", &s.rho}, {"ambiguity", &s.ambiguity}, {"target_ambiguity_flip", &s.target_ambiguity_flip}};
    for (const auto& [key, value] : j.items()) {
      if (auto c = counts.find(key); c != counts.end()) {
        *c->second = value.get<std::size_t>();
      } else if (auto d = shares.find(key); d != shares.end()) {
        *d->second = value.get<double>();
      } else {
        throw ConfigError("unknown synth key '" + key + "'");
      }
    }
    return s;
  }
};

struct SynthCorpora {
  AnnotatedCorpus source_train;
  AnnotatedCorpus source_val;
  AnnotatedCorpus target_train;
  AnnotatedCorpus target_val;
  AnnotatedCorpus target_test;  // empty when target_test_sentences == 0
  std::set<std::string> source_forms;  // lower-cased source lexicon
};

// Number of tokens whose lower-cased surface is absent from `known`.
inline std::size_t count_unseen_tokens(const AnnotatedCorpus& corpus,
                                       const std::set<std::string>& known) {
  std::size_t n = 0;
  for (const auto& s : corpus.sentences) {
    for (const auto& w : s.words) n += known.count(lowercase(w)) == 0 ? 1 : 0;
  }
  return n;
}

namespace detail {

inline const std::vector<std::string>& tag_names() {
  static const std::vector<std::string> names = {"NOUN", "VERB", "ADJ",  "ADV",  "DET",  "ADP",
                                                 "PRON", "NUM",  "CONJ", "PRT",  "PUNCT", "X"};
  return names;
}

inline std::string make_stem(Rng& rng, std::size_t syllables) {
  static const std::string consonants = "bcdfghjklmnprstvwz";
  static const std::string vowels = "aeiou";
  std::string s;
  for (std::size_t i = 0; i < syllables; ++i) {
    s += consonants[rng.below(consonants.size())];
    s += vowels[rng.below(vowels.size())];
  }
  return s;
}

inline std::string strip_vowels(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::string_view("aeiou").find(c) == std::string_view::npos) out += c;
  }
  return out;
}

struct Lexicon {
  std::vector<std::string> words;
  std::vector<double> weights;  // Zipf-like emission weights
};

}  // namespace detail

inline SynthCorpora synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t C = spec.num_tags;

  std::vector<std::string> tags;
  for (std::size_t c = 0; c < C; ++c) {
    tags.push_back(c < detail::tag_names().size() ? detail::tag_names()[c]
                                                  : "T" + std::to_string(c));
  }

  // Distinct two-letter suffix per tag.
  std::vector<std::string> suffixes;
  std::set<std::string> used_suffix;
  while (suffixes.size() < C) {
    static const std::string letters = "abcdefghijklmnopqrstuvwxyz";
    std::string s{letters[rng.below(26)], letters[rng.below(26)]};
    if (used_suffix.insert(s).second) suffixes.push_back(s);
  }

  // Sparse-ish transition matrix and start distribution.
  std::vector<std::vector<double>> transition(C, std::vector<double>(C));
  std::vector<double> start(C);
  for (auto& row : transition) {
    for (double& w : row) {
      const double u = rng.uniform();
      w = u * u * u + 0.01;
    }
  }
  for (double& w : start) w = rng.uniform() + 0.05;

  // Source lexicons.
  std::vector<detail::Lexicon> source(C);
  std::set<std::string> forms;
  const std::size_t per_tag = std::max<std::size_t>(1, spec.vocab_size / C);
  for (std::size_t c = 0; c < C; ++c) {
    while (source[c].words.size() < per_tag) {
      std::string w = detail::make_stem(rng, 1 + rng.below(3)) + suffixes[c];
      if (!forms.insert(w).second) continue;
      source[c].words.push_back(w);
    }
  }
  // Ambiguous words: appended to a second tag's lexicon.
  std::vector<std::vector<std::size_t>> ambiguous(C);  // indices into source[c]
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < per_tag; ++i) {
      if (!rng.bernoulli(spec.ambiguity)) continue;
      std::size_t other = rng.below(C - 1);
      if (other >= c) ++other;
      ambiguous[other].push_back(source[other].words.size());
      source[other].words.push_back(source[c].words[i]);
    }
  }
  for (auto& lex : source) {
    lex.weights.resize(lex.words.size());
    for (std::size_t r = 0; r < lex.words.size(); ++r) lex.weights[r] = 1.0 / (1.0 + r);
  }
  // Borrowed ambiguous words are rare in the source and frequent in the target.
  std::vector<detail::Lexicon> target_shared = source;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t idx : ambiguous[c]) {
      source[c].weights[idx] = 0.05;
      if (rng.bernoulli(spec.target_ambiguity_flip)) target_shared[c].weights[idx] = 1.5;
    }
  }

  // Target-only lexicons.
  std::vector<detail::Lexicon> target_only(C);
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t want = std::max<std::size_t>(2, per_tag / 2);
    std::size_t attempt = 0;
    while (target_only[c].words.size() < want) {
      const std::string& base = source[c].words[attempt % per_tag];
      std::string stem = base.substr(0, base.size() - suffixes[c].size());
      std::string w = detail::strip_vowels(stem);
      if (w.empty() || attempt >= per_tag) w += detail::make_stem(rng, 1);
      w += std::to_string(attempt % 10) + suffixes[c];
      ++attempt;
      if (forms.count(w) != 0) continue;
      if (std::find(target_only[c].words.begin(), target_only[c].words.end(), w) !=
          target_only[c].words.end()) {
        continue;
      }
      target_only[c].words.push_back(w);
    }
    target_only[c].weights.resize(target_only[c].words.size());
    for (std::size_t r = 0; r < target_only[c].words.size(); ++r) {
      target_only[c].weights[r] = 1.0 / (1.0 + r);
    }
  }

  auto capitalize = [](std::string w) {
    if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
  };

  auto sample = [&](std::size_t count, Split split, bool target) {
    AnnotatedCorpus corpus;
    corpus.split = split;
    const auto& shared = target ? target_shared : source;
    for (std::size_t n = 0; n < count; ++n) {
      Sentence s;
      const std::size_t len =
          spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
      std::size_t tag = rng.categorical(start);
      for (std::size_t t = 0; t < len; ++t) {
        if (t > 0) tag = rng.categorical(transition[tag]);
        const bool unseen = target && rng.bernoulli(spec.rho);
        const auto& lex = unseen ? target_only[tag] : shared[tag];
        std::string w = lex.words[rng.categorical(lex.weights)];
        s.words.push_back(t == 0 ? capitalize(w) : w);
        s.tags.push_back(tags[tag]);
      }
      corpus.sentences.push_back(std::move(s));
    }
    return corpus;
  };

  SynthCorpora out;
  out.source_train = sample(spec.source_train_sentences, Split::kTrain, false);
  if (spec.source_val_sentences > 0) {
    out.source_val = sample(spec.source_val_sentences, Split::kVal, false);
  }
  out.target_train = sample(spec.target_train_sentences, Split::kTrain, true);
  out.target_val = sample(spec.target_val_sentences, Split::kVal, true);
  if (spec.target_test_sentences > 0) {
    out.target_test = sample(spec.target_test_sentences, Split::kTest, true);
  }
  out.source_forms = std::move(forms);
  return out;
}

inline nlohmann::json synth_manifest(const SynthSpec& spec, std::uint64_t seed,
                                     const SynthCorpora& c) {
  auto split_stats = [&](const AnnotatedCorpus& corpus) {
    return nlohmann::json{{"sentences", corpus.sentences.size()},
                          {"tokens", corpus.token_count()},
                          {"target_only_tokens", count_unseen_tokens(corpus, c.source_forms)}};
  };
  nlohmann::json splits = {{"source_train", split_stats(c.source_train)},
                           {"target_train", split_stats(c.target_train)},
                           {"target_val", split_stats(c.target_val)}};
  if (!c.source_val.sentences.empty()) splits["source_val"] = split_stats(c.source_val);
  if (!c.target_test.sentences.empty()) splits["target_test"] = split_stats(c.target_test);
  return {{"format", "tagxfer.synth_manifest"},
          {"version", 1},
          {"seed", seed},
          {"rho", spec.rho},
          {"spec", spec.to_json()},
          {"splits", std::move(splits)}};
}

}  // namespace tagxfer
