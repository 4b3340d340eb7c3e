#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/array.hpp"
#include "tagxfer/errors.hpp"
#include "tagxfer/random.hpp"

namespace tagxfer {

enum class Split { kTrain, kVal, kTest };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

struct Sentence {
  std::vector<std::string> words;
  std::vector<std::string> tags;

  std::size_t size() const { return words.size(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct AnnotatedCorpus {
  std::vector<Sentence> sentences;
  Split split = Split::kTrain;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
  friend bool operator==(const AnnotatedCorpus&, const AnnotatedCorpus&) = default;
};

// ASCII lower-casing. Non-ASCII bytes pass through unchanged.
inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Splits a UTF-8 string into code points, each kept as its byte sequence.
// Malformed lead bytes are taken as single-byte units.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (b >= 0xF0) {
      len = 4;
    } else if (b >= 0xE0) {
      len = 3;
    } else if (b >= 0xC0) {
      len = 2;
    }
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// --- CoNLL -----------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

// Reads tab-separated rows grouped into blank-line-delimited blocks, requiring
// exactly `fields` columns per row.
inline std::vector<std::vector<std::vector<std::string>>> read_blocks(std::istream& in,
                                                                      std::size_t fields) {
  std::vector<std::vector<std::vector<std::string>>> blocks;
  std::vector<std::vector<std::string>> current;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) {
      if (!current.empty()) blocks.push_back(std::move(current));
      current.clear();
      continue;
    }
    auto f = split_tabs(line);
    if (f.size() != fields) {
      throw ParseError(lineno, "expected " + std::to_string(fields) + " tab-separated fields, got " +
                                   std::to_string(f.size()));
    }
    for (const auto& v : f) {
      if (v.empty()) throw ParseError(lineno, "empty field");
    }
    current.push_back(std::move(f));
  }
  if (!current.empty()) blocks.push_back(std::move(current));
  return blocks;
}

}  // namespace detail

inline AnnotatedCorpus parse_conll(std::istream& in, Split split = Split::kTrain) {
  AnnotatedCorpus corpus;
  corpus.split = split;
  for (auto& block : detail::read_blocks(in, 2)) {
    Sentence s;
    for (auto& row : block) {
      s.words.push_back(std::move(row[0]));
      s.tags.push_back(std::move(row[1]));
    }
    corpus.sentences.push_back(std::move(s));
  }
  if (corpus.sentences.empty()) throw EmptyCorpusError("corpus contains no sentences");
  return corpus;
}

inline AnnotatedCorpus parse_conll(const std::string& text, Split split = Split::kTrain) {
  std::istringstream in(text);
  return parse_conll(in, split);
}

inline AnnotatedCorpus read_conll(const std::string& path, Split split = Split::kTrain) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file '" + path + "'");
  return parse_conll(in, split);
}

inline std::string serialize_conll(const AnnotatedCorpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out += s.words[i];
      out += '\t';
      out += s.tags[i];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

// Three-column "token<TAB>gold<TAB>pred" file produced by any tagger.
struct PredictionSentence {
  std::vector<std::string> words;
  std::vector<std::string> gold;
  std::vector<std::string> pred;
};

inline std::vector<PredictionSentence> parse_predictions(std::istream& in) {
  std::vector<PredictionSentence> out;
  for (auto& block : detail::read_blocks(in, 3)) {
    PredictionSentence s;
    for (auto& row : block) {
      s.words.push_back(std::move(row[0]));
      s.gold.push_back(std::move(row[1]));
      s.pred.push_back(std::move(row[2]));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw EmptyCorpusError("prediction file contains no sentences");
  return out;
}

inline std::vector<PredictionSentence> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prediction file '" + path + "'");
  return parse_predictions(in);
}

inline std::string serialize_predictions(const std::vector<PredictionSentence>& sents) {
  std::string out;
  for (const auto& s : sents) {
    for (std::size_t i = 0; i < s.words.size(); ++i) {
      out += s.words[i] + '\t' + s.gold[i] + '\t' + s.pred[i] + '\n';
    }
    out += '\n';
  }
  return out;
}

// --- vocabulary ------------------------------------------------------------

// Dense string <-> id map.
class Index {
 public:
  std::size_t add(const std::string& key) {
    auto [it, inserted] = ids_.try_emplace(key, keys_.size());
    if (inserted) keys_.push_back(key);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& key) const {
    auto it = ids_.find(key);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& key) const { return ids_.count(key) != 0; }
  const std::string& key(std::size_t id) const { return keys_.at(id); }
  const std::vector<std::string>& keys() const { return keys_; }
  std::size_t size() const { return keys_.size(); }

  friend bool operator==(const Index& a, const Index& b) { return a.keys_ == b.keys_; }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct EncodedSentence {
  std::vector<std::size_t> word_ids;
  std::vector<std::vector<std::size_t>> char_ids;
  std::vector<std::size_t> tag_ids;

  std::size_t size() const { return word_ids.size(); }
};

class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPad = 1;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kPadToken = "<pad>";

  Vocabulary() {
    words_.add(kUnkToken);
    words_.add(kPadToken);
    chars_.add(kUnkToken);
  }

  const Index& words() const { return words_; }
  const Index& chars() const { return chars_; }
  const Index& tags() const { return tags_; }
  std::size_t num_classes() const { return tags_.size(); }

  std::size_t word_id(std::string_view surface) const {
    return words_.find(lowercase(surface)).value_or(kUnk);
  }

  std::size_t char_id(const std::string& ch) const { return chars_.find(ch).value_or(kUnk); }

  std::vector<std::size_t> char_ids(std::string_view surface) const {
    std::vector<std::size_t> ids;
    for (const auto& ch : utf8_chars(surface)) ids.push_back(char_id(ch));
    return ids;
  }

  std::size_t tag_id(const std::string& tag) const {
    auto id = tags_.find(tag);
    if (!id) throw ConfigError("tag '" + tag + "' is not in the tag-set");
    return *id;
  }

  bool has_tag(const std::string& tag) const { return tags_.contains(tag); }

  EncodedSentence encode(const Sentence& s) const {
    EncodedSentence e;
    for (std::size_t i = 0; i < s.size(); ++i) {
      e.word_ids.push_back(word_id(s.words[i]));
      e.char_ids.push_back(char_ids(s.words[i]));
      e.tag_ids.push_back(tag_id(s.tags[i]));
    }
    return e;
  }

  // Words and characters only; tag_ids is left empty.
  EncodedSentence encode_words(const Sentence& s) const {
    EncodedSentence e;
    for (const auto& w : s.words) {
      e.word_ids.push_back(word_id(w));
      e.char_ids.push_back(char_ids(w));
    }
    return e;
  }

  std::vector<EncodedSentence> encode(const AnnotatedCorpus& c) const {
    std::vector<EncodedSentence> out;
    out.reserve(c.sentences.size());
    for (const auto& s : c.sentences) out.push_back(encode(s));
    return out;
  }

  // Appends entries unknown to this vocabulary; existing ids never move.
  void add_word(const std::string& w) { words_.add(lowercase(w)); }
  void add_char(const std::string& c) { chars_.add(c); }
  void add_tag(const std::string& t) { tags_.add(t); }
  void clear_tags() { tags_ = Index(); }

  nlohmann::json to_json() const {
    return {{"format", "tagxfer.vocabulary"},
            {"version", 1},
            {"words", words_.keys()},
            {"chars", chars_.keys()},
            {"tags", tags_.keys()}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tagxfer.vocabulary" || j.value("version", 0) != 1) {
      throw FormatError("not a version-1 tagxfer vocabulary");
    }
    Vocabulary v;
    v.words_ = Index();
    v.chars_ = Index();
    for (const auto& w : j.at("words")) v.words_.add(w.get<std::string>());
    for (const auto& c : j.at("chars")) v.chars_.add(c.get<std::string>());
    for (const auto& t : j.at("tags")) v.tags_.add(t.get<std::string>());
    if (v.words_.size() != j.at("words").size() || v.chars_.size() != j.at("chars").size() ||
        v.tags_.size() != j.at("tags").size()) {
      throw FormatError("vocabulary lists contain duplicates");
    }
    if (v.words_.size() < 2 || v.words_.key(kUnk) != kUnkToken ||
        v.words_.key(kPad) != kPadToken || v.chars_.size() < 1 ||
        v.chars_.key(kUnk) != kUnkToken) {
      throw FormatError("vocabulary reserved ids are not in place");
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.chars_ == b.chars_ && a.tags_ == b.tags_;
  }

 private:
  Index words_;
  Index chars_;
  Index tags_;
};

namespace detail {

// Keys ordered by descending count, ties lexicographic.
inline std::vector<std::string> by_frequency(const std::map<std::string, std::size_t>& counts,
                                             std::size_t min_count) {
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (auto& [k, n] : items) {
    if (n >= min_count) out.push_back(k);
  }
  return out;
}

}  // namespace detail

// Builds word, character and tag maps from a training split. Words seen fewer
// than `min_count` times fall back to UNK; characters and tags are all kept.
inline Vocabulary build_vocab(const AnnotatedCorpus& train, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> words, chars, tags;
  for (const auto& s : train.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      ++words[lowercase(s.words[i])];
      for (const auto& ch : utf8_chars(s.words[i])) ++chars[ch];
      ++tags[s.tags[i]];
    }
  }
  Vocabulary v;
  for (const auto& w : detail::by_frequency(words, std::max<std::size_t>(min_count, 1))) {
    v.add_word(w);
  }
  for (const auto& c : detail::by_frequency(chars, 1)) v.add_char(c);
  for (const auto& t : detail::by_frequency(tags, 1)) v.add_tag(t);
  return v;
}

inline nlohmann::json corpus_to_json(const AnnotatedCorpus& c) {
  nlohmann::json sents = nlohmann::json::array();
  for (const auto& s : c.sentences) {
    nlohmann::json toks = nlohmann::json::array();
    for (std::size_t i = 0; i < s.size(); ++i) toks.push_back({s.words[i], s.tags[i]});
    sents.push_back(std::move(toks));
  }
  return {{"format", "tagxfer.corpus"},
          {"version", 1},
          {"split", split_name(c.split)},
          {"sentences", std::move(sents)}};
}

inline AnnotatedCorpus corpus_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tagxfer.corpus" || j.value("version", 0) != 1) {
    throw FormatError("not a version-1 tagxfer corpus");
  }
  AnnotatedCorpus c;
  c.split = parse_split(j.at("split").get<std::string>());
  for (const auto& toks : j.at("sentences")) {
    Sentence s;
    for (const auto& t : toks) {
      s.words.push_back(t.at(0).get<std::string>());
      s.tags.push_back(t.at(1).get<std::string>());
    }
    if (s.words.empty()) throw FormatError("empty sentence in corpus");
    c.sentences.push_back(std::move(s));
  }
  return c;
}

// --- pre-trained embeddings ------------------------------------------------

struct EmbeddingTable {
  std::size_t dimension = 0;
  Array matrix;  // |V| x d
  std::size_t found = 0;
  std::size_t oov = 0;
};

// Uniform bound giving unit variance per coordinate.
inline double oov_bound(std::size_t dim) { return std::sqrt(3.0 / static_cast<double>(dim)); }

inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim,
                                        std::uint64_t seed) {
  EmbeddingTable t;
  t.dimension = dim;
  t.matrix = Array({vocab.words().size(), dim});
  Rng rng(seed);
  const double b = oov_bound(dim);
  for (double& v : t.matrix.raw()) v = rng.uniform(-b, b);
  t.oov = vocab.words().size();
  return t;
}

// Reads "word v1 ... vd" lines. Vocabulary rows whose word appears in the file
// copy its vector; all others keep a seeded uniform(-sqrt(3/d), sqrt(3/d)) draw.
inline EmbeddingTable load_embeddings(std::istream& in, const Vocabulary& vocab,
                                      std::size_t expected_dim, std::uint64_t seed) {
  EmbeddingTable t = random_embeddings(vocab, expected_dim, seed);
  std::vector<bool> hit(vocab.words().size(), false);
  std::string line;
  std::size_t lineno = 0;
  std::size_t file_dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<double> vec;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (vec.empty()) throw FormatError("line " + std::to_string(lineno) + ": no vector");
    if (file_dim == 0) {
      file_dim = vec.size();
      if (file_dim != expected_dim) {
        throw ConfigError("embedding file has dimension " + std::to_string(file_dim) +
                          " but the model expects " + std::to_string(expected_dim));
      }
    } else if (vec.size() != file_dim) {
      throw FormatError("line " + std::to_string(lineno) + ": dimension " +
                        std::to_string(vec.size()) + " differs from " + std::to_string(file_dim));
    }
    auto id = vocab.words().find(word);
    if (!id || *id == Vocabulary::kUnk || *id == Vocabulary::kPad || hit[*id]) continue;
    hit[*id] = true;
    std::copy(vec.begin(), vec.end(), t.matrix.row(*id).begin());
  }
  t.found = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
  t.oov = vocab.words().size() - t.found;
  return t;
}

inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab,
                                      std::size_t expected_dim, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embedding file '" + path + "'");
  return load_embeddings(in, vocab, expected_dim, seed);
}

// --- batching --------------------------------------------------------------

// Sentence indices grouped into batches after a seeded shuffle. The last batch
// may be smaller than `batch_size`.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t sentence_count,
                                                        std::size_t batch_size,
                                                        std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(sentence_count);
  for (std::size_t i = 0; i < sentence_count; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace tagxfer
