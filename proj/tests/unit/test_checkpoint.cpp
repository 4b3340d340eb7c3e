#include <gtest/gtest.h>

#include "tagxfer/checkpoint.hpp"
#include "tagxfer/synth.hpp"

using namespace tagxfer;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.char_emb_dim = 4;
  c.char_lstm_hidden = 3;
  c.word_emb_dim = 5;
  c.fe_hidden = 4;
  c.random_branch_k = 3;
  c.seed = 12;
  return c;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const SynthCorpora sc = synth_corpus(SynthSpec{}, 1);
  for (bool pretrand : {false, true}) {
    TaggerModel m(small_config(), build_vocab(sc.source_train), pretrand);
    const nlohmann::json meta = {{"note", "x"}, {"epoch", 3}};
    const std::string bytes = serialize_checkpoint(m, meta);
    LoadedCheckpoint back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back.model, back.meta), bytes);
    EXPECT_EQ(back.meta, meta);
    EXPECT_EQ(back.model.vocab(), m.vocab());
    EXPECT_EQ(back.model.has_pretrand(), pretrand);
    const auto e = m.vocab().encode(sc.source_val.sentences[0]);
    EXPECT_EQ(back.model.logits(e), m.logits(e));
  }
}

TEST(Checkpoint, HeaderLayout) {
  const SynthCorpora sc = synth_corpus(SynthSpec{}, 1);
  TaggerModel m(small_config(), build_vocab(sc.source_train));
  const std::string bytes = serialize_checkpoint(m);
  EXPECT_EQ(bytes.substr(0, 8), "TAGXCKPT");
  EXPECT_EQ(detail::get_le<std::uint32_t>(bytes, 8), 1u);
  const auto len = detail::get_le<std::uint64_t>(bytes, 12);
  const auto header = nlohmann::json::parse(bytes.substr(20, len));
  EXPECT_EQ(header["format"], "tagxfer.checkpoint");
  std::size_t total = 0;
  for (const auto& p : header["parameters"]) {
    EXPECT_EQ(p["offset"], total);
    std::size_t n = 1;
    for (auto d : p["shape"]) n *= d.get<std::size_t>();
    total += n;
  }
  EXPECT_EQ(bytes.size(), 20 + len + 8 * total);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const SynthCorpora sc = synth_corpus(SynthSpec{}, 1);
  TaggerModel m(small_config(), build_vocab(sc.source_train));
  const std::string bytes = serialize_checkpoint(m);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), FormatError);
  std::string v2 = bytes;
  v2[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(v2), FormatError);
  EXPECT_THROW(deserialize_checkpoint("short"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), ConfigError);
}
