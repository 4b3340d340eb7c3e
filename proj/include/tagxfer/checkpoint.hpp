#pragma once

// Binary checkpoint container, version 1:
//
//   bytes 0..7    magic "TAGXCKPT"
//   bytes 8..11   format version, uint32 little-endian (= 1)
//   bytes 12..19  header length L, uint64 little-endian
//   next L bytes  header, compact JSON (UTF-8), object keys sorted
//   remainder     parameter payload: float64 little-endian, each parameter's
//                 values row-major, in header "parameters" order
//
// The header holds the model config, the full vocabulary, whether a PretRand
// head is present, an optional free-form "meta" object and, per parameter,
// {name, shape, offset} with offset counted in float64 elements. Saving a
// loaded checkpoint reproduces the file byte for byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagxfer/errors.hpp"
#include "tagxfer/model.hpp"

namespace tagxfer {

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'G', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const TaggerModel& model,
                                        const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (const Parameter* p : model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->value.size();
  }
  nlohmann::json header = {{"format", "tagxfer.checkpoint"},
                           {"version", kCheckpointVersion},
                           {"config", model.config().to_json()},
                           {"vocabulary", model.vocab().to_json()},
                           {"pretrand", model.has_pretrand()},
                           {"meta", meta},
                           {"parameters", std::move(params)}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const Parameter* p : model.parameters()) {
    for (double v : p->value.raw()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

struct LoadedCheckpoint {
  TaggerModel model;
  nlohmann::json meta;
};

inline LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("not a tagxfer checkpoint");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = detail::get_le<std::uint64_t>(bytes, 12);
  if (20 + header_len > bytes.size()) throw FormatError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(20, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json(header.at("config"));
  Vocabulary vocab = Vocabulary::from_json(header.at("vocabulary"));
  TaggerModel model(cfg, std::move(vocab), header.at("pretrand").get<bool>());
  if (model.config().num_classes != cfg.num_classes) {
    throw FormatError("checkpoint tag-set size disagrees with its config");
  }
  const std::size_t payload = 20 + header_len;
  std::size_t expected = 0;
  for (const auto& entry : header.at("parameters")) {
    const auto name = entry.at("name").get<std::string>();
    Parameter* p = model.find_parameter(name);
    if (p == nullptr) throw FormatError("checkpoint has unknown parameter '" + name + "'");
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != p->value.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + shape_str(shape) +
                        ", model expects " + shape_str(p->value.shape()));
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const auto bits = detail::get_le<std::uint64_t>(bytes, payload + 8 * (offset + i));
      p->value[i] = std::bit_cast<double>(bits);
    }
    expected += p->value.size();
  }
  if (header.at("parameters").size() != model.parameters().size()) {
    throw FormatError("checkpoint parameter list does not match the model");
  }
  if (bytes.size() != payload + 8 * expected) throw FormatError("checkpoint payload size mismatch");
  return {std::move(model), header.value("meta", nlohmann::json::object())};
}

inline void save_checkpoint(const std::string& path, const TaggerModel& model,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(model, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace tagxfer
