#pragma once

// File helpers shared by the CLI and tests.
//
// Activation snapshot = two files with a common stem:
//   <stem>.bin   N*H float64 little-endian values, row-major (token-major)
//   <stem>.json  {"format": "tagxfer.activation_snapshot", "version": 1,
//                 "epoch", "branch", "token_count", "units",
//                 "data_file": "<stem>.bin" (relative to the sidecar),
//                 "tokens": [surface, ...]}

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tagxfer/errors.hpp"
#include "tagxfer/model.hpp"

namespace tagxfer {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Pretty JSON with sorted keys and a trailing newline; stable across runs.
inline std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, json_text(j));
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_activation_snapshot(const std::filesystem::path& stem, const ActivationRecord& r) {
  std::string bytes;
  bytes.reserve(r.h.size() * 8);
  for (double v : r.h.raw()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path meta = stem;
  meta += ".json";
  write_file(bin, bytes);
  write_json(meta, {{"format", "tagxfer.activation_snapshot"},
                    {"version", 1},
                    {"epoch", r.epoch},
                    {"branch", branch_name(r.branch)},
                    {"token_count", r.token_count()},
                    {"units", r.units()},
                    {"data_file", bin.filename().string()},
                    {"tokens", r.tokens}});
}

inline ActivationRecord read_activation_snapshot(const std::filesystem::path& sidecar) {
  const nlohmann::json j = read_json(sidecar);
  if (j.value("format", "") != "tagxfer.activation_snapshot" || j.value("version", 0) != 1) {
    throw FormatError("'" + sidecar.string() + "' is not a version-1 activation snapshot");
  }
  ActivationRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.branch = parse_branch(j.at("branch").get<std::string>());
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto n = j.at("token_count").get<std::size_t>();
  const auto h = j.at("units").get<std::size_t>();
  if (r.tokens.size() != n) throw FormatError("snapshot token list disagrees with token_count");
  const std::string bytes = read_file(sidecar.parent_path() / j.at("data_file").get<std::string>());
  if (bytes.size() != n * h * 8) throw FormatError("snapshot data size does not match N x H");
  std::vector<double> data(n * h);
  for (std::size_t k = 0; k < data.size(); ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[k * 8 + i])) << (8 * i);
    }
    data[k] = std::bit_cast<double>(bits);
  }
  r.h = Array({n, h}, std::move(data));
  return r;
}

}  // namespace tagxfer
