// Copyright 2026 The rmgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rmgap/dataset.hpp"
#include "rmgap/errors.hpp"

namespace rmgap {

inline constexpr const char* kArtifactVersion = "0.1.0";

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Hashing and files.

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Locale-free number formatting.

/// Shortest representation that round-trips; "nan", "inf" and "-inf" otherwise.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row_of(header); }

  CsvWriter& cell(double v) { return raw(format_double(v)); }
  CsvWriter& cell(std::size_t v) { return raw(std::to_string(v)); }
  CsvWriter& cell(bool v) { return raw(v ? "true" : "false"); }
  CsvWriter& cell(const std::string& v) { return raw(quote(v)); }
  CsvWriter& cell(const char* v) { return cell(std::string(v)); }

  void end_row() {
    if (pending_ != columns_) throw ContractError("CSV row has the wrong number of cells");
    out_ << '\n';
    pending_ = 0;
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string quote(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string q = "\"";
    for (char c : v) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  CsvWriter& raw(const std::string& v) {
    if (pending_ > 0) out_ << ',';
    out_ << v;
    ++pending_;
    return *this;
  }
  void row_of(const std::vector<std::string>& cells) {
    for (const auto& c : cells) cell(c);
    end_row();
  }

  std::size_t columns_;
  std::size_t pending_ = 0;
  std::ostringstream out_;
};

// ---------------------------------------------------------------------------
// JSONL preference datasets.

inline Json example_json(const PreferenceExample& e, const Json& meta = Json::object()) {
  Json j;
  j["prompt"] = e.prompt;
  j["chosen"] = e.chosen;
  j["rejected"] = e.rejected;
  j["meta"] = meta;
  return j;
}

inline std::string to_jsonl(const PreferenceDataset& data, const std::vector<Json>& metas = {}) {
  if (!metas.empty() && metas.size() != data.size()) throw InputError("one meta object per example expected");
  std::string out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += example_json(data.examples[i], metas.empty() ? Json::object() : metas[i]).dump();
    out += '\n';
  }
  return out;
}

inline PreferenceDataset parse_jsonl(std::string_view text, std::string name = "dataset") {
  PreferenceDataset data{{}, std::move(name), 0};
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
      data.examples.emplace_back(j.at("prompt").get<TokenSeq>(), j.at("chosen").get<TokenSeq>(),
                                 j.at("rejected").get<TokenSeq>());
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const InputError& ex) {
      throw InputError("line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return data;
}

inline PreferenceDataset load_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Run manifests.

struct RunInfo {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = kArtifactVersion;

  bool operator==(const RunInfo&) const = default;
};

inline RunInfo run_info(const Json& config, std::uint64_t seed) {
  return {hex64(fnv1a64(config.dump())), seed, kArtifactVersion};
}

/// Deterministic run block embedded in every report.
inline Json run_json(const RunInfo& r) {
  Json j;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["version"] = r.version;
  return j;
}

struct ManifestEntry {
  std::string file;  // relative to the output directory
  std::string checksum;
  std::size_t bytes = 0;
};

/// Collects written outputs, then emits manifest.json next to them.
class Manifest {
 public:
  Manifest(std::filesystem::path dir, RunInfo info) : dir_(std::move(dir)), info_(std::move(info)) {}

  void write(const std::string& file, std::string_view bytes) {
    write_file_atomic(dir_ / file, bytes);
    entries_.push_back({file, hex64(fnv1a64(bytes)), bytes.size()});
  }

  const std::vector<ManifestEntry>& entries() const { return entries_; }

  Json to_json() const {
    Json j;
    j["config_hash"] = info_.config_hash;
    j["seed"] = info_.seed;
    j["version"] = info_.version;
    Json files = Json::array();
    for (const auto& e : entries_) files.push_back(Json{{"file", e.file}, {"checksum", e.checksum}, {"bytes", e.bytes}});
    j["files"] = files;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    j["wall_clock_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    return j;
  }

  void finish() const { write_file_atomic(dir_ / "manifest.json", to_json().dump(2) + "\n"); }

 private:
  std::filesystem::path dir_;
  RunInfo info_;
  std::vector<ManifestEntry> entries_;
};

}  // namespace rmgap
