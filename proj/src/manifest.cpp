// Copyright 2026 The hdisen Authors
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

#include "hdisen/manifest.hpp"

#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "hdisen/common.hpp"

namespace hdisen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string string_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

}  // namespace

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ManifestEntry e;
    e.utterance_id = string_field(j, "utterance_id");
    e.speaker_id = string_field(j, "speaker_id");
    e.session_id = string_field(j, "session_id");
    e.style_id = string_field(j, "style_id");
    e.split = string_field(j, "split");
    if (auto it = j.find("duration_s"); it != j.end() && it->is_number()) e.duration_s = it->get<double>();
    const std::string audio = string_field(j, "audio_path");
    const std::string feat = string_field(j, "feature_path");
    if (!audio.empty()) e.audio_path = fs::path(audio).is_absolute() ? fs::path(audio) : base / audio;
    if (!feat.empty()) e.feature_path = fs::path(feat).is_absolute() ? fs::path(feat) : base / feat;
    if (e.utterance_id.empty() || e.speaker_id.empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": utterance_id and speaker_id are required");
    }
    m.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path().empty() ? fs::current_path() : fs::absolute(path.parent_path());
  auto rel = [&](const fs::path& p) {
    if (p.empty()) return std::string();
    const fs::path abs = fs::absolute(p);
    const fs::path r = abs.lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? abs.string() : r.string();
  };
  for (const auto& e : m) {
    json j = {{"utterance_id", e.utterance_id}, {"speaker_id", e.speaker_id},
              {"session_id", e.session_id},     {"style_id", e.style_id},
              {"duration_s", e.duration_s}};
    if (!e.audio_path.empty()) j["audio_path"] = rel(e.audio_path);
    if (!e.feature_path.empty()) j["feature_path"] = rel(e.feature_path);
    if (!e.split.empty()) j["split"] = e.split;
    out << j.dump() << '\n';
  }
}

void validate_manifest(const Manifest& m) {
  std::unordered_set<std::string> seen;
  for (const auto& e : m) {
    if (!seen.insert(e.utterance_id).second) {
      throw DataError("duplicate utterance_id '" + e.utterance_id + "' in manifest");
    }
    if (e.audio_path.empty() && e.feature_path.empty()) {
      throw DataError("utterance '" + e.utterance_id + "' has neither audio_path nor feature_path");
    }
    const fs::path& p = e.feature_path.empty() ? e.audio_path : e.feature_path;
    if (!fs::exists(p)) {
      throw DataError("utterance '" + e.utterance_id + "' points to missing file " + p.string());
    }
  }
}

Manifest filter_split(const Manifest& m, const std::string& split) {
  if (split.empty()) return m;
  Manifest out;
  for (const auto& e : m) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

std::vector<std::string> distinct_speakers(const Manifest& m) {
  std::set<std::string> s;
  for (const auto& e : m) s.insert(e.speaker_id);
  return {s.begin(), s.end()};
}

}  // namespace hdisen
