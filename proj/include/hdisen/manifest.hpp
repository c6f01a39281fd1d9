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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hdisen {

struct ManifestEntry {
  std::string utterance_id;
  std::filesystem::path audio_path;    // empty when features are given
  std::filesystem::path feature_path;  // empty when audio is given
  std::string speaker_id;
  std::string session_id;
  std::string style_id;
  double duration_s = 0.0;
  std::string split;  // optional partition tag, e.g. "train"
};

using Manifest = std::vector<ManifestEntry>;

/// Reads a JSON-lines manifest. Relative paths are resolved against the
/// manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
/// Writes a JSON-lines manifest; paths under `base_dir` are written relative.
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Rejects duplicate utterance ids, missing audio/feature paths and dangling
/// files. Throws DataError naming the first offending entries.
void validate_manifest(const Manifest& m);

Manifest filter_split(const Manifest& m, const std::string& split);
std::vector<std::string> distinct_speakers(const Manifest& m);

}  // namespace hdisen
