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

#include <cstdint>
#include <filesystem>
#include <string>

#include "hdisen/features.hpp"
#include "hdisen/model.hpp"
#include "hdisen/training.hpp"

namespace hdisen {

struct EvalOptions {
  std::size_t n_target = 2000;
  std::size_t n_nontarget = 2000;
  int probe_layers = 3;
  int probe_hidden = 128;
  int probe_epochs = 300;
  int probe_batch_size = 32;
  double probe_train_fraction = 0.5;
};

/// Every tunable of a run, grouped as in the config file:
/// [features], [model], [loss], [train], [eval].
struct RunConfig {
  LogMelOptions features;
  ModelConfig model;
  TrainOptions train;  // [loss] fills train.weights and train.tau_frames
  EvalOptions eval;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Seed from HDISEN_SEED, or 0 when unset. Throws ConfigError on junk.
std::uint64_t default_seed();

/// Defaults with the seed taken from default_seed().
RunConfig default_run_config();

/// Parses an INI file on top of the defaults. Unknown sections or keys and
/// unparsable values raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text);

/// Resolved config as INI text; parse_run_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& c);

}  // namespace hdisen
