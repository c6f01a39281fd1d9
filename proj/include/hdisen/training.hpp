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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hdisen/common.hpp"
#include "hdisen/losses.hpp"
#include "hdisen/model.hpp"
#include "hdisen/nn.hpp"

namespace hdisen {

struct TrainOptions {
  AdamOptions adam;
  LossWeights weights;
  int tau_frames = 80;
  int batch_size = 16;
  int crop_frames = 160;
  int iterations = 5000;
  int adversarial_updates = 3;  // per main update
  double vtlp_min = 0.9;
  double vtlp_max = 1.1;
  double in_eps = 1e-5;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;  // 0 disables periodic checkpoints
  std::vector<std::string> frozen_groups;

  void validate() const;
};

struct TrainingExample {
  std::string utterance_id;
  MatrixF features;  // T x F log-mel
  int speaker = 0;
};

/// B crops from distinct utterances: raw input, content-branch input
/// (warped + instance-normalised), posterior noise and speaker labels.
template <typename T>
struct TrainingBatch {
  std::vector<Matrix<T>> raw;
  std::vector<Matrix<T>> augmented;
  std::vector<Matrix<T>> noise;
  std::vector<int> labels;

  std::size_t size() const { return raw.size(); }
  template <typename U>
  TrainingBatch<U> cast() const;
};

template <typename T>
struct TrainState {
  Model<T> model;
  std::map<std::string, AdamMoments<T>> moments;  // keyed "group/name"
  std::int64_t step = 0;                          // completed iterations
  std::int64_t main_updates = 0;
  std::int64_t adversarial_updates = 0;
  std::uint64_t seed = 0;
};

/// Draws the batch for (iteration, substep) of a run. Deterministic in
/// (options.seed, iteration, substep); substep 0 is the main update and
/// 1..adversarial_updates the adversarial ones.
TrainingBatch<float> sample_batch(const std::vector<TrainingExample>& data, const ModelConfig& model,
                                  const TrainOptions& opts, std::int64_t iteration, int substep);

/// Zeroes all gradients, runs the full objective on `batch` and accumulates
/// gradients for every group (adversarial heads included, though main_step
/// does not apply them). Encoders see reversed adversarial gradients.
template <typename T>
LossBreakdown compute_main_gradients(Model<T>& model, const TrainingBatch<T>& batch, const LossWeights& w,
                                     int tau_frames);

/// Zeroes all gradients and accumulates gradients of the adversarial
/// objective (speaker CE on detached style frames + CPC on the detached
/// content) into the adversarial groups only. Returns that objective.
template <typename T>
double compute_adversarial_gradients(Model<T>& model, const TrainingBatch<T>& batch, int tau_frames);

/// One update of the encoders, decoder and speaker classifier. Throws
/// NumericError naming the first non-finite term without touching the state.
template <typename T>
LossBreakdown main_step(TrainState<T>& state, const TrainingBatch<T>& batch, const TrainOptions& opts);

/// One update of the adversarial speaker classifier and adversarial CPC head.
template <typename T>
double adversarial_step(TrainState<T>& state, const TrainingBatch<T>& batch, const TrainOptions& opts);

struct FitHooks {
  std::filesystem::path out_dir;  // empty: no files written
  nlohmann::json checkpoint_extra;
  std::function<void(std::int64_t iteration, const LossBreakdown&)> on_iteration;
  std::function<void(const TrainState<float>&, bool main_update)> after_update;
};

struct FitResult {
  std::vector<LossBreakdown> history;
  std::int64_t main_updates = 0;
  std::int64_t adversarial_updates = 0;
};

/// Runs [1 main, N adversarial] updates until state.step reaches
/// opts.iterations. Writes loss.csv, periodic checkpoints and final.ckpt when
/// hooks.out_dir is set. Two consecutive non-finite main losses halt with a
/// diagnostic dump.
FitResult fit(TrainState<float>& state, const std::vector<TrainingExample>& data, const TrainOptions& opts,
              const FitHooks& hooks = {});

TrainState<float> init_state(const ModelConfig& config, std::uint64_t seed);

std::string loss_csv_header();
std::string loss_csv_row(std::int64_t iteration, const LossBreakdown& b);

}  // namespace hdisen
