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

#include <string>
#include <vector>

#include "hdisen/model.hpp"
#include "hdisen/training.hpp"
#include "test_util.hpp"

namespace hdisen::testing {

inline ModelConfig tiny_model(int n_speakers, int n_mels = 12) {
  ModelConfig c;
  c.n_mels = n_mels;
  c.utt_layers = 2;
  c.utt_hidden = 16;
  c.utt_dim = 16;
  c.content_hidden = 16;
  c.content_dim = 4;
  c.branch_layers = 2;
  c.branch_hidden = 8;
  c.branch_dim = 8;
  c.adv_clf_layers = 2;
  c.adv_clf_hidden = 8;
  c.adv_cpc_dim = 8;
  c.decoder_hidden = 16;
  c.n_speakers = n_speakers;
  c.init_seed = 4;
  return c;
}

inline TrainOptions tiny_options() {
  TrainOptions o;
  o.tau_frames = 8;
  o.batch_size = 4;
  o.crop_frames = 32;
  o.iterations = 4;
  o.checkpoint_every = 0;
  return o;
}

// Per-speaker constant offset plus white frame noise.
inline std::vector<TrainingExample> tiny_data(int n_speakers, int per_speaker, Eigen::Index frames,
                                              Eigen::Index bins, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingExample> data;
  for (int s = 0; s < n_speakers; ++s) {
    const MatrixD offset = random_matrix(1, bins, rng);
    for (int u = 0; u < per_speaker; ++u) {
      MatrixD x = random_matrix(frames, bins, rng, 0.5);
      x.rowwise() += offset.row(0);
      data.push_back({"s" + std::to_string(s) + "_u" + std::to_string(u), x.cast<float>(), s});
    }
  }
  return data;
}

}  // namespace hdisen::testing
