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
#include <vector>

#include "hdisen/common.hpp"
#include "hdisen/features.hpp"
#include "hdisen/manifest.hpp"

namespace hdisen {

/// Ground-truth generative factors of one synthetic utterance.
struct SyntheticFactors {
  int speaker = 0;
  int style = 0;
  int session = 0;  // index within the speaker
  MatrixF content;  // T x content_dims latent control trajectory
};

struct SyntheticOptions {
  int n_speakers = 20;
  int n_styles = 4;
  int utts_per_cell = 10;
  double duration_s = 2.0;
  std::uint64_t seed = 0;

  int n_mels = 80;
  int frame_rate = 80;
  int sessions_per_speaker = 2;
  int content_dims = 8;

  // RMS level of each additive component in the log-mel domain.
  double speaker_scale = 1.0;
  double style_scale = 1.5;
  double session_scale = 0.4;
  double content_scale = 1.0;

  double heldout_speaker_fraction = 0.2;
  double heldout_utt_fraction = 0.3;
  bool reserve_style = true;
};

/// Additive component tables the corpus is composed from.
struct FactorTables {
  RowVector<float> base;     // 1 x F
  MatrixF speaker;           // K x F
  MatrixF style;             // J x F
  MatrixF session;           // (K * sessions) x F, row = spk * sessions + ses
  MatrixF content_basis;     // content_dims x F
  std::vector<double> tilt;  // per-style tilt coefficient
};

struct SyntheticUtterance {
  std::string utterance_id;
  FeatureSequence features;
  SyntheticFactors factors;
  std::string split;
};

// Split tags written to the manifest.
inline constexpr const char* kSplitTrain = "train";
inline constexpr const char* kSplitTest = "test";
inline constexpr const char* kSplitUnseenStyle = "test_unseen_style";
inline constexpr const char* kSplitUnseenSpeaker = "test_unseen_speaker";

struct SyntheticCorpus {
  SyntheticOptions options;
  FactorTables tables;
  std::vector<SyntheticUtterance> utterances;

  /// Manifest records for the utterances (no file paths).
  Manifest manifest() const;
  std::string speaker_id(int k) const;
  std::string style_id(int j) const;
  std::string session_id(int k, int s) const;
};

/// Each utterance is base + speaker offset + session offset + style pattern
/// + content_basis^T * content trajectory, all in the log-mel domain. The
/// first three are constant over time; the content trajectory is a short
/// moving average of bounded noise.
SyntheticCorpus generate_corpus(const SyntheticOptions& opts);
SyntheticCorpus generate_corpus(int n_speakers, int n_styles, int utts_per_cell,
                                double duration_s, std::uint64_t seed);

/// Writes features/<utt>.dsf and manifest.jsonl under `dir`; returns the
/// manifest path.
std::filesystem::path write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

/// Exponentially decaying noise tail behind a unit direct-path tap; the
/// energy envelope falls by 60 dB over rt60_s.
Rir generate_rir(double rt60_s, std::size_t length, std::uint64_t seed, int sample_rate = 16000);

/// Least-squares slope of the time-averaged spectrum against the centred,
/// unit-span bin position. Style tilt shows up here.
double spectral_tilt(const MatrixF& x);
/// Pearson correlation between two equally shaped matrices after removing
/// each channel's time mean.
double content_correlation(const MatrixF& a, const MatrixF& b);

}  // namespace hdisen
