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

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "hdisen/common.hpp"

namespace hdisen {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Log-mel observation: frames along rows, mel bins along columns.
struct FeatureSequence {
  MatrixF values;
  int frame_rate = 80;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index bins() const { return values.cols(); }
};

struct Rir {
  std::vector<float> taps;
  int sample_rate = 16000;
  std::string label;
};

struct LogMelOptions {
  int sample_rate = 16000;
  int n_mels = 80;
  int frame_rate = 80;
  double window_ms = 25.0;
  int n_fft = 512;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects Nyquist
  double power_floor = 1e-10;
  double vtlp_alpha = 1.0;

  int hop_length() const;
  int window_length() const;
};

// Audio I/O.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform resample(const Waveform& w, int target_rate);
/// Decodes `path`, downmixes to mono and resamples to `target_rate`.
Waveform ingest(const std::filesystem::path& path, int target_rate);

/// Number of frames for `n_samples` input samples. Frames are centred on
/// k * hop + hop / 2 and the trailing partial hop is dropped, so one second at
/// 80 frames/s yields exactly 80 frames.
Eigen::Index frame_count(std::size_t n_samples, int window, int hop);

/// Hann-windowed power spectrogram, T x (n_fft / 2 + 1).
MatrixD power_spectrogram(const Waveform& w, const LogMelOptions& opts);
/// HTK-scale triangular filterbank, (n_fft / 2 + 1) x n_mels.
MatrixD mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max);

FeatureSequence logmel(const Waveform& w, const LogMelOptions& opts);
FeatureSequence logmel(const Waveform& w, int n_mels, int frame_rate);

/// Source position (fractional bin) sampled by output bin `bin` under a
/// piecewise-linear warp with factor `alpha`. The low band maps j -> alpha * j;
/// above the knee the map runs linearly to the top bin, which is a fixed point.
double vtlp_source_position(double bin, double alpha, Eigen::Index n_bins);

template <typename T>
Matrix<T> vtlp(const Matrix<T>& x, double alpha);
FeatureSequence vtlp(const FeatureSequence& x, double alpha);

/// Per-channel standardisation over time: (x - mean) / sqrt(var + eps).
template <typename T>
Matrix<T> instance_normalize(const Matrix<T>& x, double eps = 1e-5);
FeatureSequence instance_normalize(const FeatureSequence& x, double eps = 1e-5);

/// Linear convolution truncated to the input length, rescaled so the output
/// peak matches the input peak.
Waveform convolve_rir(const Waveform& w, const Rir& r);

// Feature files: "DSF1", u32 T, u32 F, u32 frame_rate, then T*F little-endian
// float32 values in row-major order.
void write_features(const std::filesystem::path& path, const FeatureSequence& x);
FeatureSequence read_features(const std::filesystem::path& path);

}  // namespace hdisen
