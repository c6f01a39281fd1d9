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

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hdisen/common.hpp"
#include "hdisen/nn.hpp"

namespace hdisen {

/// Architecture hyperparameters. Widths of the utterance encoder, content
/// encoder and decoder are free choices; the speaker/style branches follow
/// the 3-layer, kernel-5, 128-dimensional layout.
struct ModelConfig {
  int n_mels = 80;
  int kernel = 5;

  int utt_layers = 4;
  int utt_hidden = 512;
  int utt_dim = 256;

  int content_hidden = 512;
  int downsample = 4;  // power of two
  int content_dim = 64;

  int branch_layers = 3;
  int branch_hidden = 128;
  int branch_dim = 128;

  int adv_clf_layers = 3;
  int adv_clf_hidden = 128;

  int adv_cpc_layers = 2;
  int adv_cpc_kernel = 3;
  int adv_cpc_dim = 128;
  double adv_cpc_scale = 10.0;  // head frames are unit-normalised, then scaled

  int decoder_hidden = 512;

  int n_speakers = 0;  // classifier width, taken from the training manifest
  double leaky_slope = 0.2;
  std::uint64_t init_seed = 0;

  void validate() const;
  int decoder_input_dim() const { return 2 * branch_dim + content_dim; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Names of the eight disjoint parameter groups.
inline constexpr std::array<std::string_view, 8> kParameterGroups = {
    "enc_utt", "enc_spk", "enc_sty", "enc_cont", "dec", "clf_spk", "adv_clf_spk", "adv_cpc_head"};
inline constexpr std::array<std::string_view, 6> kMainGroups = {"enc_utt", "enc_spk", "enc_sty",
                                                                "enc_cont", "dec", "clf_spk"};
inline constexpr std::array<std::string_view, 2> kAdversarialGroups = {"adv_clf_spk", "adv_cpc_head"};

bool is_main_group(std::string_view group);
bool is_adversarial_group(std::string_view group);

template <typename T>
struct ContentPosterior {
  Matrix<T> mu;         // N x D_z
  Matrix<T> log_sigma;  // N x D_z
};

/// Everything the training losses and the backward pass need for one
/// utterance.
template <typename T>
struct ForwardTrace {
  using Cache = typename Sequential<T>::Cache;
  Eigen::Index frames = 0;
  Cache utt, spk, sty, cont, dec, clf, adv_clf, adv_cpc;
  Matrix<T> S, S_spk, S_sty;
  Matrix<T> mu, log_sigma, noise, Z;
  RowVector<T> pooled_spk, pooled_sty;
  Matrix<T> spk_logits, adv_logits, adv_cpc_raw, adv_cpc_out;
  Matrix<T> x_hat;
};

/// Upstream gradients for a ForwardTrace. Empty matrices mean "no gradient".
template <typename T>
struct TraceGradients {
  Matrix<T> d_x_hat;
  Matrix<T> d_S;
  Matrix<T> d_spk_logits;
  Matrix<T> d_adv_logits;
  Matrix<T> d_adv_cpc;
  Matrix<T> d_mu;
  Matrix<T> d_log_sigma;
};

template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Inference-path operations.
  Matrix<T> utterance_encoder(const Matrix<T>& x) const;
  Matrix<T> speaker_encoder(const Matrix<T>& s) const;
  Matrix<T> style_encoder(const Matrix<T>& s) const;
  /// Expects the content-branch input (already warped and normalised).
  ContentPosterior<T> content_encoder(const Matrix<T>& x_aug) const;
  Matrix<T> speaker_logits(const Matrix<T>& s_spk) const;
  Matrix<T> speaker_classify(const Matrix<T>& s_spk) const;
  Matrix<T> adversarial_speaker_logits(const Matrix<T>& s_sty) const;
  Matrix<T> adversarial_speaker_classify(const Matrix<T>& s_sty) const;
  /// Head frames scaled to norm adv_cpc_scale, so the CPC logits it feeds
  /// stay bounded whatever the scale of z.
  Matrix<T> adversarial_cpc_head(const Matrix<T>& z, typename Sequential<T>::Cache* cache = nullptr,
                                 Matrix<T>* raw = nullptr) const;
  /// Accumulates head gradients; returns dL/dz when `need_input_grad`.
  Matrix<T> adversarial_cpc_backward(const Matrix<T>& d_out, const typename Sequential<T>::Cache& cache,
                                     const Matrix<T>& raw, bool need_input_grad);
  /// Tiles both pooled vectors over the N content frames, concatenates and
  /// decodes; output has N * downsample frames cropped to `out_frames` when
  /// out_frames > 0.
  Matrix<T> decode(const RowVector<T>& spk, const RowVector<T>& sty, const Matrix<T>& z,
                   Eigen::Index out_frames = 0) const;

  /// Number of content frames for T input frames: ceil(T / downsample).
  Eigen::Index content_frames(Eigen::Index n_frames) const;
  /// Lag on the content time axis corresponding to `lag` input frames.
  int content_lag(int lag) const { return lag / config_.downsample; }

  /// Full training forward pass with caches. `noise` has the posterior's
  /// shape; zero noise gives the posterior mean.
  ForwardTrace<T> forward(const Matrix<T>& x, const Matrix<T>& x_aug, const Matrix<T>& noise,
                          bool with_adversaries = true) const;
  /// Accumulates parameter gradients for a trace. Gradients into the
  /// adversarial heads reach the encoders through gradient reversal.
  void backward(const ForwardTrace<T>& trace, const TraceGradients<T>& grads);

  void zero_grad();
  std::size_t parameter_count(std::string_view group) const;

  template <typename F>
  void for_each_param(F&& f) {
    visit_groups(*this, f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    visit_groups(*this, f);
  }

  Sequential<T>& group(std::string_view name);
  const Sequential<T>& group(std::string_view name) const;

 private:
  template <typename Self, typename F>
  static void visit_groups(Self& self, F& f) {
    for (std::string_view g : kParameterGroups) {
      self.group(g).for_each_param([&](const std::string& name, auto& p) { f(g, name, p); });
    }
  }

  ModelConfig config_;
  Sequential<T> enc_utt_, enc_spk_, enc_sty_, enc_cont_, dec_, clf_spk_, adv_clf_spk_, adv_cpc_head_;
};

/// s = mu + exp(log_sigma) * noise.
template <typename T>
Matrix<T> sample_content(const ContentPosterior<T>& q, const Matrix<T>& noise);

}  // namespace hdisen
