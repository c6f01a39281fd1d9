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

#include <optional>
#include <string>
#include <vector>

#include "hdisen/common.hpp"

namespace hdisen {

struct LossWeights {
  double lambda_s = 1.0;  // CPC on utterance-level frames
  double lambda_z = 1.0;  // adversarial CPC on content
  double beta = 0.01;     // KL divergence

  void validate() const;
};

struct LossBreakdown {
  double rec = 0.0;
  double cpc_s = 0.0;
  double kld = 0.0;
  double adv_cpc = 0.0;
  double ce_spk = 0.0;
  double adv_ce_sty = 0.0;
  double total = 0.0;

  bool finite() const;
  /// Name of the first non-finite term, or empty.
  std::string first_non_finite() const;
};

/// Individually evaluated loss terms; a missing term is a configuration error
/// at assembly time.
struct LossTerms {
  std::optional<double> rec, cpc_s, kld, adv_cpc, ce_spk, adv_ce_sty;
};

/// total = rec + lambda_s * cpc_s + beta * kld + lambda_z * adv_cpc + ce_spk
///         + adv_ce_sty.
/// Adversarial terms carry a positive sign: the adversaries minimise them and
/// the encoders receive the negated gradient through gradient_reversal.
LossBreakdown total_loss(const LossTerms& terms, const LossWeights& w);

/// InfoNCE over a batch of equally long frame sequences. For every utterance
/// b and anchor t the positive is frame t + lag of b and the negatives are
/// frame t + lag of every other utterance in the batch. Returns the mean over
/// all (b, t) anchors. When `grads` is non-null it receives dL/d(batch[b]).
template <typename T>
double cpc_loss(const std::vector<Matrix<T>>& batch, int lag,
                std::vector<Matrix<T>>* grads = nullptr);

/// Mean over frames of KL(N(mu, diag sigma^2) || N(0, I)), sigma = exp(log_sigma).
template <typename T>
double kld_loss(const Matrix<T>& mu, const Matrix<T>& log_sigma, Matrix<T>* d_mu = nullptr,
                Matrix<T>* d_log_sigma = nullptr);

/// (1/T) sum_t || |d_t| * (2 sigmoid(d_t) - 1) ||_1 with d = x_hat - x.
template <typename T>
double xsigmoid_loss(const Matrix<T>& x_hat, const Matrix<T>& x, Matrix<T>* d_x_hat = nullptr);

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits);

/// Frame-averaged cross-entropy of probability rows against one label.
template <typename T>
double cross_entropy(const Matrix<T>& probs, int label);

/// Same quantity computed from logits with a stable log-softmax.
template <typename T>
double cross_entropy_with_logits(const Matrix<T>& logits, int label, Matrix<T>* d_logits = nullptr);

/// Identity in the forward direction; negates the gradient on the way back.
struct GradientReversal {
  template <typename M>
  static const M& forward(const M& x) {
    return x;
  }
  template <typename M>
  static M backward(const M& upstream) {
    return -upstream;
  }
};

}  // namespace hdisen
