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

#include "hdisen/losses.hpp"

#include <cmath>

namespace hdisen {

using Eigen::Index;

void LossWeights::validate() const {
  if (!(lambda_s >= 0.0) || !(lambda_z >= 0.0) || !(beta >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

std::string LossBreakdown::first_non_finite() const {
  const std::pair<const char*, double> terms[] = {{"rec", rec},         {"cpc_s", cpc_s},
                                                  {"kld", kld},         {"adv_cpc", adv_cpc},
                                                  {"ce_spk", ce_spk},   {"adv_ce_sty", adv_ce_sty},
                                                  {"total", total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) return name;
  }
  return {};
}

bool LossBreakdown::finite() const { return first_non_finite().empty(); }

LossBreakdown total_loss(const LossTerms& t, const LossWeights& w) {
  w.validate();
  auto need = [](const std::optional<double>& v, const char* name) {
    if (!v) throw ConfigError(std::string("loss term '") + name + "' was not evaluated");
    return *v;
  };
  LossBreakdown b;
  b.rec = need(t.rec, "rec");
  b.cpc_s = need(t.cpc_s, "cpc_s");
  b.kld = need(t.kld, "kld");
  b.adv_cpc = need(t.adv_cpc, "adv_cpc");
  b.ce_spk = need(t.ce_spk, "ce_spk");
  b.adv_ce_sty = need(t.adv_ce_sty, "adv_ce_sty");
  b.total = b.rec + w.lambda_s * b.cpc_s + w.beta * b.kld + w.lambda_z * b.adv_cpc + b.ce_spk +
            b.adv_ce_sty;
  return b;
}

template <typename T>
double cpc_loss(const std::vector<Matrix<T>>& batch, int lag, std::vector<Matrix<T>>* grads) {
  const auto n_batch = static_cast<Index>(batch.size());
  if (n_batch < 2) throw ParameterError("CPC needs a batch of at least 2 utterances for negatives");
  if (lag < 1) throw ParameterError("CPC lag must be >= 1");
  const Index n_frames = batch[0].rows();
  const Index dim = batch[0].cols();
  for (const auto& e : batch) {
    if (e.rows() != n_frames || e.cols() != dim) {
      throw ParameterError("CPC batch embeddings must share one shape");
    }
  }
  const Index n_anchor = n_frames - lag;
  if (n_anchor < 1) {
    throw EmptyInputError("CPC needs more than " + std::to_string(lag) + " frames, got " +
                          std::to_string(n_frames));
  }
  if (grads) {
    grads->assign(batch.size(), Matrix<T>());
    for (auto& g : *grads) g.setZero(n_frames, dim);
  }

  const double norm = 1.0 / static_cast<double>(n_anchor * n_batch);
  Matrix<T> anchors(n_batch, dim), cands(n_batch, dim);
  double total = 0.0;
  for (Index t = 0; t < n_anchor; ++t) {
    for (Index b = 0; b < n_batch; ++b) {
      anchors.row(b) = batch[static_cast<std::size_t>(b)].row(t);
      cands.row(b) = batch[static_cast<std::size_t>(b)].row(t + lag);
    }
    // scores(b, u) = anchor_b . candidate_u; the positive sits on the diagonal.
    const MatrixD scores = (anchors * cands.transpose()).template cast<double>();
    MatrixD coef(n_batch, n_batch);
    for (Index b = 0; b < n_batch; ++b) {
      const double mx = scores.row(b).maxCoeff();
      const double lse = mx + std::log((scores.row(b).array() - mx).exp().sum());
      total += lse - scores(b, b);
      coef.row(b) = (scores.row(b).array() - lse).exp();
      coef(b, b) -= 1.0;
    }
    if (grads) {
      const Matrix<T> g = (coef * norm).template cast<T>();
      const Matrix<T> d_anchor = g * cands;
      const Matrix<T> d_cand = g.transpose() * anchors;
      for (Index b = 0; b < n_batch; ++b) {
        (*grads)[static_cast<std::size_t>(b)].row(t) += d_anchor.row(b);
        (*grads)[static_cast<std::size_t>(b)].row(t + lag) += d_cand.row(b);
      }
    }
  }
  return total * norm;
}

template <typename T>
double kld_loss(const Matrix<T>& mu, const Matrix<T>& log_sigma, Matrix<T>* d_mu, Matrix<T>* d_log_sigma) {
  if (mu.rows() != log_sigma.rows() || mu.cols() != log_sigma.cols()) {
    throw ParameterError("posterior mean and log-scale shapes differ");
  }
  if (mu.rows() < 1) throw EmptyInputError("KL divergence over zero frames");
  const double n = static_cast<double>(mu.rows());
  const Eigen::ArrayXXd m = mu.template cast<double>().array();
  const Eigen::ArrayXXd ls = log_sigma.template cast<double>().array();
  const double kl = 0.5 * (m.square() + (2.0 * ls).exp() - 1.0 - 2.0 * ls).sum() / n;
  if (d_mu) *d_mu = (m / n).template cast<T>().matrix();
  if (d_log_sigma) *d_log_sigma = (((2.0 * ls).exp() - 1.0) / n).template cast<T>().matrix();
  return kl;
}

template <typename T>
double xsigmoid_loss(const Matrix<T>& x_hat, const Matrix<T>& x, Matrix<T>* d_x_hat) {
  if (x_hat.rows() != x.rows() || x_hat.cols() != x.cols()) {
    throw ParameterError("reconstruction and target shapes differ");
  }
  if (x.rows() < 1) throw EmptyInputError("reconstruction loss over zero frames");
  const double inv_t = 1.0 / static_cast<double>(x.rows());
  // |d| (2 sigmoid(d) - 1) == d tanh(d / 2).
  const Eigen::ArrayXXd d = (x_hat - x).template cast<double>().array();
  const Eigen::ArrayXXd th = (0.5 * d).tanh();
  const double loss = (d * th).sum() * inv_t;
  if (d_x_hat) {
    *d_x_hat = ((th + 0.5 * d * (1.0 - th.square())) * inv_t).template cast<T>().matrix();
  }
  return loss;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename T>
double cross_entropy(const Matrix<T>& probs, int label) {
  if (label < 0 || label >= probs.cols()) {
    throw ParameterError("label " + std::to_string(label) + " outside [0, " +
                         std::to_string(probs.cols()) + ")");
  }
  if (probs.rows() < 1) throw EmptyInputError("cross-entropy over zero frames");
  double s = 0.0;
  for (Index t = 0; t < probs.rows(); ++t) s -= std::log(static_cast<double>(probs(t, label)));
  return s / static_cast<double>(probs.rows());
}

template <typename T>
double cross_entropy_with_logits(const Matrix<T>& logits, int label, Matrix<T>* d_logits) {
  if (label < 0 || label >= logits.cols()) {
    throw ParameterError("label " + std::to_string(label) + " outside [0, " +
                         std::to_string(logits.cols()) + ")");
  }
  if (logits.rows() < 1) throw EmptyInputError("cross-entropy over zero frames");
  const MatrixD l = logits.template cast<double>();
  const Eigen::VectorXd mx = l.rowwise().maxCoeff();
  const MatrixD shifted = l.colwise() - mx;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  const double n = static_cast<double>(l.rows());
  const double loss = (lse - shifted.col(label)).sum() / n;
  if (d_logits) {
    MatrixD g = (shifted.colwise() - lse).array().exp();
    g.col(label).array() -= 1.0;
    *d_logits = (g / n).template cast<T>();
  }
  return loss;
}

#define HDISEN_INSTANTIATE(T)                                                                  \
  template double cpc_loss<T>(const std::vector<Matrix<T>>&, int, std::vector<Matrix<T>>*);    \
  template double kld_loss<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, Matrix<T>*);     \
  template double xsigmoid_loss<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*);            \
  template Matrix<T> softmax_rows<T>(const Matrix<T>&);                                        \
  template double cross_entropy<T>(const Matrix<T>&, int);                                     \
  template double cross_entropy_with_logits<T>(const Matrix<T>&, int, Matrix<T>*);

HDISEN_INSTANTIATE(float)
HDISEN_INSTANTIATE(double)

#undef HDISEN_INSTANTIATE

}  // namespace hdisen
