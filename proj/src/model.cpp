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

#include "hdisen/model.hpp"

#include <algorithm>
#include <cmath>

#include "hdisen/losses.hpp"

namespace hdisen {

using Eigen::Index;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

template <typename T>
void require_finite(const Matrix<T>& x, const char* what) {
  if (!all_finite(x)) throw NumericError(std::string(what) + " received non-finite input");
}

// conv stack: in -> hidden x (layers - 1) -> out, activation on hidden layers.
std::vector<LayerSpec> conv_stack(int in, int hidden, int out, int layers, int kernel) {
  std::vector<LayerSpec> specs;
  int c = in;
  for (int i = 0; i < layers; ++i) {
    const bool last = i + 1 == layers;
    specs.push_back({c, last ? out : hidden, kernel, 1, false, !last});
    c = hidden;
  }
  return specs;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_mels < 1 || kernel < 1 || utt_layers < 1 || utt_hidden < 1 || utt_dim < 1 ||
      content_hidden < 1 || content_dim < 1 || branch_layers < 1 || branch_hidden < 1 ||
      branch_dim < 1 || adv_clf_layers < 1 || adv_clf_hidden < 1 || adv_cpc_layers < 1 ||
      adv_cpc_kernel < 1 || adv_cpc_dim < 1 || !(adv_cpc_scale > 0.0) || decoder_hidden < 1) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (kernel % 2 == 0 || adv_cpc_kernel % 2 == 0) throw ConfigError("conv kernels must be odd");
  if (!is_power_of_two(downsample)) throw ConfigError("downsample must be a power of two");
  if (n_speakers < 1) throw ConfigError("number of speakers (classifier width) is not configured");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must be in (0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_mels", c.n_mels},
       {"kernel", c.kernel},
       {"utt_layers", c.utt_layers},
       {"utt_hidden", c.utt_hidden},
       {"utt_dim", c.utt_dim},
       {"content_hidden", c.content_hidden},
       {"downsample", c.downsample},
       {"content_dim", c.content_dim},
       {"branch_layers", c.branch_layers},
       {"branch_hidden", c.branch_hidden},
       {"branch_dim", c.branch_dim},
       {"adv_clf_layers", c.adv_clf_layers},
       {"adv_clf_hidden", c.adv_clf_hidden},
       {"adv_cpc_layers", c.adv_cpc_layers},
       {"adv_cpc_kernel", c.adv_cpc_kernel},
       {"adv_cpc_dim", c.adv_cpc_dim},
       {"adv_cpc_scale", c.adv_cpc_scale},
       {"decoder_hidden", c.decoder_hidden},
       {"n_speakers", c.n_speakers},
       {"leaky_slope", c.leaky_slope},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  auto get = [&](const char* k, auto& field) {
    if (auto it = j.find(k); it != j.end()) it->get_to(field);
  };
  c = d;
  get("n_mels", c.n_mels);
  get("kernel", c.kernel);
  get("utt_layers", c.utt_layers);
  get("utt_hidden", c.utt_hidden);
  get("utt_dim", c.utt_dim);
  get("content_hidden", c.content_hidden);
  get("downsample", c.downsample);
  get("content_dim", c.content_dim);
  get("branch_layers", c.branch_layers);
  get("branch_hidden", c.branch_hidden);
  get("branch_dim", c.branch_dim);
  get("adv_clf_layers", c.adv_clf_layers);
  get("adv_clf_hidden", c.adv_clf_hidden);
  get("adv_cpc_layers", c.adv_cpc_layers);
  get("adv_cpc_kernel", c.adv_cpc_kernel);
  get("adv_cpc_dim", c.adv_cpc_dim);
  get("adv_cpc_scale", c.adv_cpc_scale);
  get("decoder_hidden", c.decoder_hidden);
  get("n_speakers", c.n_speakers);
  get("leaky_slope", c.leaky_slope);
  get("init_seed", c.init_seed);
}

bool is_main_group(std::string_view g) {
  return std::find(kMainGroups.begin(), kMainGroups.end(), g) != kMainGroups.end();
}

bool is_adversarial_group(std::string_view g) {
  return std::find(kAdversarialGroups.begin(), kAdversarialGroups.end(), g) != kAdversarialGroups.end();
}

template <typename T>
Model<T>::Model(const ModelConfig& c) : config_(c) {
  c.validate();
  Rng rng(derive_seed(c.init_seed, 0x6d6f64656c));
  const double slope = c.leaky_slope;

  enc_utt_ = Sequential<T>(conv_stack(c.n_mels, c.utt_hidden, c.utt_dim, c.utt_layers, c.kernel), slope, rng);
  enc_spk_ = Sequential<T>(conv_stack(c.utt_dim, c.branch_hidden, c.branch_dim, c.branch_layers, c.kernel),
                           slope, rng);
  enc_sty_ = Sequential<T>(conv_stack(c.utt_dim, c.branch_hidden, c.branch_dim, c.branch_layers, c.kernel),
                           slope, rng);

  std::vector<LayerSpec> cont;
  cont.push_back({c.n_mels, c.content_hidden, c.kernel, 1, false, true});
  for (int i = 0; i < log2_int(c.downsample); ++i) {
    cont.push_back({c.content_hidden, c.content_hidden, c.kernel, 2, false, true});
  }
  cont.push_back({c.content_hidden, 2 * c.content_dim, 1, 1, false, false});
  enc_cont_ = Sequential<T>(cont, slope, rng);

  std::vector<LayerSpec> dec;
  dec.push_back({c.decoder_input_dim(), c.decoder_hidden, c.kernel, 1, false, true});
  for (int i = 0; i < log2_int(c.downsample); ++i) {
    dec.push_back({c.decoder_hidden, c.decoder_hidden, 2, 2, true, true});
  }
  dec.push_back({c.decoder_hidden, c.n_mels, c.kernel, 1, false, false});
  dec_ = Sequential<T>(dec, slope, rng);

  clf_spk_ = Sequential<T>({{c.branch_dim, c.n_speakers, 1, 1, false, false}}, slope, rng);
  adv_clf_spk_ = Sequential<T>(
      conv_stack(c.branch_dim, c.adv_clf_hidden, c.n_speakers, c.adv_clf_layers, 1), slope, rng);
  adv_cpc_head_ = Sequential<T>(
      conv_stack(c.content_dim, c.adv_cpc_dim, c.adv_cpc_dim, c.adv_cpc_layers, c.adv_cpc_kernel), slope,
      rng);
}

template <typename T>
Sequential<T>& Model<T>::group(std::string_view name) {
  return const_cast<Sequential<T>&>(static_cast<const Model<T>&>(*this).group(name));
}

template <typename T>
const Sequential<T>& Model<T>::group(std::string_view name) const {
  if (name == "enc_utt") return enc_utt_;
  if (name == "enc_spk") return enc_spk_;
  if (name == "enc_sty") return enc_sty_;
  if (name == "enc_cont") return enc_cont_;
  if (name == "dec") return dec_;
  if (name == "clf_spk") return clf_spk_;
  if (name == "adv_clf_spk") return adv_clf_spk_;
  if (name == "adv_cpc_head") return adv_cpc_head_;
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

template <typename T>
std::size_t Model<T>::parameter_count(std::string_view g) const {
  return group(g).parameter_count();
}

template <typename T>
void Model<T>::zero_grad() {
  for_each_param([](std::string_view, const std::string&, Param<T>& p) { p.zero_grad(); });
}

template <typename T>
Index Model<T>::content_frames(Index n) const {
  const Index d = config_.downsample;
  return (n + d - 1) / d;
}

template <typename T>
Matrix<T> Model<T>::utterance_encoder(const Matrix<T>& x) const {
  require_finite(x, "utterance encoder");
  return enc_utt_.forward(x);
}

template <typename T>
Matrix<T> Model<T>::speaker_encoder(const Matrix<T>& s) const {
  require_finite(s, "speaker encoder");
  return enc_spk_.forward(s);
}

template <typename T>
Matrix<T> Model<T>::style_encoder(const Matrix<T>& s) const {
  require_finite(s, "style encoder");
  return enc_sty_.forward(s);
}

template <typename T>
ContentPosterior<T> Model<T>::content_encoder(const Matrix<T>& x_aug) const {
  require_finite(x_aug, "content encoder");
  const Index n = content_frames(x_aug.rows());
  const Matrix<T> out = enc_cont_.forward(replicate_pad(x_aug, n * config_.downsample));
  return {out.leftCols(config_.content_dim), out.rightCols(config_.content_dim)};
}

template <typename T>
Matrix<T> Model<T>::speaker_logits(const Matrix<T>& s_spk) const {
  return clf_spk_.forward(s_spk);
}

template <typename T>
Matrix<T> Model<T>::speaker_classify(const Matrix<T>& s_spk) const {
  Matrix<T> l = speaker_logits(s_spk);
  Matrix<T> p = l.colwise() - l.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename T>
Matrix<T> Model<T>::adversarial_speaker_logits(const Matrix<T>& s_sty) const {
  return adv_clf_spk_.forward(s_sty);
}

template <typename T>
Matrix<T> Model<T>::adversarial_speaker_classify(const Matrix<T>& s_sty) const {
  Matrix<T> l = adversarial_speaker_logits(s_sty);
  Matrix<T> p = l.colwise() - l.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

namespace {

template <typename T>
constexpr T kNormFloor = T(1e-6);

}  // namespace

template <typename T>
Matrix<T> Model<T>::adversarial_cpc_head(const Matrix<T>& z, typename Sequential<T>::Cache* cache,
                                         Matrix<T>* raw) const {
  Matrix<T> u = adv_cpc_head_.forward(z, cache);
  const auto norms = u.rowwise().norm().array().max(kNormFloor<T>);
  Matrix<T> out = (u.array().colwise() * (static_cast<T>(config_.adv_cpc_scale) / norms)).matrix();
  if (raw != nullptr) *raw = std::move(u);
  return out;
}

template <typename T>
Matrix<T> Model<T>::adversarial_cpc_backward(const Matrix<T>& d_out, const typename Sequential<T>::Cache& cache,
                                             const Matrix<T>& raw, bool need_input_grad) {
  const auto norms = raw.rowwise().norm().array().max(kNormFloor<T>).eval();
  const Matrix<T> unit = (raw.array().colwise() / norms).matrix();
  const auto radial = (d_out.cwiseProduct(unit)).rowwise().sum().eval();
  Matrix<T> d_raw = d_out - (unit.array().colwise() * radial.array()).matrix();
  d_raw.array().colwise() *= static_cast<T>(config_.adv_cpc_scale) / norms;
  return adv_cpc_head_.backward(d_raw, cache, need_input_grad);
}

template <typename T>
Matrix<T> Model<T>::decode(const RowVector<T>& spk, const RowVector<T>& sty, const Matrix<T>& z,
                           Index out_frames) const {
  if (spk.cols() != config_.branch_dim || sty.cols() != config_.branch_dim ||
      z.cols() != config_.content_dim) {
    throw ConfigError("decoder inputs do not match the configured dimensions");
  }
  const Index n = z.rows();
  Matrix<T> in(n, config_.decoder_input_dim());
  in << tile_rows(spk, n), tile_rows(sty, n), z;
  Matrix<T> out = dec_.forward(in);
  if (out_frames > 0 && out_frames < out.rows()) {
    Matrix<T> cropped = out.topRows(out_frames);
    return cropped;
  }
  return out;
}

template <typename T>
ForwardTrace<T> Model<T>::forward(const Matrix<T>& x, const Matrix<T>& x_aug, const Matrix<T>& noise,
                                  bool with_adversaries) const {
  require_finite(x, "model");
  require_finite(x_aug, "content encoder");
  if (x.rows() != x_aug.rows()) throw ParameterError("raw and augmented inputs differ in length");
  const Index d = config_.downsample;
  const Index dz = config_.content_dim;

  ForwardTrace<T> tr;
  tr.frames = x.rows();
  tr.S = enc_utt_.forward(x, &tr.utt);
  tr.S_spk = enc_spk_.forward(tr.S, &tr.spk);
  tr.S_sty = enc_sty_.forward(tr.S, &tr.sty);

  const Index n = content_frames(x.rows());
  const Matrix<T> q = enc_cont_.forward(replicate_pad(x_aug, n * d), &tr.cont);
  tr.mu = q.leftCols(dz);
  tr.log_sigma = q.rightCols(dz);
  if (noise.size() == 0) {
    tr.noise = Matrix<T>::Zero(n, dz);
  } else {
    if (noise.rows() != n || noise.cols() != dz) throw ParameterError("noise shape does not match posterior");
    tr.noise = noise;
  }
  tr.Z = tr.mu + (tr.log_sigma.array().exp() * tr.noise.array()).matrix();

  tr.pooled_spk = global_average_pool(tr.S_spk);
  tr.pooled_sty = global_average_pool(tr.S_sty);
  tr.spk_logits = clf_spk_.forward(tr.S_spk, &tr.clf);
  if (with_adversaries) {
    tr.adv_logits = adv_clf_spk_.forward(tr.S_sty, &tr.adv_clf);
    tr.adv_cpc_out = adversarial_cpc_head(tr.Z, &tr.adv_cpc, &tr.adv_cpc_raw);
  }

  Matrix<T> in(n, config_.decoder_input_dim());
  in << tile_rows(tr.pooled_spk, n), tile_rows(tr.pooled_sty, n), tr.Z;
  const Matrix<T> full = dec_.forward(in, &tr.dec);
  tr.x_hat = full.topRows(tr.frames);
  return tr;
}

template <typename T>
void Model<T>::backward(const ForwardTrace<T>& tr, const TraceGradients<T>& g) {
  const Index n = tr.Z.rows();
  const Index t = tr.frames;
  const Index bd = config_.branch_dim;

  RowVector<T> d_pooled_spk = RowVector<T>::Zero(bd);
  RowVector<T> d_pooled_sty = RowVector<T>::Zero(bd);
  Matrix<T> dZ = Matrix<T>::Zero(n, config_.content_dim);

  if (g.d_x_hat.size() > 0) {
    Matrix<T> d_full = Matrix<T>::Zero(n * config_.downsample, config_.n_mels);
    d_full.topRows(t) = g.d_x_hat;
    const Matrix<T> d_in = dec_.backward(d_full, tr.dec, true);
    d_pooled_spk = d_in.leftCols(bd).colwise().sum();
    d_pooled_sty = d_in.middleCols(bd, bd).colwise().sum();
    dZ += d_in.rightCols(config_.content_dim);
  }
  if (g.d_adv_cpc.size() > 0) {
    dZ += GradientReversal::backward(adversarial_cpc_backward(g.d_adv_cpc, tr.adv_cpc, tr.adv_cpc_raw, true));
  }

  Matrix<T> d_mu = dZ;
  Matrix<T> d_ls = (dZ.array() * tr.noise.array() * tr.log_sigma.array().exp()).matrix();
  if (g.d_mu.size() > 0) d_mu += g.d_mu;
  if (g.d_log_sigma.size() > 0) d_ls += g.d_log_sigma;
  Matrix<T> d_q(n, 2 * config_.content_dim);
  d_q << d_mu, d_ls;
  enc_cont_.backward(d_q, tr.cont, false);

  Matrix<T> d_spk = tile_rows<T>(d_pooled_spk / static_cast<T>(t), t);
  if (g.d_spk_logits.size() > 0) d_spk += clf_spk_.backward(g.d_spk_logits, tr.clf, true);
  Matrix<T> d_sty = tile_rows<T>(d_pooled_sty / static_cast<T>(t), t);
  if (g.d_adv_logits.size() > 0) {
    d_sty += GradientReversal::backward(adv_clf_spk_.backward(g.d_adv_logits, tr.adv_clf, true));
  }

  Matrix<T> dS = enc_spk_.backward(d_spk, tr.spk, true);
  dS += enc_sty_.backward(d_sty, tr.sty, true);
  if (g.d_S.size() > 0) dS += g.d_S;
  enc_utt_.backward(dS, tr.utt, false);
}

template <typename T>
Matrix<T> sample_content(const ContentPosterior<T>& q, const Matrix<T>& noise) {
  if (noise.rows() != q.mu.rows() || noise.cols() != q.mu.cols()) {
    throw ParameterError("noise shape does not match posterior");
  }
  return q.mu + (q.log_sigma.array().exp() * noise.array()).matrix();
}

template class Model<float>;
template class Model<double>;
template Matrix<float> sample_content<float>(const ContentPosterior<float>&, const Matrix<float>&);
template Matrix<double> sample_content<double>(const ContentPosterior<double>&, const Matrix<double>&);

}  // namespace hdisen
