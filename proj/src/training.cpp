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

#include "hdisen/training.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "hdisen/checkpoint.hpp"
#include "hdisen/features.hpp"

namespace hdisen {

using Eigen::Index;

void TrainOptions::validate() const {
  weights.validate();
  if (tau_frames < 1) throw ConfigError("tau_frames must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 so CPC has negatives");
  if (crop_frames <= tau_frames) throw ConfigError("crop_frames must exceed tau_frames");
  if (iterations < 0 || adversarial_updates < 0) throw ConfigError("iteration counts must be >= 0");
  if (!(vtlp_min > 0.0) || vtlp_max < vtlp_min) throw ConfigError("invalid VTLP range");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& g : frozen_groups) {
    if (!is_main_group(g)) throw ConfigError("cannot freeze unknown or adversarial group '" + g + "'");
  }
}

template <typename T>
template <typename U>
TrainingBatch<U> TrainingBatch<T>::cast() const {
  TrainingBatch<U> out;
  out.labels = labels;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.raw.push_back(raw[i].template cast<U>());
    out.augmented.push_back(augmented[i].template cast<U>());
    out.noise.push_back(noise[i].template cast<U>());
  }
  return out;
}

template TrainingBatch<double> TrainingBatch<float>::cast<double>() const;
template TrainingBatch<float> TrainingBatch<float>::cast<float>() const;

TrainingBatch<float> sample_batch(const std::vector<TrainingExample>& data, const ModelConfig& model,
                                  const TrainOptions& opts, std::int64_t iteration, int substep) {
  if (data.size() < 2) throw DataError("training needs at least 2 utterances for CPC negatives");
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(opts.batch_size), data.size());
  Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(substep),
                      0x6261746368));

  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(b);

  Index crop = opts.crop_frames;
  for (std::size_t i : idx) crop = std::min(crop, data[i].features.rows());
  if (crop <= opts.tau_frames) {
    throw DataError("utterances of " + std::to_string(crop) + " frames are too short for a CPC lag of " +
                    std::to_string(opts.tau_frames));
  }

  TrainingBatch<float> batch;
  const Index n_content = (crop + model.downsample - 1) / model.downsample;
  for (std::size_t i : idx) {
    const TrainingExample& ex = data[i];
    Rng utt_rng(derive_seed(opts.seed, hash_string(ex.utterance_id), static_cast<std::uint64_t>(iteration),
                            static_cast<std::uint64_t>(substep)));
    std::uniform_int_distribution<Index> offset(0, ex.features.rows() - crop);
    std::uniform_real_distribution<double> warp(opts.vtlp_min, opts.vtlp_max);
    std::normal_distribution<double> gauss(0.0, 1.0);

    MatrixF raw = ex.features.middleRows(offset(rng), crop);
    const double alpha = warp(utt_rng);
    MatrixF aug = instance_normalize(vtlp(raw, alpha), opts.in_eps);
    MatrixF noise(n_content, model.content_dim);
    for (Index k = 0; k < noise.size(); ++k) noise.data()[k] = static_cast<float>(gauss(utt_rng));

    batch.raw.push_back(std::move(raw));
    batch.augmented.push_back(std::move(aug));
    batch.noise.push_back(std::move(noise));
    batch.labels.push_back(ex.speaker);
  }
  return batch;
}

template <typename T>
LossBreakdown compute_main_gradients(Model<T>& model, const TrainingBatch<T>& batch, const LossWeights& w,
                                     int tau_frames) {
  const std::size_t n = batch.size();
  if (n < 2) throw ParameterError("main objective needs a batch of at least 2 utterances");
  model.zero_grad();
  const T inv_b = T(1) / static_cast<T>(n);

  std::vector<ForwardTrace<T>> traces;
  traces.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    traces.push_back(model.forward(batch.raw[b], batch.augmented[b], batch.noise[b], true));
  }

  LossTerms terms;
  std::vector<TraceGradients<T>> grads(n);
  double rec = 0.0, kld = 0.0, ce = 0.0, adv_ce = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const ForwardTrace<T>& tr = traces[b];
    TraceGradients<T>& g = grads[b];
    rec += xsigmoid_loss(tr.x_hat, batch.raw[b], &g.d_x_hat);
    g.d_x_hat *= inv_b;
    kld += kld_loss(tr.mu, tr.log_sigma, &g.d_mu, &g.d_log_sigma);
    g.d_mu *= static_cast<T>(w.beta) * inv_b;
    g.d_log_sigma *= static_cast<T>(w.beta) * inv_b;
    ce += cross_entropy_with_logits(tr.spk_logits, batch.labels[b], &g.d_spk_logits);
    g.d_spk_logits *= inv_b;
    adv_ce += cross_entropy_with_logits(tr.adv_logits, batch.labels[b], &g.d_adv_logits);
    g.d_adv_logits *= inv_b;
  }
  terms.rec = rec / static_cast<double>(n);
  terms.kld = kld / static_cast<double>(n);
  terms.ce_spk = ce / static_cast<double>(n);
  terms.adv_ce_sty = adv_ce / static_cast<double>(n);

  std::vector<Matrix<T>> s_frames, a_frames, d_s, d_a;
  for (const auto& tr : traces) {
    s_frames.push_back(tr.S);
    a_frames.push_back(tr.adv_cpc_out);
  }
  terms.cpc_s = cpc_loss(s_frames, tau_frames, &d_s);
  const int lag_z = model.content_lag(tau_frames);
  if (lag_z >= 1 && a_frames[0].rows() > lag_z) {
    terms.adv_cpc = cpc_loss(a_frames, lag_z, &d_a);
  } else {
    spdlog::warn("content sequence of {} frames is not longer than the adversarial CPC lag {}; term skipped",
                 a_frames[0].rows(), lag_z);
    terms.adv_cpc = 0.0;
  }
  for (std::size_t b = 0; b < n; ++b) {
    grads[b].d_S = d_s[b] * static_cast<T>(w.lambda_s);
    if (!d_a.empty()) grads[b].d_adv_cpc = d_a[b] * static_cast<T>(w.lambda_z);
  }

  const LossBreakdown out = total_loss(terms, w);
  if (!out.finite()) return out;
  for (std::size_t b = 0; b < n; ++b) model.backward(traces[b], grads[b]);
  return out;
}

template <typename T>
double compute_adversarial_gradients(Model<T>& model, const TrainingBatch<T>& batch, int tau_frames) {
  const std::size_t n = batch.size();
  if (n < 2) throw ParameterError("adversarial objective needs a batch of at least 2 utterances");
  model.zero_grad();
  Sequential<T>& clf = model.group("adv_clf_spk");
  const T inv_b = T(1) / static_cast<T>(n);

  // Encoder outputs are computed without caches: nothing flows back into them.
  std::vector<typename Sequential<T>::Cache> clf_cache(n), head_cache(n);
  std::vector<Matrix<T>> logits(n), heads(n), raws(n);
  for (std::size_t b = 0; b < n; ++b) {
    const Matrix<T> s_sty = model.style_encoder(model.utterance_encoder(batch.raw[b]));
    const Matrix<T> z = sample_content(model.content_encoder(batch.augmented[b]), batch.noise[b]);
    logits[b] = clf.forward(s_sty, &clf_cache[b]);
    heads[b] = model.adversarial_cpc_head(z, &head_cache[b], &raws[b]);
  }

  double ce = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    Matrix<T> d;
    ce += cross_entropy_with_logits(logits[b], batch.labels[b], &d);
    clf.backward(d * inv_b, clf_cache[b], false);
  }
  ce /= static_cast<double>(n);

  double cpc = 0.0;
  const int lag_z = model.content_lag(tau_frames);
  if (lag_z >= 1 && heads[0].rows() > lag_z) {
    std::vector<Matrix<T>> d_heads;
    cpc = cpc_loss(heads, lag_z, &d_heads);
    for (std::size_t b = 0; b < n; ++b) model.adversarial_cpc_backward(d_heads[b], head_cache[b], raws[b], false);
  } else {
    spdlog::warn("content sequence of {} frames is not longer than the adversarial CPC lag {}; term skipped",
                 heads[0].rows(), lag_z);
  }
  return ce + cpc;
}

namespace {

template <typename T>
void apply_updates(TrainState<T>& state, const AdamOptions& adam, bool main_update,
                   const std::vector<std::string>& frozen) {
  const std::int64_t step = main_update ? state.main_updates : state.adversarial_updates;
  state.model.for_each_param([&](std::string_view group, const std::string& name, Param<T>& p) {
    if (main_update != is_main_group(group)) return;
    if (std::find(frozen.begin(), frozen.end(), group) != frozen.end()) return;
    adam_update(p, state.moments[std::string(group) + "/" + name], adam, step);
  });
}

template <typename T>
bool gradients_finite(Model<T>& model) {
  bool ok = true;
  model.for_each_param([&](std::string_view, const std::string&, const Param<T>& p) {
    ok = ok && all_finite(p.grad);
  });
  return ok;
}

}  // namespace

template <typename T>
LossBreakdown main_step(TrainState<T>& state, const TrainingBatch<T>& batch, const TrainOptions& opts) {
  const LossBreakdown b = compute_main_gradients(state.model, batch, opts.weights, opts.tau_frames);
  if (const std::string bad = b.first_non_finite(); !bad.empty()) {
    throw NumericError("non-finite loss term '" + bad + "' at step " + std::to_string(state.step));
  }
  if (!gradients_finite(state.model)) {
    throw NumericError("non-finite gradient at step " + std::to_string(state.step));
  }
  ++state.main_updates;
  apply_updates(state, opts.adam, true, opts.frozen_groups);
  ++state.step;
  return b;
}

template <typename T>
double adversarial_step(TrainState<T>& state, const TrainingBatch<T>& batch, const TrainOptions& opts) {
  const double loss = compute_adversarial_gradients(state.model, batch, opts.tau_frames);
  if (!std::isfinite(loss) || !gradients_finite(state.model)) {
    throw NumericError("non-finite adversarial loss at step " + std::to_string(state.step));
  }
  ++state.adversarial_updates;
  apply_updates(state, opts.adam, false, {});
  return loss;
}

TrainState<float> init_state(const ModelConfig& config, std::uint64_t seed) {
  TrainState<float> s;
  ModelConfig c = config;
  c.init_seed = seed;
  s.model = Model<float>(c);
  s.seed = seed;
  return s;
}

std::string loss_csv_header() { return "iteration,rec,cpc_s,kld,adv_cpc,ce_spk,adv_ce_sty,total"; }

std::string loss_csv_row(std::int64_t iteration, const LossBreakdown& b) {
  std::ostringstream os;
  os << std::setprecision(9) << iteration << ',' << b.rec << ',' << b.cpc_s << ',' << b.kld << ','
     << b.adv_cpc << ',' << b.ce_spk << ',' << b.adv_ce_sty << ',' << b.total;
  return os.str();
}

FitResult fit(TrainState<float>& state, const std::vector<TrainingExample>& data, const TrainOptions& opts,
              const FitHooks& hooks) {
  opts.validate();
  namespace fs = std::filesystem;
  std::ofstream csv;
  if (!hooks.out_dir.empty()) {
    fs::create_directories(hooks.out_dir);
    const fs::path csv_path = hooks.out_dir / "loss.csv";
    const bool append = state.step > 0 && fs::exists(csv_path);
    csv.open(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!append) csv << loss_csv_header() << '\n';
  }

  FitResult result;
  int consecutive_failures = 0;
  LossBreakdown last_good;
  const auto started = std::chrono::steady_clock::now();
  while (state.step < opts.iterations) {
    const std::int64_t it = state.step;
    LossBreakdown b;
    try {
      b = main_step(state, sample_batch(data, state.model.config(), opts, it, 0), opts);
      ++result.main_updates;
      if (hooks.after_update) hooks.after_update(state, true);
      for (int j = 1; j <= opts.adversarial_updates; ++j) {
        adversarial_step(state, sample_batch(data, state.model.config(), opts, it, j), opts);
        ++result.adversarial_updates;
        if (hooks.after_update) hooks.after_update(state, false);
      }
      consecutive_failures = 0;
    } catch (const NumericError& e) {
      spdlog::warn("iteration {}: {}", it, e.what());
      if (++consecutive_failures >= 2) {
        if (!hooks.out_dir.empty()) {
          nlohmann::json dump = {{"iteration", it},
                                 {"error", e.what()},
                                 {"last_finite_losses", loss_csv_row(it, last_good)},
                                 {"main_updates", state.main_updates},
                                 {"adversarial_updates", state.adversarial_updates}};
          std::ofstream(hooks.out_dir / "divergence.json") << dump.dump(2) << '\n';
          save_checkpoint(hooks.out_dir / "diverged.ckpt", state, hooks.checkpoint_extra);
        }
        throw NumericError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
      }
      if (state.step == it) ++state.step;
      continue;
    }
    last_good = b;
    result.history.push_back(b);
    if (csv.is_open()) csv << loss_csv_row(it, b) << '\n';
    if (hooks.on_iteration) hooks.on_iteration(it, b);
    if ((it + 1) % 100 == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      spdlog::info("iter {:6d} total {:.4f} rec {:.4f} cpc {:.4f} kld {:.3f} adv_cpc {:.4f} ce {:.4f} "
                   "adv_ce {:.4f} ({:.1f}s)",
                   it + 1, b.total, b.rec, b.cpc_s, b.kld, b.adv_cpc, b.ce_spk, b.adv_ce_sty, secs);
    }
    if (!hooks.out_dir.empty() && opts.checkpoint_every > 0 && state.step % opts.checkpoint_every == 0) {
      csv.flush();
      save_checkpoint(hooks.out_dir / ("step" + std::to_string(state.step) + ".ckpt"), state,
                      hooks.checkpoint_extra);
    }
  }
  if (!hooks.out_dir.empty()) save_checkpoint(hooks.out_dir / "final.ckpt", state, hooks.checkpoint_extra);
  return result;
}

template LossBreakdown compute_main_gradients<float>(Model<float>&, const TrainingBatch<float>&,
                                                     const LossWeights&, int);
template LossBreakdown compute_main_gradients<double>(Model<double>&, const TrainingBatch<double>&,
                                                      const LossWeights&, int);
template double compute_adversarial_gradients<float>(Model<float>&, const TrainingBatch<float>&, int);
template double compute_adversarial_gradients<double>(Model<double>&, const TrainingBatch<double>&, int);
template LossBreakdown main_step<float>(TrainState<float>&, const TrainingBatch<float>&, const TrainOptions&);
template LossBreakdown main_step<double>(TrainState<double>&, const TrainingBatch<double>&, const TrainOptions&);
template double adversarial_step<float>(TrainState<float>&, const TrainingBatch<float>&, const TrainOptions&);
template double adversarial_step<double>(TrainState<double>&, const TrainingBatch<double>&, const TrainOptions&);

}  // namespace hdisen
