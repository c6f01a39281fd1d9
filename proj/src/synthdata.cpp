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

#include "hdisen/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace hdisen {

namespace fs = std::filesystem;

namespace {

// Smooth random spectral shape with the given RMS.
RowVector<double> smooth_shape(int n_bins, double rms, Rng& rng) {
  std::uniform_real_distribution<double> freq(0.5, 3.0), phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  RowVector<double> v = RowVector<double>::Zero(n_bins);
  for (int c = 0; c < 4; ++c) {
    const double f = freq(rng), p = phase(rng), a = amp(rng);
    for (int j = 0; j < n_bins; ++j) {
      v(j) += a * std::cos(2.0 * std::numbers::pi * f * j / n_bins + p);
    }
  }
  v.array() -= v.mean();
  const double norm = std::sqrt(v.squaredNorm() / n_bins);
  return norm > 0.0 ? RowVector<double>(v * (rms / norm)) : v;
}

double centred_position(int j, int n_bins) {
  return n_bins > 1 ? static_cast<double>(j) / (n_bins - 1) - 0.5 : 0.0;
}

}  // namespace

std::string SyntheticCorpus::speaker_id(int k) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%03d", k);
  return buf;
}

std::string SyntheticCorpus::style_id(int j) const { return "sty" + std::to_string(j); }

std::string SyntheticCorpus::session_id(int k, int s) const {
  return speaker_id(k) + "_ses" + std::to_string(s);
}

Manifest SyntheticCorpus::manifest() const {
  Manifest m;
  m.reserve(utterances.size());
  for (const auto& u : utterances) {
    ManifestEntry e;
    e.utterance_id = u.utterance_id;
    e.speaker_id = speaker_id(u.factors.speaker);
    e.session_id = session_id(u.factors.speaker, u.factors.session);
    e.style_id = style_id(u.factors.style);
    e.duration_s = static_cast<double>(u.features.frames()) / u.features.frame_rate;
    e.split = u.split;
    m.push_back(std::move(e));
  }
  return m;
}

SyntheticCorpus generate_corpus(const SyntheticOptions& opts) {
  if (opts.n_speakers < 2) {
    throw ParameterError("synthetic corpus needs at least 2 speakers (EER is undefined with one)");
  }
  if (opts.n_styles < 1 || opts.utts_per_cell < 1 || opts.sessions_per_speaker < 1 ||
      opts.content_dims < 1 || opts.n_mels < 1 || opts.frame_rate < 1) {
    throw ParameterError("synthetic corpus counts must all be >= 1");
  }
  const auto n_frames = static_cast<Eigen::Index>(std::floor(opts.duration_s * opts.frame_rate));
  if (n_frames < 1) throw ParameterError("duration too short for a single frame");

  const int F = opts.n_mels;
  SyntheticCorpus corpus;
  corpus.options = opts;
  FactorTables& tab = corpus.tables;

  Rng table_rng(derive_seed(opts.seed, 0x7461626c));
  RowVector<double> base = smooth_shape(F, 1.0, table_rng);
  for (int j = 0; j < F; ++j) base(j) += -2.0 - 2.0 * centred_position(j, F);
  tab.base = base.cast<float>();

  tab.speaker.resize(opts.n_speakers, F);
  for (int k = 0; k < opts.n_speakers; ++k) {
    tab.speaker.row(k) = smooth_shape(F, opts.speaker_scale, table_rng).cast<float>();
  }

  // Styles: evenly spread tilts plus a milder smooth shape with no tilt of its
  // own, so spectral_tilt of a style pattern is exactly its tilt.
  RowVector<double> ramp(F);
  for (int j = 0; j < F; ++j) ramp(j) = centred_position(j, F);
  tab.style.resize(opts.n_styles, F);
  tab.tilt.resize(static_cast<std::size_t>(opts.n_styles));
  for (int s = 0; s < opts.n_styles; ++s) {
    const double tilt = opts.n_styles > 1
                            ? opts.style_scale * 3.0 * (static_cast<double>(s) / (opts.n_styles - 1) - 0.5)
                            : 0.0;
    tab.tilt[static_cast<std::size_t>(s)] = tilt;
    RowVector<double> shape = smooth_shape(F, 0.5 * opts.style_scale, table_rng);
    shape -= (shape.dot(ramp) / ramp.squaredNorm()) * ramp;
    shape += tilt * ramp;
    tab.style.row(s) = shape.cast<float>();
  }

  const int n_sessions = opts.sessions_per_speaker;
  tab.session.resize(static_cast<Eigen::Index>(opts.n_speakers) * n_sessions, F);
  for (Eigen::Index r = 0; r < tab.session.rows(); ++r) {
    tab.session.row(r) = smooth_shape(F, opts.session_scale, table_rng).cast<float>();
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixD basis(opts.content_dims, F);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = gauss(table_rng);
  basis *= opts.content_scale / std::sqrt(static_cast<double>(opts.content_dims));
  tab.content_basis = basis.cast<float>();

  const int n_unseen_spk = static_cast<int>(std::floor(opts.heldout_speaker_fraction * opts.n_speakers));
  const int first_unseen_spk = opts.n_speakers - n_unseen_spk;
  const bool reserve = opts.reserve_style && opts.n_styles >= 2;
  const int unseen_style = reserve ? opts.n_styles - 1 : -1;
  const int n_heldout_utts = static_cast<int>(std::lround(opts.heldout_utt_fraction * opts.utts_per_cell));

  const double lift = std::sqrt(3.0);  // unit-variance uniform half-width
  for (int k = 0; k < opts.n_speakers; ++k) {
    for (int s = 0; s < opts.n_styles; ++s) {
      for (int u = 0; u < opts.utts_per_cell; ++u) {
        SyntheticUtterance utt;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%s_u%03d", corpus.speaker_id(k).c_str(),
                      corpus.style_id(s).c_str(), u);
        utt.utterance_id = buf;
        utt.factors.speaker = k;
        utt.factors.style = s;
        utt.factors.session = u % n_sessions;
        if (k >= first_unseen_spk) {
          utt.split = kSplitUnseenSpeaker;
        } else if (s == unseen_style) {
          utt.split = kSplitUnseenStyle;
        } else if (u < n_heldout_utts) {
          utt.split = kSplitTest;
        } else {
          utt.split = kSplitTrain;
        }

        Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(k) + 1,
                            static_cast<std::uint64_t>(s) + 1, static_cast<std::uint64_t>(u) + 1));
        std::uniform_real_distribution<double> drive(-lift, lift);
        MatrixD noise(n_frames + 2, opts.content_dims);
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = drive(rng);
        MatrixD content(n_frames, opts.content_dims);
        for (Eigen::Index t = 0; t < n_frames; ++t) {
          content.row(t) = (noise.row(t) + noise.row(t + 1) + noise.row(t + 2)) / lift;
        }

        const RowVector<double> constant =
            tab.base.cast<double>() + tab.speaker.row(k).cast<double>() +
            tab.style.row(s).cast<double>() +
            tab.session.row(static_cast<Eigen::Index>(k) * n_sessions + utt.factors.session).cast<double>();
        MatrixD x = content * basis;
        x.rowwise() += constant;

        utt.factors.content = content.cast<float>();
        utt.features.frame_rate = opts.frame_rate;
        utt.features.values = x.cast<float>();
        corpus.utterances.push_back(std::move(utt));
      }
    }
  }
  return corpus;
}

SyntheticCorpus generate_corpus(int n_speakers, int n_styles, int utts_per_cell, double duration_s,
                                std::uint64_t seed) {
  SyntheticOptions opts;
  opts.n_speakers = n_speakers;
  opts.n_styles = n_styles;
  opts.utts_per_cell = utts_per_cell;
  opts.duration_s = duration_s;
  opts.seed = seed;
  return generate_corpus(opts);
}

fs::path write_corpus(const SyntheticCorpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "features");
  Manifest m = corpus.manifest();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i].feature_path = dir / "features" / (m[i].utterance_id + ".dsf");
    write_features(m[i].feature_path, corpus.utterances[i].features);
  }
  const fs::path manifest_path = dir / "manifest.jsonl";
  write_manifest(manifest_path, m);
  return manifest_path;
}

Rir generate_rir(double rt60_s, std::size_t length, std::uint64_t seed, int sample_rate) {
  if (!(rt60_s > 0.0)) throw ParameterError("rt60 must be positive");
  if (sample_rate <= 0) throw ParameterError("sample rate must be positive");
  const double decay_samples = rt60_s * sample_rate;
  if (length < 1 || static_cast<double>(length) < std::ceil(decay_samples) + 1.0) {
    throw ParameterError("RIR length " + std::to_string(length) + " cannot represent rt60 of " +
                         std::to_string(decay_samples) + " samples");
  }
  Rng rng(derive_seed(seed, 0x726972));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Rir r;
  r.sample_rate = sample_rate;
  r.label = "synthetic_rt60_" + std::to_string(static_cast<int>(std::lround(rt60_s * 1000))) + "ms";
  r.taps.resize(length);
  r.taps[0] = 1.0f;
  for (std::size_t n = 1; n < length; ++n) {
    // Amplitude falls by 10^-3 (energy by 60 dB) over decay_samples.
    const double env = std::pow(10.0, -3.0 * static_cast<double>(n) / decay_samples);
    const double g = std::clamp(gauss(rng), -1.9, 1.9);
    r.taps[n] = static_cast<float>(0.5 * g * env);
  }
  return r;
}

double spectral_tilt(const MatrixF& x) {
  const auto n_bins = static_cast<int>(x.cols());
  if (x.rows() < 1 || n_bins < 2) throw ParameterError("spectral_tilt needs at least 1 frame and 2 bins");
  const RowVector<double> mean = x.cast<double>().colwise().mean();
  double num = 0.0, den = 0.0;
  for (int j = 0; j < n_bins; ++j) {
    const double u = centred_position(j, n_bins);
    num += u * mean(j);
    den += u * u;
  }
  return num / den;
}

double content_correlation(const MatrixF& a, const MatrixF& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() < 2) {
    throw ParameterError("content_correlation needs equally shaped inputs with >= 2 frames");
  }
  MatrixD da = a.cast<double>(), db = b.cast<double>();
  da.rowwise() -= da.colwise().mean();
  db.rowwise() -= db.colwise().mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  return denom > 0.0 ? (da.array() * db.array()).sum() / denom : 0.0;
}

}  // namespace hdisen
