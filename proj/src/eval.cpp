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

#include "hdisen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hdisen/features.hpp"
#include "hdisen/losses.hpp"

namespace hdisen {

using Eigen::Index;
namespace fs = std::filesystem;

Stream parse_stream(std::string_view s) {
  if (s == "before_disen" || s == "utterance") return Stream::kBeforeDisen;
  if (s == "speaker") return Stream::kSpeaker;
  if (s == "style") return Stream::kStyle;
  throw ParameterError("unknown embedding stream '" + std::string(s) +
                       "' (expected before_disen, speaker or style)");
}

std::string to_string(Stream s) {
  switch (s) {
    case Stream::kBeforeDisen: return "before_disen";
    case Stream::kSpeaker: return "speaker";
    case Stream::kStyle: return "style";
  }
  return "?";
}

RowVector<float> embed_utterance(const MatrixF& x, const Model<float>& model, Stream which) {
  const MatrixF s = model.utterance_encoder(x);
  switch (which) {
    case Stream::kBeforeDisen: return global_average_pool(s);
    case Stream::kSpeaker: return global_average_pool(model.speaker_encoder(s));
    case Stream::kStyle: return global_average_pool(model.style_encoder(s));
  }
  throw ParameterError("unknown embedding stream");
}

template <typename T>
static double cosine_impl(const RowVector<T>& a, const RowVector<T>& b) {
  if (a.cols() != b.cols()) throw ParameterError("cosine score of vectors with different dimensions");
  const RowVector<double> da = a.template cast<double>(), db = b.template cast<double>();
  const double na = da.norm(), nb = db.norm();
  if (na == 0.0 || nb == 0.0) throw ParameterError("cosine score undefined for a zero vector");
  return std::clamp(da.dot(db) / (na * nb), -1.0, 1.0);
}

double cosine_score(const RowVector<float>& a, const RowVector<float>& b) { return cosine_impl(a, b); }
double cosine_score(const RowVector<double>& a, const RowVector<double>& b) { return cosine_impl(a, b); }

Condition parse_condition(std::string_view s) {
  if (s == "WC") return Condition::kWithinSession;
  if (s == "AC") return Condition::kAcrossSession;
  if (s == "WE") return Condition::kWithinStyle;
  if (s == "AE") return Condition::kAcrossStyle;
  if (s == "any" || s == "unconstrained") return Condition::kUnconstrained;
  throw ParameterError("unknown trial condition '" + std::string(s) + "' (expected WC, AC, WE, AE or any)");
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::kWithinSession: return "WC";
    case Condition::kAcrossSession: return "AC";
    case Condition::kWithinStyle: return "WE";
    case Condition::kAcrossStyle: return "AE";
    case Condition::kUnconstrained: return "any";
  }
  return "?";
}

std::size_t TrialList::targets() const {
  return static_cast<std::size_t>(std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.target; }));
}

std::size_t TrialList::nontargets() const { return trials.size() - targets(); }

namespace {

bool condition_holds(const ManifestEntry& a, const ManifestEntry& b, Condition c) {
  switch (c) {
    case Condition::kWithinSession: return a.session_id == b.session_id;
    case Condition::kAcrossSession: return a.session_id != b.session_id;
    case Condition::kWithinStyle: return a.style_id == b.style_id;
    case Condition::kAcrossStyle: return a.style_id != b.style_id;
    case Condition::kUnconstrained: return true;
  }
  return false;
}

}  // namespace

TrialList build_trials(const Manifest& m, Condition condition, std::size_t n_target, std::size_t n_nontarget,
                       std::uint64_t seed) {
  TrialList out;
  out.condition = condition;
  if (m.size() < 2) throw DataError("trial list needs at least two utterances");
  Rng rng(derive_seed(seed, 0x747269616c73));

  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < m.size(); ++i) by_speaker[m[i].speaker_id].push_back(i);

  std::vector<Trial> targets;
  std::vector<std::string> offending;
  for (const auto& [spk, idx] : by_speaker) {
    const std::size_t before = targets.size();
    for (std::size_t x = 0; x < idx.size(); ++x) {
      for (std::size_t y = x + 1; y < idx.size(); ++y) {
        if (condition_holds(m[idx[x]], m[idx[y]], condition)) targets.push_back({idx[x], idx[y], true});
      }
    }
    if (targets.size() == before) offending.push_back(spk);
  }
  if (targets.empty() && n_target > 0) {
    std::string list;
    for (const auto& s : offending) list += (list.empty() ? "" : ", ") + s;
    throw DataError("condition " + to_string(condition) + " is unsatisfiable; no target pair for speakers: " + list);
  }
  std::shuffle(targets.begin(), targets.end(), rng);
  if (targets.size() > n_target) targets.resize(n_target);

  std::size_t same_pairs = 0;
  for (const auto& [spk, idx] : by_speaker) same_pairs += idx.size() * (idx.size() - 1) / 2;
  const std::size_t cross_pairs = m.size() * (m.size() - 1) / 2 - same_pairs;

  std::vector<Trial> nontargets;
  if (n_nontarget >= cross_pairs) {
    for (std::size_t x = 0; x < m.size(); ++x) {
      for (std::size_t y = x + 1; y < m.size(); ++y) {
        if (m[x].speaker_id != m[y].speaker_id) nontargets.push_back({x, y, false});
      }
    }
    std::shuffle(nontargets.begin(), nontargets.end(), rng);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    while (nontargets.size() < n_nontarget) {
      std::size_t x = pick(rng), y = pick(rng);
      if (x == y || m[x].speaker_id == m[y].speaker_id) continue;
      if (x > y) std::swap(x, y);
      if (used.insert({x, y}).second) nontargets.push_back({x, y, false});
    }
  }

  out.trials = std::move(targets);
  out.trials.insert(out.trials.end(), nontargets.begin(), nontargets.end());
  return out;
}

void validate_trials(const Manifest& m, const TrialList& t) {
  for (const Trial& tr : t.trials) {
    if (tr.a >= m.size() || tr.b >= m.size()) throw DataError("trial refers to a missing utterance");
    if (tr.a == tr.b) throw DataError("self-pair in trial list: " + m[tr.a].utterance_id);
    const bool same = m[tr.a].speaker_id == m[tr.b].speaker_id;
    if (same != tr.target) {
      throw DataError("trial " + m[tr.a].utterance_id + " / " + m[tr.b].utterance_id + " has a wrong target flag");
    }
    if (tr.target && !condition_holds(m[tr.a], m[tr.b], t.condition)) {
      throw DataError("target trial " + m[tr.a].utterance_id + " / " + m[tr.b].utterance_id +
                      " violates condition " + to_string(t.condition));
    }
  }
}

ScoredTrials score_trials(const TrialList& trials, const std::vector<RowVector<float>>& emb) {
  ScoredTrials s;
  s.scores.reserve(trials.trials.size());
  for (const Trial& t : trials.trials) {
    if (t.a >= emb.size() || t.b >= emb.size()) throw ParameterError("trial index outside embedding list");
    s.scores.push_back(cosine_score(emb[t.a], emb[t.b]));
    s.target.push_back(t.target);
  }
  return s;
}

double compute_eer(const ScoredTrials& s) {
  if (s.scores.size() != s.target.size()) throw ParameterError("score and label counts differ");
  const std::size_t n_target = static_cast<std::size_t>(std::count(s.target.begin(), s.target.end(), true));
  const std::size_t n_nontarget = s.target.size() - n_target;
  if (n_target == 0 || n_nontarget == 0) {
    throw ParameterError("EER needs at least one target and one non-target trial");
  }
  for (double v : s.scores) {
    if (!std::isfinite(v)) throw ParameterError("non-finite trial score");
  }

  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  // Walk thresholds upward over distinct scores, then +inf.
  std::size_t targets_below = 0, nontargets_below = 0;
  double prev_far = 0.0, prev_d = 0.0;
  std::size_t i = 0;
  bool first = true;
  while (true) {
    const double far = static_cast<double>(n_nontarget - nontargets_below) / static_cast<double>(n_nontarget);
    const double frr = static_cast<double>(targets_below) / static_cast<double>(n_target);
    const double d = frr - far;
    if (d >= 0.0) {
      if (d == 0.0 || first) return far;
      const double lambda = prev_d / (prev_d - d);
      return prev_far + lambda * (far - prev_far);
    }
    prev_far = far;
    prev_d = d;
    first = false;
    if (i >= order.size()) break;
    const double v = s.scores[order[i]];
    while (i < order.size() && s.scores[order[i]] == v) {
      (s.target[order[i]] ? targets_below : nontargets_below) += 1;
      ++i;
    }
  }
  return 1.0;  // unreachable: at +inf FRR = 1 and FAR = 0
}

Probe::Probe(Sequential<double> net, RowVector<double> mean, RowVector<double> inv_std, int n_classes)
    : net_(std::move(net)), mean_(std::move(mean)), inv_std_(std::move(inv_std)), n_classes_(n_classes) {}

std::vector<int> Probe::predict(const std::vector<RowVector<double>>& x) const {
  if (x.empty()) return {};
  MatrixD in(static_cast<Index>(x.size()), mean_.cols());
  for (std::size_t i = 0; i < x.size(); ++i) in.row(static_cast<Index>(i)) = (x[i] - mean_).cwiseProduct(inv_std_);
  const MatrixD logits = net_.forward(in);
  std::vector<int> out(x.size());
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

Probe train_probe(const std::vector<RowVector<double>>& emb, const std::vector<int>& labels,
                  const ProbeOptions& opts) {
  if (emb.size() != labels.size() || emb.empty()) throw ParameterError("probe needs one label per embedding");
  const std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) throw ParameterError("probe needs at least two classes");
  if (*classes.begin() < 0) throw ParameterError("probe labels must be non-negative");
  const int n_classes = *classes.rbegin() + 1;
  const Index dim = emb[0].cols();

  MatrixD x(static_cast<Index>(emb.size()), dim);
  for (std::size_t i = 0; i < emb.size(); ++i) x.row(static_cast<Index>(i)) = emb[i];
  const RowVector<double> mean = x.colwise().mean();
  const RowVector<double> sd = ((x.rowwise() - mean).array().square().colwise().mean()).sqrt();
  const RowVector<double> inv_std = sd.unaryExpr([](double v) { return v > 1e-12 ? 1.0 / v : 1.0; });
  x = (x.rowwise() - mean).array().rowwise() * inv_std.array();

  std::vector<LayerSpec> specs;
  int c = static_cast<int>(dim);
  for (int l = 0; l < opts.layers; ++l) {
    const bool last = l + 1 == opts.layers;
    specs.push_back({c, last ? n_classes : opts.hidden, 1, 1, false, !last});
    c = opts.hidden;
  }
  Rng rng(derive_seed(opts.seed, 0x70726f6265));
  Sequential<double> net(specs, 0.2, rng);
  std::map<std::string, AdamMoments<double>> moments;

  std::vector<std::size_t> order(emb.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  const auto bs = static_cast<std::size_t>(std::max(1, opts.batch_size));
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      MatrixD xb(static_cast<Index>(end - start), dim);
      for (std::size_t i = start; i < end; ++i) xb.row(static_cast<Index>(i - start)) = x.row(static_cast<Index>(order[i]));
      net.for_each_param([](const std::string&, Param<double>& p) { p.zero_grad(); });
      typename Sequential<double>::Cache cache;
      const MatrixD logits = net.forward(xb, &cache);
      MatrixD d = softmax_rows(logits);
      for (std::size_t i = start; i < end; ++i) d(static_cast<Index>(i - start), labels[order[i]]) -= 1.0;
      d /= static_cast<double>(end - start);
      net.backward(d, cache, false);
      ++step;
      net.for_each_param([&](const std::string& name, Param<double>& p) { adam_update(p, moments[name], opts.adam, step); });
    }
  }
  return Probe(std::move(net), mean, inv_std, n_classes);
}

double probe_accuracy(const Probe& probe, const std::vector<RowVector<double>>& emb, const std::vector<int>& labels) {
  if (emb.size() != labels.size() || emb.empty()) throw ParameterError("probe evaluation needs labelled embeddings");
  const std::vector<int> pred = probe.predict(emb);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ConversionMode parse_conversion_mode(std::string_view s) {
  if (s == "speaker") return ConversionMode::kSpeaker;
  if (s == "style") return ConversionMode::kStyle;
  if (s == "both") return ConversionMode::kBoth;
  throw ParameterError("unknown conversion mode '" + std::string(s) + "' (expected speaker, style or both)");
}

namespace {

struct Pooled {
  RowVector<float> spk, sty;
};

Pooled pooled_embeddings(const MatrixF& x, const Model<float>& model) {
  const MatrixF s = model.utterance_encoder(x);
  return {global_average_pool(model.speaker_encoder(s)), global_average_pool(model.style_encoder(s))};
}

void check_input(const MatrixF& x, const Model<float>& model, const char* what) {
  if (x.rows() < 1 || x.cols() != model.config().n_mels) {
    throw ParameterError(std::string(what) + " features must have " + std::to_string(model.config().n_mels) +
                         " bins and at least one frame");
  }
}

}  // namespace

MatrixF reconstruct(const MatrixF& x, const Model<float>& model) {
  check_input(x, model, "input");
  const Pooled p = pooled_embeddings(x, model);
  const ContentPosterior<float> q = model.content_encoder(instance_normalize(x));
  return model.decode(p.spk, p.sty, q.mu, x.rows());
}

MatrixF convert(const MatrixF& source, const MatrixF& target, ConversionMode mode, const Model<float>& model) {
  check_input(source, model, "source");
  check_input(target, model, "target");
  Pooled src = pooled_embeddings(source, model);
  const Pooled tgt = pooled_embeddings(target, model);
  if (mode == ConversionMode::kSpeaker || mode == ConversionMode::kBoth) src.spk = tgt.spk;
  if (mode == ConversionMode::kStyle || mode == ConversionMode::kBoth) src.sty = tgt.sty;
  const ContentPosterior<float> q = model.content_encoder(instance_normalize(source));
  return model.decode(src.spk, src.sty, q.mu, source.rows());
}

EmbeddingTable export_embeddings(const Manifest& m, const Model<float>& model, Stream which) {
  if (m.empty()) throw ParameterError("cannot export embeddings for an empty manifest");
  EmbeddingTable t;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const ManifestEntry& e = m[i];
    if (e.feature_path.empty()) throw DataError("utterance '" + e.utterance_id + "' has no feature file; run prep first");
    const RowVector<float> v = embed_utterance(read_features(e.feature_path).values, model, which);
    if (i == 0) t.embeddings.resize(static_cast<Index>(m.size()), v.cols());
    t.embeddings.row(static_cast<Index>(i)) = v.cast<double>();
    t.utterance_id.push_back(e.utterance_id);
    t.speaker_id.push_back(e.speaker_id);
    t.session_id.push_back(e.session_id);
    t.style_id.push_back(e.style_id);
  }
  return t;
}

void write_embedding_table(const fs::path& path, const EmbeddingTable& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding table " + path.string());
  out << "utterance_id,speaker_id,session_id,style_id";
  for (Index j = 0; j < t.embeddings.cols(); ++j) out << ",e" << j;
  out << '\n' << std::setprecision(17);
  for (Index i = 0; i < t.embeddings.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << t.utterance_id[k] << ',' << t.speaker_id[k] << ',' << t.session_id[k] << ',' << t.style_id[k];
    for (Index j = 0; j < t.embeddings.cols(); ++j) out << ',' << t.embeddings(i, j);
    out << '\n';
  }
}

EmbeddingTable read_embedding_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding table " + path.string());
  std::string line;
  std::getline(in, line);
  EmbeddingTable t;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw DataError("malformed embedding row in " + path.string());
    t.utterance_id.push_back(cells[0]);
    t.speaker_id.push_back(cells[1]);
    t.session_id.push_back(cells[2]);
    t.style_id.push_back(cells[3]);
    std::vector<double> v;
    for (std::size_t j = 4; j < cells.size(); ++j) v.push_back(std::stod(cells[j]));
    if (!rows.empty() && v.size() != rows.front().size()) throw DataError("ragged embedding table " + path.string());
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw DataError("embedding table " + path.string() + " is empty");
  t.embeddings.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.embeddings(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return t;
}

MatrixD project_2d(const MatrixD& x) {
  if (x.rows() < 1 || x.cols() < 1) throw ParameterError("cannot project an empty table");
  const MatrixD centred = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = (centred.transpose() * centred) / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Index d = x.cols();
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(d, 2);
  for (Index k = 0; k < std::min<Index>(2, d); ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    basis.col(k) = v;
  }
  return centred * basis;
}

}  // namespace hdisen
