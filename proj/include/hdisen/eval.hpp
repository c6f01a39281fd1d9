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
#include <string_view>
#include <vector>

#include "hdisen/common.hpp"
#include "hdisen/manifest.hpp"
#include "hdisen/model.hpp"
#include "hdisen/nn.hpp"

namespace hdisen {

enum class Stream { kBeforeDisen, kSpeaker, kStyle };
Stream parse_stream(std::string_view s);
std::string to_string(Stream s);

/// Pooled embedding of one utterance from the chosen frame stream. Uses no
/// sampling, so repeated calls agree bit for bit.
RowVector<float> embed_utterance(const MatrixF& x, const Model<float>& model, Stream which);

/// a.b / (|a| |b|); throws ParameterError for a zero vector.
double cosine_score(const RowVector<float>& a, const RowVector<float>& b);
double cosine_score(const RowVector<double>& a, const RowVector<double>& b);

enum class Condition { kUnconstrained, kWithinSession, kAcrossSession, kWithinStyle, kAcrossStyle };
Condition parse_condition(std::string_view s);  // WC | AC | WE | AE | any
std::string to_string(Condition c);

struct Trial {
  std::size_t a = 0;  // manifest indices
  std::size_t b = 0;
  bool target = false;
};

struct TrialList {
  Condition condition = Condition::kUnconstrained;
  std::vector<Trial> trials;
  std::size_t targets() const;
  std::size_t nontargets() const;
};

/// Same-speaker pairs obey the condition (WC same session, AC different
/// session, WE same style, AE different style); different-speaker pairs are
/// unconstrained. At most n_target / n_nontarget pairs are drawn without
/// replacement. Throws DataError listing the speakers that cannot form a
/// target pair when none exist and n_target > 0.
TrialList build_trials(const Manifest& m, Condition condition, std::size_t n_target, std::size_t n_nontarget,
                       std::uint64_t seed);
/// Re-checks every trial against the manifest metadata.
void validate_trials(const Manifest& m, const TrialList& trials);

struct ScoredTrials {
  std::vector<double> scores;
  std::vector<bool> target;
};

ScoredTrials score_trials(const TrialList& trials, const std::vector<RowVector<float>>& embeddings);

/// Threshold sweep over all distinct scores: FAR(t) = share of non-targets
/// scoring >= t, FRR(t) = share of targets scoring < t. Returns the crossing,
/// interpolated linearly between the two operating points around it.
double compute_eer(const ScoredTrials& s);

struct ProbeOptions {
  int layers = 3;
  int hidden = 128;
  int epochs = 300;
  int batch_size = 32;
  AdamOptions adam;
  std::uint64_t seed = 0;
};

/// Fully connected classifier on standardised embeddings.
class Probe {
 public:
  Probe() = default;
  Probe(Sequential<double> net, RowVector<double> mean, RowVector<double> inv_std, int n_classes);
  std::vector<int> predict(const std::vector<RowVector<double>>& x) const;
  int n_classes() const { return n_classes_; }

 private:
  Sequential<double> net_;
  RowVector<double> mean_, inv_std_;
  int n_classes_ = 0;
};

Probe train_probe(const std::vector<RowVector<double>>& embeddings, const std::vector<int>& labels,
                  const ProbeOptions& opts = {});
double probe_accuracy(const Probe& probe, const std::vector<RowVector<double>>& embeddings,
                      const std::vector<int>& labels);

enum class ConversionMode { kSpeaker, kStyle, kBoth };
ConversionMode parse_conversion_mode(std::string_view s);

/// Mean-decoding of `x` with its own pooled speaker and style embeddings.
MatrixF reconstruct(const MatrixF& x, const Model<float>& model);
/// Decodes the source's content with the speaker and/or style embedding
/// swapped for the target's.
MatrixF convert(const MatrixF& source, const MatrixF& target, ConversionMode mode, const Model<float>& model);

struct EmbeddingTable {
  std::vector<std::string> utterance_id, speaker_id, session_id, style_id;
  MatrixD embeddings;  // one row per utterance
};

/// Reads each entry's feature file and embeds it.
EmbeddingTable export_embeddings(const Manifest& m, const Model<float>& model, Stream which);
void write_embedding_table(const std::filesystem::path& path, const EmbeddingTable& t);
EmbeddingTable read_embedding_table(const std::filesystem::path& path);

/// Projection onto the top two principal components, with each axis signed
/// so its largest-magnitude loading is positive.
MatrixD project_2d(const MatrixD& x);

}  // namespace hdisen
