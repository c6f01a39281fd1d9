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

#include "hdisen/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <spdlog/spdlog.h>

#include "hdisen/checkpoint.hpp"
#include "hdisen/config.hpp"
#include "hdisen/eval.hpp"
#include "hdisen/features.hpp"
#include "hdisen/manifest.hpp"
#include "hdisen/synthdata.hpp"
#include "hdisen/training.hpp"

namespace hdisen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Exclusive advisory lock on <dir>/.hdisen.lock, released when the process
/// exits even if it crashes.
class RunDirLock {
 public:
  explicit RunDirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path path = dir / ".hdisen.lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error("lock", "cannot create lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error("lock", "run directory " + dir.string() + " is in use by another process");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::ftruncate(fd_, 0) == 0) (void)!::write(fd_, pid.data(), pid.size());
  }
  ~RunDirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

 private:
  int fd_ = -1;
};

void write_run_echo(const fs::path& dir, const RunConfig& c, const std::string& command,
                    const std::vector<std::string>& args, const json& options = json::object()) {
  std::ofstream(dir / "config.ini") << to_ini(c);
  json run = {{"command", command}, {"args", args}, {"seed", c.seed}, {"options", options}};
  std::ofstream(dir / "run.json") << run.dump(2) << '\n';
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.train.seed = seed;
  c.model.init_seed = seed;
}

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const CommonOptions& o, const json* ckpt_extra = nullptr) {
  RunConfig c;
  if (!o.config.empty()) {
    c = load_run_config(o.config);
  } else if (ckpt_extra != nullptr && ckpt_extra->contains("config")) {
    c = parse_run_config(ckpt_extra->at("config").get<std::string>());
  } else {
    c = default_run_config();
  }
  if (o.seed) apply_seed(c, *o.seed);
  return c;
}

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "global seed (default: HDISEN_SEED or 0)");
}

Manifest load_manifest(const std::string& path, const std::string& split) {
  Manifest m = read_manifest(path);
  if (!split.empty()) m = filter_split(m, split);
  if (m.empty()) {
    throw DataError("manifest " + path + (split.empty() ? "" : " (split " + split + ")") + " has no entries");
  }
  validate_manifest(m);
  return m;
}

FeatureSequence load_features_file(const fs::path& p, const RunConfig& c) {
  if (p.extension() == ".wav") return logmel(ingest(p, c.features.sample_rate), c.features);
  return read_features(p);
}

std::vector<RowVector<float>> embed_manifest(const Manifest& m, const Model<float>& model, Stream which) {
  std::vector<RowVector<float>> out;
  out.reserve(m.size());
  for (const auto& e : m) {
    if (e.feature_path.empty()) throw DataError("utterance '" + e.utterance_id + "' has no feature file; run prep first");
    out.push_back(embed_utterance(read_features(e.feature_path).values, model, which));
  }
  return out;
}

std::string label_of(const ManifestEntry& e, const std::string& field) {
  if (field == "speaker_id") return e.speaker_id;
  if (field == "style_id") return e.style_id;
  if (field == "session_id") return e.session_id;
  throw ParameterError("unknown label field '" + field + "' (expected speaker_id, style_id or session_id)");
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// prep -----------------------------------------------------------------------

struct PrepArgs {
  CommonOptions common;
  std::string manifest, out, rir_dir, split;
  int n_mels = 80, frame_rate = 80, rirs_per_utt = 4;
};

std::vector<Rir> load_rirs(const fs::path& dir, int sample_rate) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .wav impulse responses in " + dir.string());
  std::vector<Rir> rirs;
  for (const auto& f : files) {
    const Waveform w = ingest(f, sample_rate);
    rirs.push_back({w.samples, w.sample_rate, f.stem().string()});
  }
  return rirs;
}

int run_prep(const PrepArgs& a, const std::vector<std::string>& args) {
  RunConfig c = resolve_config(a.common);
  c.features.n_mels = a.n_mels;
  c.features.frame_rate = a.frame_rate;
  c.model.n_mels = a.n_mels;
  (void)c.features.hop_length();
  if (a.rirs_per_utt < 1) throw ParameterError("--rirs-per-utt must be >= 1");

  const Manifest in = load_manifest(a.manifest, a.split);
  const fs::path out_dir(a.out);
  RunDirLock lock(out_dir);
  fs::create_directories(out_dir / "features");
  std::vector<Rir> rirs;
  if (!a.rir_dir.empty()) rirs = load_rirs(a.rir_dir, c.features.sample_rate);

  Manifest out;
  for (const auto& e : in) {
    if (e.audio_path.empty()) {
      const FeatureSequence f = read_features(e.feature_path);
      if (f.bins() != c.features.n_mels) {
        throw DataError("feature file for '" + e.utterance_id + "' has " + std::to_string(f.bins()) + " bins");
      }
      out.push_back(e);
      continue;
    }
    const Waveform w = ingest(e.audio_path, c.features.sample_rate);
    auto emit = [&](const std::string& id, const Waveform& wave, const std::string& style) {
      ManifestEntry r = e;
      r.utterance_id = id;
      r.audio_path.clear();
      r.feature_path = out_dir / "features" / (id + ".dsf");
      r.style_id = style;
      r.duration_s = wave.duration_s();
      write_features(r.feature_path, logmel(wave, c.features));
      out.push_back(std::move(r));
    };
    if (rirs.empty()) {
      emit(e.utterance_id, w, e.style_id);
      continue;
    }
    std::vector<std::size_t> order(rirs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(c.seed, hash_string(e.utterance_id), 0x726972));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = std::min<std::size_t>(rirs.size(), static_cast<std::size_t>(a.rirs_per_utt));
    for (std::size_t k = 0; k < n; ++k) {
      const Rir& r = rirs[order[k]];
      emit(e.utterance_id + "__" + r.label, convolve_rir(w, r), r.label);
    }
  }
  write_manifest(out_dir / "manifest.jsonl", out);
  write_run_echo(out_dir, c, "prep", args,
                 {{"manifest", a.manifest}, {"rir_dir", a.rir_dir}, {"rirs_per_utt", a.rirs_per_utt}});
  spdlog::info("prep: wrote {} feature files to {}", out.size(), out_dir.string());
  return kExitOk;
}

// synth-data -----------------------------------------------------------------

struct SynthArgs {
  CommonOptions common;
  int speakers = 20, styles = 4, utts_per_cell = 10;
  double duration = 2.0;
  std::string out;
};

int run_synth(const SynthArgs& a, const std::vector<std::string>& args) {
  RunConfig c = resolve_config(a.common);
  SyntheticOptions o;
  o.n_speakers = a.speakers;
  o.n_styles = a.styles;
  o.utts_per_cell = a.utts_per_cell;
  o.duration_s = a.duration;
  o.seed = c.seed;
  o.n_mels = c.features.n_mels;
  o.frame_rate = c.features.frame_rate;
  if (o.n_speakers < 1 || o.n_styles < 1 || o.utts_per_cell < 1 || !(o.duration_s > 0.0)) {
    throw ParameterError("speakers, styles, utts-per-cell and duration must be positive");
  }
  const fs::path out_dir(a.out);
  RunDirLock lock(out_dir);
  const SyntheticCorpus corpus = generate_corpus(o);
  write_corpus(corpus, out_dir);
  write_run_echo(out_dir, c, "synth-data", args,
                 {{"speakers", a.speakers}, {"styles", a.styles}, {"utts_per_cell", a.utts_per_cell},
                  {"duration_s", a.duration}});
  spdlog::info("synth-data: {} utterances in {}", corpus.utterances.size(), out_dir.string());
  return kExitOk;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  CommonOptions common;
  std::string manifest, out, init, split = "train";
  std::vector<std::string> freeze;
  std::optional<int> iterations;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& args) {
  RunConfig c = resolve_config(a.common);
  if (a.iterations) c.train.iterations = *a.iterations;
  for (const auto& g : a.freeze) c.train.frozen_groups.push_back(g);

  Manifest m = read_manifest(a.manifest);
  const bool has_split = std::any_of(m.begin(), m.end(), [&](const auto& e) { return e.split == a.split; });
  if (has_split) m = filter_split(m, a.split);
  if (m.empty()) throw DataError("manifest " + a.manifest + " has no entries");
  validate_manifest(m);

  const std::vector<std::string> speakers = distinct_speakers(m);
  if (speakers.size() < 2) {
    throw DataError("training needs at least 2 speakers, found " + std::to_string(speakers.size()) +
                    ": the CPC loss takes its negatives from other utterances in the batch (batch_size >= 2) "
                    "and the speaker classifiers need at least 2 classes");
  }
  if (m.size() < static_cast<std::size_t>(c.train.batch_size)) {
    throw DataError("CPC batch constraint: batch_size " + std::to_string(c.train.batch_size) +
                    " exceeds the " + std::to_string(m.size()) + " training utterances");
  }
  c.model.n_speakers = static_cast<int>(speakers.size());
  c.validate();

  std::map<std::string, int> speaker_index;
  for (std::size_t i = 0; i < speakers.size(); ++i) speaker_index[speakers[i]] = static_cast<int>(i);
  std::vector<TrainingExample> data;
  for (const auto& e : m) {
    if (e.feature_path.empty()) throw DataError("utterance '" + e.utterance_id + "' has no feature file; run prep first");
    FeatureSequence f = read_features(e.feature_path);
    if (f.bins() != c.model.n_mels) {
      throw DataError("utterance '" + e.utterance_id + "' has " + std::to_string(f.bins()) + " bins, config expects " +
                      std::to_string(c.model.n_mels));
    }
    if (f.frames() <= c.train.tau_frames) {
      throw DataError("utterance '" + e.utterance_id + "' is shorter than the CPC lag of " +
                      std::to_string(c.train.tau_frames) + " frames");
    }
    data.push_back({e.utterance_id, std::move(f.values), speaker_index.at(e.speaker_id)});
  }

  const fs::path out_dir(a.out);
  RunDirLock lock(out_dir);
  TrainState<float> state;
  if (!a.init.empty()) {
    state = load_checkpoint(a.init);
    const ModelConfig& got = state.model.config();
    if (json(got) != json([&] {
          ModelConfig want = c.model;
          want.init_seed = got.init_seed;
          return want;
        }())) {
      throw ConfigError("checkpoint " + a.init + " does not match the configured model");
    }
    state.step = 0;
  } else {
    state = init_state(c.model, c.seed);
  }
  state.seed = c.seed;

  write_run_echo(out_dir, c, "train", args, {{"manifest", a.manifest}, {"init", a.init}});
  FitHooks hooks;
  hooks.out_dir = out_dir;
  hooks.checkpoint_extra = {{"config", to_ini(c)}, {"speakers", speakers}};
  hooks.on_iteration = [&](std::int64_t it, const LossBreakdown& b) {
    if (it == 1 || it % 100 == 0) {
      spdlog::info("iter {} total {:.4f} rec {:.4f} cpc {:.4f} kld {:.4f} adv_cpc {:.4f} ce {:.4f} adv_ce {:.4f}", it,
                   b.total, b.rec, b.cpc_s, b.kld, b.adv_cpc, b.ce_spk, b.adv_ce_sty);
    }
  };
  const FitResult r = fit(state, data, c.train, hooks);
  spdlog::info("train: {} main and {} adversarial updates, checkpoint {}", r.main_updates, r.adversarial_updates,
               (out_dir / "final.ckpt").string());
  return kExitOk;
}

// evaluation -----------------------------------------------------------------

struct EvalSvArgs {
  CommonOptions common;
  std::string ckpt, manifest, stream = "speaker", condition = "any", out, split;
  std::optional<std::size_t> n_target, n_nontarget;
};

int run_eval_sv(const EvalSvArgs& a, std::ostream& out) {
  json extra;
  const TrainState<float> state = load_checkpoint(a.ckpt, &extra);
  RunConfig c = resolve_config(a.common, &extra);
  const Manifest m = load_manifest(a.manifest, a.split);
  const Stream stream = parse_stream(a.stream);
  const Condition cond = parse_condition(a.condition);
  const std::size_t nt = a.n_target.value_or(c.eval.n_target);
  const std::size_t nn = a.n_nontarget.value_or(c.eval.n_nontarget);

  const TrialList trials = build_trials(m, cond, nt, nn, c.seed);
  validate_trials(m, trials);
  const double eer = compute_eer(score_trials(trials, embed_manifest(m, state.model, stream)));
  const json report = {{"eer", eer},
                       {"n_target", trials.targets()},
                       {"n_nontarget", trials.nontargets()},
                       {"condition", to_string(cond)},
                       {"stream", to_string(stream)},
                       {"seed", c.seed},
                       {"checkpoint", a.ckpt},
                       {"manifest", a.manifest},
                       {"config", to_ini(c)}};
  if (!a.out.empty()) write_json(a.out, report);
  out << "eer=" << eer << " condition=" << to_string(cond) << " stream=" << to_string(stream)
      << " n_target=" << trials.targets() << " n_nontarget=" << trials.nontargets() << '\n';
  return kExitOk;
}

struct EvalProbeArgs {
  CommonOptions common;
  std::string ckpt, manifest, label = "style_id", stream = "style", out, split;
};

int run_eval_probe(const EvalProbeArgs& a, std::ostream& out) {
  json extra;
  const TrainState<float> state = load_checkpoint(a.ckpt, &extra);
  RunConfig c = resolve_config(a.common, &extra);
  const Manifest m = load_manifest(a.manifest, a.split);
  const Stream stream = parse_stream(a.stream);

  std::map<std::string, int> classes;
  for (const auto& e : m) classes.emplace(label_of(e, a.label), 0);
  int k = 0;
  for (auto& [name, idx] : classes) idx = k++;
  if (classes.size() < 2) throw ParameterError("probe needs at least two distinct " + a.label + " values");

  const std::vector<RowVector<float>> emb = embed_manifest(m, state.model, stream);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.size(); ++i) by_class[classes.at(label_of(m[i], a.label))].push_back(i);
  Rng rng(derive_seed(c.seed, 0x73706c6974));
  std::vector<RowVector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::lround(c.eval.probe_train_fraction * idx.size()));
    n_train = std::clamp<std::size_t>(n_train, 1, std::max<std::size_t>(1, idx.size() - 1));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      auto& xs = j < n_train ? xtr : xte;
      auto& ys = j < n_train ? ytr : yte;
      xs.push_back(emb[idx[j]].cast<double>());
      ys.push_back(label);
    }
  }
  if (xte.empty()) throw DataError("no held-out utterances left for probe evaluation");

  ProbeOptions po;
  po.layers = c.eval.probe_layers;
  po.hidden = c.eval.probe_hidden;
  po.epochs = c.eval.probe_epochs;
  po.batch_size = c.eval.probe_batch_size;
  po.adam = c.train.adam;
  po.seed = c.seed;
  const Probe probe = train_probe(xtr, ytr, po);
  const double acc = probe_accuracy(probe, xte, yte);
  const json report = {{"accuracy", acc},
                       {"label", a.label},
                       {"stream", to_string(stream)},
                       {"n_classes", classes.size()},
                       {"n_train", xtr.size()},
                       {"n_heldout", xte.size()},
                       {"chance", 1.0 / static_cast<double>(classes.size())},
                       {"seed", c.seed},
                       {"checkpoint", a.ckpt},
                       {"config", to_ini(c)}};
  if (!a.out.empty()) write_json(a.out, report);
  out << "accuracy=" << acc << " label=" << a.label << " stream=" << to_string(stream) << '\n';
  return kExitOk;
}

struct ConvertArgs {
  CommonOptions common;
  std::string ckpt, src, tgt, mode = "both", out;
};

int run_convert(const ConvertArgs& a) {
  json extra;
  const TrainState<float> state = load_checkpoint(a.ckpt, &extra);
  const RunConfig c = resolve_config(a.common, &extra);
  const FeatureSequence src = load_features_file(a.src, c);
  const FeatureSequence tgt = load_features_file(a.tgt, c);
  FeatureSequence y{convert(src.values, tgt.values, parse_conversion_mode(a.mode), state.model), src.frame_rate};
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_features(out, y);
  write_json(fs::path(a.out).concat(".json"),
             {{"source", a.src}, {"target", a.tgt}, {"mode", a.mode}, {"checkpoint", a.ckpt}, {"seed", c.seed},
              {"config", to_ini(c)}});
  return kExitOk;
}

struct ExportArgs {
  CommonOptions common;
  std::string ckpt, manifest, stream = "speaker", out, split;
};

int run_export(const ExportArgs& a) {
  json extra;
  const TrainState<float> state = load_checkpoint(a.ckpt, &extra);
  const RunConfig c = resolve_config(a.common, &extra);
  const Manifest m = load_manifest(a.manifest, a.split);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_embedding_table(out, export_embeddings(m, state.model, parse_stream(a.stream)));
  write_json(fs::path(a.out).concat(".json"),
             {{"manifest", a.manifest}, {"stream", a.stream}, {"checkpoint", a.ckpt}, {"seed", c.seed},
              {"config", to_ini(c)}});
  return kExitOk;
}

struct ProjectArgs {
  std::string in, out;
};

int run_project(const ProjectArgs& a) {
  const EmbeddingTable t = read_embedding_table(a.in);
  const MatrixD xy = project_2d(t.embeddings);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw DataError("cannot write " + a.out);
  f << "utterance_id,speaker_id,session_id,style_id,x,y\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    f << t.utterance_id[k] << ',' << t.speaker_id[k] << ',' << t.session_id[k] << ',' << t.style_id[k] << ','
      << xy(i, 0) << ',' << xy(i, 1) << '\n';
  }
  return kExitOk;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out;
}

int report_error(std::ostream& err, const std::string& kind, const std::string& msg, int code) {
  err << "error: kind=" << kind << " msg=\"" << one_line(msg) << "\"\n";
  return code;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical speaker, style and content disentanglement", "hdisen"};
  app.require_subcommand(1, 1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  PrepArgs prep;
  auto* prep_cmd = app.add_subcommand("prep", "extract log-mel features from audio");
  add_common(prep_cmd, prep.common);
  prep_cmd->add_option("--manifest", prep.manifest, "input manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  prep_cmd->add_option("--out", prep.out, "output directory")->required();
  prep_cmd->add_option("--n-mels", prep.n_mels, "mel bins");
  prep_cmd->add_option("--frame-rate", prep.frame_rate, "frames per second");
  prep_cmd->add_option("--rir-dir", prep.rir_dir, "directory of impulse responses (.wav)")->check(CLI::ExistingDirectory);
  prep_cmd->add_option("--rirs-per-utt", prep.rirs_per_utt, "reverberant copies per utterance");
  prep_cmd->add_option("--split", prep.split, "only process this split");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "generate a factorised synthetic corpus");
  add_common(synth_cmd, synth.common);
  synth_cmd->add_option("--speakers", synth.speakers, "number of speakers");
  synth_cmd->add_option("--styles", synth.styles, "number of styles");
  synth_cmd->add_option("--utts-per-cell", synth.utts_per_cell, "utterances per speaker and style");
  synth_cmd->add_option("--duration", synth.duration, "seconds per utterance");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train the disentanglement model");
  add_common(train_cmd, train.common);
  train_cmd->add_option("--manifest", train.manifest, "training manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "run directory")->required();
  train_cmd->add_option("--init", train.init, "initial checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--freeze", train.freeze, "parameter groups to keep fixed");
  train_cmd->add_option("--iterations", train.iterations, "override [train] iterations");
  train_cmd->add_option("--split", train.split, "split to train on when the manifest is tagged");

  EvalSvArgs sv;
  auto* sv_cmd = app.add_subcommand("eval-sv", "speaker verification EER on one embedding stream");
  add_common(sv_cmd, sv.common);
  sv_cmd->add_option("--ckpt", sv.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  sv_cmd->add_option("--manifest", sv.manifest, "evaluation manifest")->required()->check(CLI::ExistingFile);
  sv_cmd->add_option("--stream", sv.stream, "before_disen|speaker|style");
  sv_cmd->add_option("--condition", sv.condition, "WC|AC|WE|AE|any");
  sv_cmd->add_option("--split", sv.split, "restrict to one split");
  sv_cmd->add_option("--n-target", sv.n_target, "target trials");
  sv_cmd->add_option("--n-nontarget", sv.n_nontarget, "non-target trials");
  sv_cmd->add_option("--out", sv.out, "report JSON");

  EvalProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("eval-probe", "classifier probe accuracy on one embedding stream");
  add_common(probe_cmd, probe.common);
  probe_cmd->add_option("--ckpt", probe.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--manifest", probe.manifest, "evaluation manifest")->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--label", probe.label, "speaker_id|style_id|session_id");
  probe_cmd->add_option("--stream", probe.stream, "before_disen|speaker|style");
  probe_cmd->add_option("--split", probe.split, "restrict to one split");
  probe_cmd->add_option("--out", probe.out, "report JSON");

  ConvertArgs conv;
  auto* conv_cmd = app.add_subcommand("convert", "speaker and/or style conversion");
  add_common(conv_cmd, conv.common);
  conv_cmd->add_option("--ckpt", conv.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  conv_cmd->add_option("--src", conv.src, "source features (.dsf) or audio (.wav)")->required()->check(CLI::ExistingFile);
  conv_cmd->add_option("--tgt", conv.tgt, "target features (.dsf) or audio (.wav)")->required()->check(CLI::ExistingFile);
  conv_cmd->add_option("--mode", conv.mode, "speaker|style|both");
  conv_cmd->add_option("--out", conv.out, "output features (.dsf)")->required();

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-emb", "write pooled embeddings as CSV");
  add_common(exp_cmd, exp.common);
  exp_cmd->add_option("--ckpt", exp.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("--manifest", exp.manifest, "manifest")->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("--stream", exp.stream, "before_disen|speaker|style");
  exp_cmd->add_option("--split", exp.split, "restrict to one split");
  exp_cmd->add_option("--out", exp.out, "output CSV")->required();

  ProjectArgs proj;
  auto* proj_cmd = app.add_subcommand("project-2d", "principal-component projection of an embedding table");
  proj_cmd->add_option("--in", proj.in, "embedding CSV")->required()->check(CLI::ExistingFile);
  proj_cmd->add_option("--out", proj.out, "output CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* failing = &app;
    for (const CLI::App* s : app.get_subcommands()) failing = s;
    err << failing->help();
    return report_error(err, "usage", e.what(), kExitUsage);
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (*prep_cmd) return run_prep(prep, args);
    if (*synth_cmd) return run_synth(synth, args);
    if (*train_cmd) return run_train(train, args);
    if (*sv_cmd) return run_eval_sv(sv, out);
    if (*probe_cmd) return run_eval_probe(probe, out);
    if (*conv_cmd) return run_convert(conv);
    if (*exp_cmd) return run_export(exp);
    if (*proj_cmd) return run_project(proj);
  } catch (const Error& e) {
    const std::string k = e.kind();
    const bool validation = k == "data" || k == "ingest" || k == "config" || k == "parameter" || k == "empty_input";
    return report_error(err, k, e.what(), validation ? kExitData : kExitFailure);
  } catch (const std::exception& e) {
    return report_error(err, "internal", e.what(), kExitFailure);
  }
  return report_error(err, "usage", "no subcommand", kExitUsage);
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace hdisen
