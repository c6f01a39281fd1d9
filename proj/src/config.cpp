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

#include "hdisen/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace hdisen {

namespace pt = boost::property_tree;

namespace {

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("cannot parse value '" + text + "' for key " + key);
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// One binding per config key: how to read it into a RunConfig and how to
// print it back.
struct Binding {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename V, typename Access>
Binding number(Access access) {
  return {[access](RunConfig& c, const std::string& key, const std::string& text) {
            access(c) = parse_number<V>(key, text);
          },
          [access](const RunConfig& c) {
            const V v = access(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<V>) {
              return format_double(v);
            } else {
              return std::to_string(v);
            }
          }};
}

using Section = std::vector<std::pair<std::string, Binding>>;

const std::vector<std::pair<std::string, Section>>& schema() {
  static const std::vector<std::pair<std::string, Section>> s = {
      {"features",
       {
           {"sample_rate", number<int>([](RunConfig& c) -> int& { return c.features.sample_rate; })},
           {"n_mels", number<int>([](RunConfig& c) -> int& { return c.features.n_mels; })},
           {"frame_rate", number<int>([](RunConfig& c) -> int& { return c.features.frame_rate; })},
           {"window_ms", number<double>([](RunConfig& c) -> double& { return c.features.window_ms; })},
           {"n_fft", number<int>([](RunConfig& c) -> int& { return c.features.n_fft; })},
           {"f_min", number<double>([](RunConfig& c) -> double& { return c.features.f_min; })},
           {"f_max", number<double>([](RunConfig& c) -> double& { return c.features.f_max; })},
           {"power_floor", number<double>([](RunConfig& c) -> double& { return c.features.power_floor; })},
       }},
      {"model",
       {
           {"kernel", number<int>([](RunConfig& c) -> int& { return c.model.kernel; })},
           {"utt_layers", number<int>([](RunConfig& c) -> int& { return c.model.utt_layers; })},
           {"utt_hidden", number<int>([](RunConfig& c) -> int& { return c.model.utt_hidden; })},
           {"utt_dim", number<int>([](RunConfig& c) -> int& { return c.model.utt_dim; })},
           {"content_hidden", number<int>([](RunConfig& c) -> int& { return c.model.content_hidden; })},
           {"downsample", number<int>([](RunConfig& c) -> int& { return c.model.downsample; })},
           {"content_dim", number<int>([](RunConfig& c) -> int& { return c.model.content_dim; })},
           {"branch_layers", number<int>([](RunConfig& c) -> int& { return c.model.branch_layers; })},
           {"branch_hidden", number<int>([](RunConfig& c) -> int& { return c.model.branch_hidden; })},
           {"branch_dim", number<int>([](RunConfig& c) -> int& { return c.model.branch_dim; })},
           {"adv_clf_layers", number<int>([](RunConfig& c) -> int& { return c.model.adv_clf_layers; })},
           {"adv_clf_hidden", number<int>([](RunConfig& c) -> int& { return c.model.adv_clf_hidden; })},
           {"adv_cpc_layers", number<int>([](RunConfig& c) -> int& { return c.model.adv_cpc_layers; })},
           {"adv_cpc_kernel", number<int>([](RunConfig& c) -> int& { return c.model.adv_cpc_kernel; })},
           {"adv_cpc_dim", number<int>([](RunConfig& c) -> int& { return c.model.adv_cpc_dim; })},
           {"adv_cpc_scale", number<double>([](RunConfig& c) -> double& { return c.model.adv_cpc_scale; })},
           {"decoder_hidden", number<int>([](RunConfig& c) -> int& { return c.model.decoder_hidden; })},
           {"leaky_slope", number<double>([](RunConfig& c) -> double& { return c.model.leaky_slope; })},
       }},
      {"loss",
       {
           {"tau_frames", number<int>([](RunConfig& c) -> int& { return c.train.tau_frames; })},
           {"lambda_s", number<double>([](RunConfig& c) -> double& { return c.train.weights.lambda_s; })},
           {"lambda_z", number<double>([](RunConfig& c) -> double& { return c.train.weights.lambda_z; })},
           {"beta", number<double>([](RunConfig& c) -> double& { return c.train.weights.beta; })},
       }},
      {"train",
       {
           {"seed", number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.seed; })},
           {"lr", number<double>([](RunConfig& c) -> double& { return c.train.adam.lr; })},
           {"beta1", number<double>([](RunConfig& c) -> double& { return c.train.adam.beta1; })},
           {"beta2", number<double>([](RunConfig& c) -> double& { return c.train.adam.beta2; })},
           {"adam_eps", number<double>([](RunConfig& c) -> double& { return c.train.adam.eps; })},
           {"batch_size", number<int>([](RunConfig& c) -> int& { return c.train.batch_size; })},
           {"crop_frames", number<int>([](RunConfig& c) -> int& { return c.train.crop_frames; })},
           {"iterations", number<int>([](RunConfig& c) -> int& { return c.train.iterations; })},
           {"adversarial_updates", number<int>([](RunConfig& c) -> int& { return c.train.adversarial_updates; })},
           {"vtlp_min", number<double>([](RunConfig& c) -> double& { return c.train.vtlp_min; })},
           {"vtlp_max", number<double>([](RunConfig& c) -> double& { return c.train.vtlp_max; })},
           {"in_eps", number<double>([](RunConfig& c) -> double& { return c.train.in_eps; })},
           {"checkpoint_every", number<int>([](RunConfig& c) -> int& { return c.train.checkpoint_every; })},
           {"frozen_groups",
            {[](RunConfig& c, const std::string&, const std::string& v) { c.train.frozen_groups = split_list(v); },
             [](const RunConfig& c) { return join_list(c.train.frozen_groups); }}},
       }},
      {"eval",
       {
           {"n_target", number<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.n_target; })},
           {"n_nontarget", number<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.n_nontarget; })},
           {"probe_layers", number<int>([](RunConfig& c) -> int& { return c.eval.probe_layers; })},
           {"probe_hidden", number<int>([](RunConfig& c) -> int& { return c.eval.probe_hidden; })},
           {"probe_epochs", number<int>([](RunConfig& c) -> int& { return c.eval.probe_epochs; })},
           {"probe_batch_size", number<int>([](RunConfig& c) -> int& { return c.eval.probe_batch_size; })},
           {"probe_train_fraction",
            number<double>([](RunConfig& c) -> double& { return c.eval.probe_train_fraction; })},
       }},
  };
  return s;
}

}  // namespace

void RunConfig::validate() const {
  if (features.n_mels != model.n_mels) throw ConfigError("features.n_mels and model.n_mels differ");
  (void)features.hop_length();
  model.validate();
  train.validate();
  if (eval.probe_layers < 1 || eval.probe_hidden < 1 || eval.probe_epochs < 0 || eval.probe_batch_size < 1) {
    throw ConfigError("invalid probe settings in [eval]");
  }
  if (!(eval.probe_train_fraction > 0.0 && eval.probe_train_fraction < 1.0)) {
    throw ConfigError("eval.probe_train_fraction must lie in (0, 1)");
  }
}

std::uint64_t default_seed() {
  const char* env = std::getenv("HDISEN_SEED");
  if (env == nullptr || *env == '\0') return 0;
  return parse_number<std::uint64_t>("HDISEN_SEED", env);
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.n_speakers = 1;
  c.seed = default_seed();
  return c;
}

RunConfig parse_run_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig c = default_run_config();
  for (const auto& [section_name, section] : tree) {
    if (section.empty() && !section.data().empty()) {
      throw ConfigError("config key '" + section_name + "' outside any section");
    }
    const auto s = std::find_if(schema().begin(), schema().end(),
                                [&](const auto& entry) { return entry.first == section_name; });
    if (s == schema().end()) throw ConfigError("unknown config section [" + section_name + "]");
    for (const auto& [key, value] : section) {
      const auto b = std::find_if(s->second.begin(), s->second.end(), [&](const auto& entry) { return entry.first == key; });
      if (b == s->second.end()) throw ConfigError("unknown config key " + section_name + "." + key);
      b->second.set(c, section_name + "." + key, value.data());
    }
  }
  c.model.n_mels = c.features.n_mels;
  c.model.init_seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream out;
  for (const auto& [name, section] : schema()) {
    out << '[' << name << "]\n";
    for (const auto& [key, binding] : section) out << key << " = " << binding.get(c) << '\n';
    out << '\n';
  }
  return out.str();
}

}  // namespace hdisen
