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

#include "hdisen/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace hdisen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void put_matrix(std::ostream& os, const MatrixF& m) {
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

MatrixF get_matrix(std::istream& is) {
  const std::uint32_t rows = get_u32(is);
  const std::uint32_t cols = get_u32(is);
  MatrixF m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  return m;
}

std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState<float>& state, const json& extra) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    json header = {{"model", state.model.config()},
                   {"step", state.step},
                   {"main_updates", state.main_updates},
                   {"adversarial_updates", state.adversarial_updates},
                   {"seed", state.seed},
                   {"extra", extra.is_null() ? json::object() : extra}};
    const std::string text = header.dump();
    os.write("HDCK", 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));

    std::uint32_t count = 0;
    state.model.for_each_param([&](std::string_view, const std::string&, const Param<float>&) { ++count; });
    put_u32(os, count);
    state.model.for_each_param([&](std::string_view group, const std::string& name, const Param<float>& p) {
      const std::string key = std::string(group) + "/" + name;
      put_u32(os, static_cast<std::uint32_t>(key.size()));
      os.write(key.data(), static_cast<std::streamsize>(key.size()));
      put_matrix(os, p.value);
      auto it = state.moments.find(key);
      const bool has = it != state.moments.end() && it->second.m.size() == p.value.size();
      os.put(has ? 1 : 0);
      if (has) {
        put_matrix(os, it->second.m);
        put_matrix(os, it->second.v);
      }
    });
    if (!os) throw DataError("short write on checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

TrainState<float> load_checkpoint(const fs::path& path, json* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "HDCK", 4) != 0) throw DataError("not a checkpoint: " + path.string());
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t len = get_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const json header = json::parse(text);

  TrainState<float> state;
  state.model = Model<float>(header.at("model").get<ModelConfig>());
  state.step = header.at("step").get<std::int64_t>();
  state.main_updates = header.at("main_updates").get<std::int64_t>();
  state.adversarial_updates = header.at("adversarial_updates").get<std::int64_t>();
  state.seed = header.at("seed").get<std::uint64_t>();
  if (extra) *extra = header.value("extra", json::object());

  std::map<std::string, Param<float>*> params;
  state.model.for_each_param([&](std::string_view group, const std::string& name, Param<float>& p) {
    params[std::string(group) + "/" + name] = &p;
  });
  const std::uint32_t count = get_u32(is);
  if (count != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string key = get_string(is);
    auto it = params.find(key);
    if (it == params.end()) throw DataError("checkpoint tensor '" + key + "' is not part of the model");
    MatrixF value = get_matrix(is);
    if (value.rows() != it->second->value.rows() || value.cols() != it->second->value.cols()) {
      throw DataError("shape mismatch for checkpoint tensor '" + key + "'");
    }
    it->second->value = std::move(value);
    it->second->zero_grad();
    if (is.get() == 1) {
      AdamMoments<float>& m = state.moments[key];
      m.m = get_matrix(is);
      m.v = get_matrix(is);
    }
    if (!is) throw DataError("truncated checkpoint " + path.string());
  }
  return state;
}

}  // namespace hdisen
