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

#include <filesystem>

#include <json.hpp>

#include "hdisen/training.hpp"

namespace hdisen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: "HDCK", u32 version, u64 length + JSON header (model
/// config, counters and `extra`), then every parameter of every group with
/// its Adam moments as raw float32. Restores bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const TrainState<float>& state,
                     const nlohmann::json& extra = {});
TrainState<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace hdisen
