/*
 * Copyright 2026 The knowsel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>

#include "knowsel/model.hpp"
#include "knowsel/vocab.hpp"

namespace knowsel {

// Binary layout, all integers little-endian:
//   "DCKS" | u32 version | u32 n + n bytes UTF-8 JSON metadata
//   | u32 tensor count | per tensor: u32 n + name, u32 rank, u64 dims[rank],
//     f64 values[prod(dims)]
// Tensors follow the model's declaration order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedModel {
  std::unique_ptr<Model> model;
  Vocabulary vocab;
};

void save_checkpoint(std::ostream& out, const Model& model, const Vocabulary& vocab);
void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab);

LoadedModel load_checkpoint(std::istream& in);
LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Overwrites `target`'s parameters with `source`'s (same config required).
void copy_parameters(const Model& source, Model& target);

}  // namespace knowsel
