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

#include "knowsel/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'K', 'S'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError("checkpoint: truncated file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_le<std::uint32_t>(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw ParseError("checkpoint: truncated string");
  return s;
}

nlohmann::ordered_json metadata(const Model& model, const Vocabulary& vocab) {
  nlohmann::ordered_json meta;
  meta["format"] = "knowsel-checkpoint";
  meta["config"] = model.config().to_json();
  auto& order = meta["relation_order"] = nlohmann::ordered_json::array();
  for (auto r : kRelations) order.push_back(std::string(relation_name(r)));
  meta["vocab"]["tokens"] = vocab.regular_tokens();
  meta["vocab"]["emotions"] = vocab.emotion_labels();
  return meta;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model, const Vocabulary& vocab) {
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_string(out, metadata(model, vocab).dump());
  const auto& params = model.parameters();
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_string(out, name);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_le<std::uint64_t>(out, d);
    for (double v : t.data()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  save_checkpoint(out, model, vocab);
}

LoadedModel load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("checkpoint: bad magic bytes");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_string(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: metadata: ") + e.what());
  }
  LoadedModel loaded;
  try {
    loaded.vocab = Vocabulary(meta.at("vocab").at("tokens").get<std::vector<std::string>>(),
                              meta.at("vocab").at("emotions").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: metadata: ") + e.what());
  }
  loaded.model = std::make_unique<Model>(ModelConfig::from_json(meta.at("config")), 0);
  auto& params = loaded.model->parameters();
  const auto count = read_le<std::uint32_t>(in);
  if (count != params.size()) {
    throw ParseError("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                     std::to_string(count));
  }
  for (const auto& [name, param] : params) {
    const auto stored = read_string(in);
    if (stored != name) throw ParseError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
    const auto rank = read_le<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_le<std::uint64_t>(in));
    if (shape != param.shape()) {
      throw ParseError("checkpoint: tensor '" + name + "' has shape " + shape_string(shape) +
                       ", expected " + shape_string(param.shape()));
    }
    Tensor target = param;
    for (auto& v : target.mutable_data()) {
      v = std::bit_cast<double>(read_le<std::uint64_t>(in));
      if (!std::isfinite(v)) throw ParseError("checkpoint: non-finite value in '" + name + "'");
    }
  }
  return loaded;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

void copy_parameters(const Model& source, Model& target) {
  const auto& src = source.parameters();
  const auto& dst = target.parameters();
  if (src.size() != dst.size()) throw DimensionError("copy_parameters: parameter lists differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
      throw DimensionError("copy_parameters: mismatch at " + src[i].first);
    }
    Tensor t = dst[i].second;
    const auto from = src[i].second.data();
    std::copy(from.begin(), from.end(), t.mutable_data().begin());
  }
}

}  // namespace knowsel
