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

#include "knowsel/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>

#include "json.hpp"
#include "knowsel/error.hpp"
#include "knowsel/knowledge.hpp"

namespace knowsel {

namespace {

std::string at_line(std::size_t lineno) { return "corpus line " + std::to_string(lineno) + ": "; }

std::string require_string(const nlohmann::json& rec, const char* key, std::size_t lineno) {
  auto it = rec.find(key);
  if (it == rec.end() || !it->is_string()) {
    throw ParseError(at_line(lineno) + "field '" + key + "' must be a string");
  }
  return it->get<std::string>();
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(at_line(lineno) + e.what());
    }
    if (!rec.is_object()) throw ParseError(at_line(lineno) + "record is not an object");
    DialogueExample ex;
    ex.id = require_string(rec, "id", lineno);
    ex.emotion = require_string(rec, "emotion", lineno);
    ex.response = require_string(rec, "response", lineno);
    auto ctx = rec.find("context");
    if (ctx == rec.end() || !ctx->is_array()) {
      throw ParseError(at_line(lineno) + "field 'context' must be a list of strings");
    }
    for (const auto& u : *ctx) {
      if (!u.is_string()) throw ParseError(at_line(lineno) + "context holds a non-string");
      ex.context.push_back(u.get<std::string>());
    }
    if (ex.context.empty()) throw ValidationError(at_line(lineno) + "empty context in '" + ex.id + "'");
    if (blank(ex.response)) throw ValidationError(at_line(lineno) + "empty response in '" + ex.id + "'");
    if (auto kn = rec.find("knowledge"); kn != rec.end() && !kn->is_null()) {
      ex.knowledge = bundle_from_json(*kn, ex.id, /*allow_extra_keys=*/false);
    }
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  return parse_corpus(in);
}

void save_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& ex : corpus) {
    nlohmann::ordered_json rec = nlohmann::ordered_json::object();
    rec["id"] = ex.id;
    rec["context"] = ex.context;
    rec["emotion"] = ex.emotion;
    rec["response"] = ex.response;
    if (ex.knowledge) rec["knowledge"] = bundle_to_json(*ex.knowledge);
    out << rec.dump() << '\n';
  }
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> emotions;
  auto count_text = [&](const std::string& text) {
    for (auto& t : tokenize(text)) ++counts[t];
  };
  for (const auto& ex : corpus) {
    for (const auto& u : ex.context) count_text(u);
    count_text(ex.response);
    if (ex.knowledge)
      for (const auto& list : ex.knowledge->inferences)
        for (const auto& s : list) count_text(s);
    emotions.push_back(ex.emotion);
  }
  std::vector<std::string> tokens;
  for (auto& [tok, n] : counts)
    if (n >= std::max<std::size_t>(min_freq, 1)) tokens.push_back(tok);
  return Vocabulary(std::move(tokens), std::move(emotions));
}

EncodedExample encode_example(const DialogueExample& example, const Vocabulary& vocab,
                              std::size_t max_src, std::size_t max_tgt) {
  if (max_src < 2 || max_tgt < 2) throw ContractError("encode_example: length caps must be >= 2");
  EncodedExample enc;
  enc.id = example.id;
  enc.emotion = vocab.emotion_index(example.emotion);

  std::vector<TokenId> body;
  for (std::size_t i = 0; i < example.context.size(); ++i) {
    if (i > 0) body.push_back(kSep);
    const auto ids = vocab.encode(example.context[i]);
    body.insert(body.end(), ids.begin(), ids.end());
  }
  const std::size_t keep = std::min(body.size(), max_src - 1);
  enc.context.reserve(keep + 1);
  enc.context.push_back(kCls);
  enc.context.insert(enc.context.end(), body.end() - static_cast<std::ptrdiff_t>(keep), body.end());

  const KnowledgeBundle empty;
  const KnowledgeBundle& bundle = example.knowledge ? *example.knowledge : empty;
  for (auto r : kRelations)
    enc.relations[index_of(r)] = build_relation_sequence(bundle, r, vocab, max_src);

  auto response = vocab.encode(example.response);
  if (response.size() > max_tgt - 2) response.resize(max_tgt - 2);
  enc.target.reserve(response.size() + 2);
  enc.target.push_back(kBos);
  enc.target.insert(enc.target.end(), response.begin(), response.end());
  enc.target.push_back(kEos);
  return enc;
}

Splits split(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.valid + ratios.test;
  if (std::abs(total - 1.0) > 1e-9 || ratios.train < 0 || ratios.valid < 0 || ratios.test < 0) {
    throw ContractError("split: ratios must be non-negative and sum to 1");
  }
  const std::size_t n = corpus.size();
  if (n < 3) throw ContractError("split: need at least 3 examples, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Fisher-Yates on a fixed engine so the permutation does not depend on the
  // standard library's distribution implementation.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n) + 1e-9));
  auto n_valid = static_cast<std::size_t>(std::floor(ratios.valid * static_cast<double>(n) + 1e-9));
  if (n_valid == 0 && ratios.valid > 0) n_valid = 1;
  if (n_train + n_valid > n) n_train = n - n_valid;
  std::size_t n_test = n - n_train - n_valid;
  if (n_test == 0 && ratios.test > 0 && n_train > 1) {
    --n_train;
    n_test = 1;
  }

  Splits out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = corpus[order[i]];
    if (i < n_train) {
      out.train.push_back(ex);
    } else if (i < n_train + n_valid) {
      out.valid.push_back(ex);
    } else {
      out.test.push_back(ex);
    }
  }
  return out;
}

std::vector<TokenId> PaddedIds::unpadded(std::size_t row) const {
  std::vector<TokenId> out;
  for (std::size_t c = 0; c < cols; ++c)
    if (!pad_mask[row * cols + c]) out.push_back(ids[row * cols + c]);
  return out;
}

namespace {

PaddedIds pad_rows(const std::vector<const std::vector<TokenId>*>& rows) {
  PaddedIds p;
  p.rows = rows.size();
  for (const auto* r : rows) p.cols = std::max(p.cols, r->size());
  p.ids.assign(p.rows * p.cols, kPad);
  p.pad_mask.assign(p.rows * p.cols, 1);
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t c = 0; c < rows[i]->size(); ++c) {
      p.ids[i * p.cols + c] = (*rows[i])[c];
      p.pad_mask[i * p.cols + c] = 0;
    }
  }
  return p;
}

}  // namespace

EncodedExample Batch::example(std::size_t row) const {
  EncodedExample ex;
  ex.id = ids.at(row);
  ex.context = context.unpadded(row);
  for (std::size_t r = 0; r < kNumRelations; ++r) ex.relations[r] = relations[r].unpadded(row);
  ex.target = target.unpadded(row);
  ex.emotion = emotions.at(row);
  return ex;
}

std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("make_batches: batch size must be positive");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    Batch b;
    std::vector<const std::vector<TokenId>*> ctx, tgt;
    std::array<std::vector<const std::vector<TokenId>*>, kNumRelations> rel;
    for (std::size_t i = start; i < end; ++i) {
      b.ids.push_back(examples[i].id);
      b.emotions.push_back(examples[i].emotion);
      ctx.push_back(&examples[i].context);
      tgt.push_back(&examples[i].target);
      for (std::size_t r = 0; r < kNumRelations; ++r) rel[r].push_back(&examples[i].relations[r]);
    }
    b.context = pad_rows(ctx);
    b.target = pad_rows(tgt);
    for (std::size_t r = 0; r < kNumRelations; ++r) b.relations[r] = pad_rows(rel[r]);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace knowsel
