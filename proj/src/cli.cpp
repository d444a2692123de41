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

#include "knowsel/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "knowsel/checkpoint.hpp"
#include "knowsel/error.hpp"
#include "knowsel/metrics.hpp"

namespace knowsel {

namespace fs = std::filesystem;

SplitName parse_split(const std::string& name) {
  if (name == "train") return SplitName::kTrain;
  if (name == "valid") return SplitName::kValid;
  if (name == "test") return SplitName::kTest;
  if (name == "all") return SplitName::kAll;
  throw ConfigError("unknown split '" + name + "' (expected train, valid, test or all)");
}

namespace {

std::string split_name(SplitName s) {
  switch (s) {
    case SplitName::kTrain: return "train";
    case SplitName::kValid: return "valid";
    case SplitName::kTest: return "test";
    case SplitName::kAll: return "all";
  }
  return "?";
}

template <class T>
T get_as(const nlohmann::json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has an invalid value " + v.dump());
  }
}

using Setter = std::function<void(RunConfig&, const nlohmann::json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto path = [](fs::path RunConfig::*field) {
      return [field](RunConfig& c, const nlohmann::json& v, const std::string& k) {
        c.*field = get_as<std::string>(v, k);
      };
    };
    t["data.corpus"] = path(&RunConfig::corpus);
    t["data.knowledge"] = path(&RunConfig::knowledge);
    t["out"] = path(&RunConfig::out);
    t["checkpoint"] = path(&RunConfig::checkpoint);
    t["input"] = path(&RunConfig::input);
    t["data.min_freq"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.min_freq = get_as<std::size_t>(v, k);
    };
    t["data.missing_knowledge"] = [](RunConfig& c, const auto& v, const auto& k) {
      const auto s = get_as<std::string>(v, k);
      if (s == "strict") {
        c.missing = MissingKnowledge::kStrict;
      } else if (s == "empty") {
        c.missing = MissingKnowledge::kEmptyBundle;
      } else {
        throw ConfigError("config key '" + k + "' must be \"strict\" or \"empty\"");
      }
    };
    t["split"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.split = parse_split(get_as<std::string>(v, k));
    };
    t["split.train"] = [](RunConfig& c, const auto& v, const auto& k) { c.ratios.train = get_as<double>(v, k); };
    t["split.valid"] = [](RunConfig& c, const auto& v, const auto& k) { c.ratios.valid = get_as<double>(v, k); };
    t["split.test"] = [](RunConfig& c, const auto& v, const auto& k) { c.ratios.test = get_as<double>(v, k); };
    t["seed"] = [](RunConfig& c, const auto& v, const auto& k) { c.seed = get_as<std::uint64_t>(v, k); };
    t["data_fraction"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.data_fraction = get_as<double>(v, k);
    };
    auto model_size = [](std::size_t ModelConfig::*field) {
      return [field](RunConfig& c, const nlohmann::json& v, const std::string& k) {
        c.model.*field = get_as<std::size_t>(v, k);
      };
    };
    t["model.d_model"] = model_size(&ModelConfig::d_model);
    t["model.num_layers"] = model_size(&ModelConfig::num_layers);
    t["model.num_heads"] = model_size(&ModelConfig::num_heads);
    t["model.ffn_dim"] = model_size(&ModelConfig::ffn_dim);
    t["model.max_source"] = model_size(&ModelConfig::max_source);
    t["model.max_target"] = model_size(&ModelConfig::max_target);
    t["model.gamma"] = [](RunConfig& c, const auto& v, const auto& k) { c.model.gamma = get_as<double>(v, k); };
    t["model.ln_eps"] = [](RunConfig& c, const auto& v, const auto& k) { c.model.ln_eps = get_as<double>(v, k); };
    t["model.refine_norm"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.model.refine_norm = parse_refine_norm(get_as<std::string>(v, k));
    };
    t["model.emotion_input"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.model.emotion_input = parse_emotion_input(get_as<std::string>(v, k));
    };
    t["model.adaptive_selection"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.model.adaptive_selection = get_as<bool>(v, k);
    };
    t["model.share_encoders"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.model.share_encoders = get_as<bool>(v, k);
    };
    t["optim.lr"] = [](RunConfig& c, const auto& v, const auto& k) { c.train.adam.lr = get_as<double>(v, k); };
    t["optim.beta1"] = [](RunConfig& c, const auto& v, const auto& k) { c.train.adam.beta1 = get_as<double>(v, k); };
    t["optim.beta2"] = [](RunConfig& c, const auto& v, const auto& k) { c.train.adam.beta2 = get_as<double>(v, k); };
    t["optim.eps"] = [](RunConfig& c, const auto& v, const auto& k) { c.train.adam.eps = get_as<double>(v, k); };
    t["optim.max_grad_norm"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.train.adam.max_grad_norm = get_as<double>(v, k);
    };
    t["train.batch_size"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.train.batch_size = get_as<std::size_t>(v, k);
    };
    t["train.epochs"] = [](RunConfig& c, const auto& v, const auto& k) { c.train.epochs = get_as<std::size_t>(v, k); };
    t["train.max_steps"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.train.max_steps = get_as<std::size_t>(v, k);
    };
    t["train.patience"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.train.patience = get_as<std::size_t>(v, k);
    };
    t["train.shuffle"] = [](RunConfig& c, const auto& v, const auto& k) { c.train.shuffle = get_as<bool>(v, k); };
    t["generate.max_len"] = [](RunConfig& c, const auto& v, const auto& k) {
      c.max_generate = get_as<std::size_t>(v, k);
    };
    return t;
  }();
  return table;
}

// Owns <out>/.lock for the lifetime of a training run.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / kLockFile) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw ConfigError("output directory " + dir.string() + " is locked by another run (" +
                        path_.string() + ")");
    }
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

Vocabulary training_vocab(const PreparedData& data, std::size_t min_freq) {
  return Vocabulary(build_vocab(data.train, min_freq).regular_tokens(), data.emotion_labels);
}

std::vector<EncodedExample> encode_all(const Corpus& corpus, const Vocabulary& vocab,
                                       const ModelConfig& cfg) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) out.push_back(encode_example(ex, vocab, cfg.max_source, cfg.max_target));
  return out;
}

const Corpus& evaluation_split(const PreparedData& data, SplitName name, Corpus& storage) {
  if (name == SplitName::kAll) {
    storage = data.all();
    return storage;
  }
  return data.get(name);
}

void check_labels(const Corpus& corpus, const Vocabulary& vocab) {
  for (const auto& ex : corpus) {
    if (!std::binary_search(vocab.emotion_labels().begin(), vocab.emotion_labels().end(), ex.emotion)) {
      throw VocabMismatchError("checkpoint does not know emotion label '" + ex.emotion +
                               "' (example '" + ex.id + "')");
    }
  }
}

/// Generated ids up to EOS as word tokens; specials other than UNK are dropped.
Tokens hypothesis_tokens(std::span<const TokenId> ids, const Vocabulary& vocab) {
  Tokens out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id != kUnk && static_cast<std::size_t>(id) < kNumSpecialTokens) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

RunConfig::RunConfig() {
  train.adam.lr = 5e-5;
  train.batch_size = 16;
  train.epochs = 5;
  train.patience = 1;
}

void RunConfig::validate() const {
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
    throw ConfigError("data_fraction must be in (0, 1], got " + format_double(data_fraction));
  }
  if (!(model.gamma >= 0.0)) throw ConfigError("model.gamma must be >= 0");
  const double total = ratios.train + ratios.valid + ratios.test;
  if (ratios.train <= 0 || ratios.valid < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative, train > 0, and sum to 1");
  }
  if (!(train.adam.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (max_generate == 0) throw ConfigError("generate.max_len must be positive");
  if (min_freq == 0) throw ConfigError("data.min_freq must be positive");
  if (out.empty()) throw ConfigError("output directory must not be empty");
}

fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out / kCheckpointFile : checkpoint;
}

void apply_config(RunConfig& config, const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a JSON object of dotted keys");
  for (const auto& [key, value] : flat.items()) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(config, value, key);
  }
}

void load_config_file(RunConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  apply_config(config, j);
}

nlohmann::ordered_json to_flat_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["data.corpus"] = c.corpus.string();
  j["data.knowledge"] = c.knowledge.string();
  j["data.min_freq"] = c.min_freq;
  j["data.missing_knowledge"] = c.missing == MissingKnowledge::kStrict ? "strict" : "empty";
  j["split"] = split_name(c.split);
  j["split.train"] = c.ratios.train;
  j["split.valid"] = c.ratios.valid;
  j["split.test"] = c.ratios.test;
  j["seed"] = c.seed;
  j["data_fraction"] = c.data_fraction;
  j["out"] = c.out.string();
  const auto m = c.model.to_json();
  for (const auto& key : {"d_model", "num_layers", "num_heads", "ffn_dim", "max_source", "max_target",
                          "gamma", "ln_eps", "refine_norm", "emotion_input", "adaptive_selection",
                          "share_encoders"}) {
    j[std::string("model.") + key] = m.at(key);
  }
  j["optim.lr"] = c.train.adam.lr;
  j["optim.beta1"] = c.train.adam.beta1;
  j["optim.beta2"] = c.train.adam.beta2;
  j["optim.eps"] = c.train.adam.eps;
  j["optim.max_grad_norm"] = c.train.adam.max_grad_norm;
  j["train.batch_size"] = c.train.batch_size;
  j["train.epochs"] = c.train.epochs;
  j["train.max_steps"] = c.train.max_steps;
  j["train.patience"] = c.train.patience;
  j["train.shuffle"] = c.train.shuffle;
  j["generate.max_len"] = c.max_generate;
  return j;
}

void SelectionStats::write_winners_csv(std::ostream& out) const {
  out << "emotion,relation,winner_frequency\n";
  for (const auto& [emotion, freq] : winner_frequency) {
    for (auto r : kRelations) {
      if (freq[index_of(r)] > 0.0) {
        out << emotion << ',' << relation_name(r) << ',' << format_double(freq[index_of(r)]) << '\n';
      }
    }
  }
}

void SelectionStats::write_eliminations_csv(std::ostream& out) const {
  out << "iteration,relation,elimination_count\n";
  for (const auto& [iteration, counts] : eliminations) {
    for (auto r : kRelations) {
      if (counts[index_of(r)] > 0) {
        out << iteration << ',' << relation_name(r) << ',' << counts[index_of(r)] << '\n';
      }
    }
  }
}

SelectionStats selection_stats(const std::vector<std::string>& emotions,
                               const std::vector<WorkspaceTrace>& traces) {
  if (emotions.size() != traces.size()) throw ContractError("selection_stats: length mismatch");
  SelectionStats s;
  std::map<std::string, std::array<std::size_t, kNumRelations>> wins;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    auto& w = wins.try_emplace(emotions[i]).first->second;
    ++w[index_of(traces[i].winner)];
    ++s.examples_per_emotion[emotions[i]];
    for (const auto& e : traces[i].eliminations) {
      ++s.eliminations.try_emplace(e.iteration).first->second[index_of(e.relation)];
    }
  }
  for (const auto& [emotion, counts] : wins) {
    const double n = static_cast<double>(s.examples_per_emotion[emotion]);
    auto& f = s.winner_frequency[emotion];
    for (std::size_t r = 0; r < kNumRelations; ++r) f[r] = static_cast<double>(counts[r]) / n;
  }
  return s;
}

const Corpus& PreparedData::get(SplitName name) const {
  switch (name) {
    case SplitName::kTrain: return train;
    case SplitName::kValid: return valid;
    case SplitName::kTest: return test;
    case SplitName::kAll: break;
  }
  throw ContractError("PreparedData::get: use all() for the full corpus");
}

Corpus PreparedData::all() const {
  Corpus out = train;
  out.insert(out.end(), valid.begin(), valid.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

PreparedData prepare_data(const RunConfig& config) {
  if (config.corpus.empty()) throw ConfigError("no corpus file given (--corpus or data.corpus)");
  Corpus corpus = load_corpus(config.corpus);
  if (corpus.empty()) throw DataError("corpus " + config.corpus.string() + " has no examples");
  KnowledgeStore store;
  if (!config.knowledge.empty()) store = load_store(config.knowledge);
  attach(store, corpus, config.missing);

  PreparedData data;
  std::set<std::string> labels;
  for (const auto& ex : corpus) labels.insert(ex.emotion);
  data.emotion_labels.assign(labels.begin(), labels.end());

  if (corpus.size() < 3) {
    // Too small to split: everything is training data.
    data.train = std::move(corpus);
  } else {
    Splits s = split(corpus, config.ratios, config.seed);
    data.train = std::move(s.train);
    data.valid = std::move(s.valid);
    data.test = std::move(s.test);
  }
  const auto keep = static_cast<std::size_t>(
      std::floor(config.data_fraction * static_cast<double>(data.train.size()) + 1e-9));
  data.train.resize(std::min(keep, data.train.size()));
  return data;
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const PreparedData data = prepare_data(config);
  if (data.train.empty()) throw DataError("training split is empty");
  ensure_directory(config.out);
  DirectoryLock lock(config.out);

  const Vocabulary vocab = training_vocab(data, config.min_freq);
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.num_emotions = vocab.num_emotions();
  mc.validate();
  const auto train_set = encode_all(data.train, vocab, mc);
  const auto valid_set = encode_all(data.valid, vocab, mc);

  Model model(mc, config.seed);
  TrainOptions options = config.train;
  options.seed = config.seed;

  auto train_log = open_output(config.out / kTrainLogFile);
  auto on_step = [&](const StepLog& s) {
    nlohmann::ordered_json j;
    j["type"] = "step";
    j["step"] = s.step;
    j["epoch"] = s.epoch;
    j["loss"] = s.loss.loss;
    j["nll"] = s.loss.nll;
    j["emo"] = s.loss.emo;
    train_log << j.dump() << '\n';
  };
  auto on_epoch = [&](const EpochLog& e) {
    nlohmann::ordered_json j;
    j["type"] = "epoch";
    j["epoch"] = e.epoch;
    j["train"] = {{"loss", e.train.loss}, {"nll", e.train.nll}, {"emo", e.train.emo}};
    if (e.valid) {
      j["valid"] = {{"loss", e.valid->loss}, {"nll", e.valid->nll}, {"emo", e.valid->emo}};
    } else {
      j["valid"] = nullptr;
    }
    j["improved"] = e.improved;
    train_log << j.dump() << '\n';
    train_log.flush();
    log << "epoch " << e.epoch << ": train L=" << e.train.loss;
    if (e.valid) log << ", valid L=" << e.valid->loss;
    log << (e.improved ? " (best)" : "") << '\n';
  };

  log << "training on " << train_set.size() << " examples (" << valid_set.size() << " valid), "
      << model.parameter_count() << " parameters\n";
  const TrainResult result = train(model, train_set, valid_set, options, on_step, on_epoch);
  save_checkpoint(config.out / kCheckpointFile, model, vocab);
  {
    auto cfg = open_output(config.out / kResolvedConfigFile);
    cfg << to_flat_json(config).dump(2) << '\n';
  }
  log << "steps " << result.steps.size() << ", best epoch " << result.best_epoch
      << (result.early_stopped ? " (early stop)" : "") << "; wrote "
      << (config.out / kCheckpointFile).string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  config.validate();
  const LoadedModel loaded = load_checkpoint(config.checkpoint_path());
  const Model& model = *loaded.model;
  const Vocabulary& vocab = loaded.vocab;
  const ModelConfig& mc = model.config();
  const PreparedData data = prepare_data(config);
  Corpus storage;
  const Corpus& examples = evaluation_split(data, config.split, storage);
  if (examples.empty()) throw DataError("split '" + split_name(config.split) + "' is empty");
  check_labels(examples, vocab);
  ensure_directory(config.out);

  const std::size_t max_len = std::min(config.max_generate, mc.max_target);
  EvalInputs inputs;
  auto nll_log = open_output(config.out / kTokenNllFile);
  NoGradGuard no_grad;
  for (const auto& ex : examples) {
    const EncodedExample enc = encode_example(ex, vocab, mc.max_source, mc.max_target);
    const ForwardOutput fwd = model.forward(enc);
    nlohmann::ordered_json line;
    line["id"] = ex.id;
    line["nll"] = fwd.token_nll;
    nll_log << line.dump() << '\n';
    inputs.token_nlls.insert(inputs.token_nlls.end(), fwd.token_nll.begin(), fwd.token_nll.end());

    std::size_t predicted = 0;
    const auto ids = model.generate(enc, max_len, nullptr, &predicted);
    Tokens ref = tokenize(ex.response);
    inputs.hyps.push_back(config.self_reference ? ref : hypothesis_tokens(ids, vocab));
    inputs.refs.push_back(std::move(ref));
    inputs.predicted_emotions.push_back(predicted);
    inputs.gold_emotions.push_back(enc.emotion);
  }
  const EvalReport report = score(inputs);
  const auto json = to_json(report);
  {
    auto f = open_output(config.out / kEvalReportFile);
    f << json.dump(2) << '\n';
  }
  out << json.dump(2) << '\n';
  log << "evaluated " << report.examples << " examples (" << split_name(config.split)
      << "): PPL " << report.ppl << ", B-2 " << report.bleu[1] << ", Dist-1 "
      << 100.0 * report.dist1 << "%, Dist-2 " << 100.0 * report.dist2 << "%, Acc "
      << report.emo_accuracy << '\n';
  return kExitOk;
}

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  config.validate();
  if (config.input.empty()) throw ConfigError("generate needs --input");
  const LoadedModel loaded = load_checkpoint(config.checkpoint_path());
  const Model& model = *loaded.model;
  const Vocabulary& vocab = loaded.vocab;
  const ModelConfig& mc = model.config();
  KnowledgeStore store;
  if (!config.knowledge.empty()) store = load_store(config.knowledge);
  std::ifstream in(config.input);
  if (!in) throw DataError("cannot open input file " + config.input.string());

  const std::size_t max_len = std::min(config.max_generate, mc.max_target);
  std::size_t line_no = 0, done = 0, failures = 0;
  std::string line;
  NoGradGuard no_grad;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      nlohmann::ordered_json record;
      try {
        record = nlohmann::ordered_json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
      }
      if (!record.is_object()) throw SchemaError("record must be a JSON object");
      DialogueExample ex;
      ex.id = record.contains("id") && record["id"].is_string() ? record["id"].get<std::string>()
                                                                  : "line-" + std::to_string(line_no);
      if (!record.contains("context") || !record["context"].is_array() || record["context"].empty()) {
        throw SchemaError("'context' must be a non-empty array of strings");
      }
      for (const auto& u : record["context"]) {
        if (!u.is_string()) throw SchemaError("'context' must be a non-empty array of strings");
        ex.context.push_back(u.get<std::string>());
      }
      if (record.contains("knowledge")) {
        ex.knowledge = bundle_from_json(nlohmann::json::parse(record["knowledge"].dump()), ex.id, false);
      } else if (const auto* b = store.find(ex.id)) {
        ex.knowledge = *b;
      } else {
        throw SchemaError("no 'knowledge' field and no store entry for '" + ex.id + "'");
      }
      ex.emotion = vocab.emotion_label(0);  // unused; generation ignores the label

      const EncodedExample enc = encode_example(ex, vocab, mc.max_source, mc.max_target);
      Selection selection;
      std::size_t predicted = 0;
      const auto ids = model.generate(enc, max_len, &selection, &predicted);
      std::vector<TokenId> body;
      for (TokenId id : ids) {
        if (id == kEos) break;
        body.push_back(id);
      }
      record["response"] = vocab.decode(body);
      record["predicted_emotion"] = vocab.emotion_label(predicted);
      if (selection.active) {
        record["selected_knowledge"] = {
            {"relation", relation_name(selection.winner)},
            {"inferences", (*ex.knowledge)[selection.winner]}};
        record["selection_process"] = selection.trace.selection_process();
      } else {
        record["selected_knowledge"] = nullptr;
        record["selection_process"] = nullptr;
      }
      out << record.dump() << '\n';
      ++done;
    } catch (const Error& e) {
      ++failures;
      log << "record " << line_no << ": " << e.what() << '\n';
    }
  }
  log << "generated " << done << " responses, " << failures << " failure(s)\n";
  return kExitOk;
}

int cmd_trace(const RunConfig& config, std::ostream& log) {
  config.validate();
  const LoadedModel loaded = load_checkpoint(config.checkpoint_path());
  const Model& model = *loaded.model;
  const Vocabulary& vocab = loaded.vocab;
  const ModelConfig& mc = model.config();
  if (!mc.adaptive_selection) throw ConfigError("the checkpoint was trained with selection disabled");
  const PreparedData data = prepare_data(config);
  Corpus storage;
  const Corpus& examples = evaluation_split(data, config.split, storage);
  if (examples.empty()) throw DataError("split '" + split_name(config.split) + "' is empty");
  check_labels(examples, vocab);
  ensure_directory(config.out);

  std::vector<std::string> emotions;
  std::vector<WorkspaceTrace> traces;
  std::vector<TraceRecord> records;
  NoGradGuard no_grad;
  for (const auto& ex : examples) {
    const EncodedExample enc = encode_example(ex, vocab, mc.max_source, mc.max_target);
    const Tensor z_ctx = model.encode_context(enc.context);
    const Selection sel = model.select(z_ctx, model.encode_knowledge(enc.relations));
    emotions.push_back(ex.emotion);
    traces.push_back(sel.trace);
    records.push_back({ex.id, sel.trace});
  }
  const SelectionStats stats = selection_stats(emotions, traces);
  {
    auto f = open_output(config.out / kWinnersFile);
    stats.write_winners_csv(f);
  }
  {
    auto f = open_output(config.out / kEliminationsFile);
    stats.write_eliminations_csv(f);
  }
  {
    auto f = open_output(config.out / kTraceExamplesFile);
    write_trace_csv(f, records);
  }
  log << "traced " << examples.size() << " examples (" << split_name(config.split) << ") across "
      << stats.winner_frequency.size() << " emotion(s); wrote " << kWinnersFile << ", "
      << kEliminationsFile << '\n';
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const VocabMismatchError*>(&e)) return kExitVocab;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const ValidationError*>(&e)) {
    return kExitData;
  }
  return kExitInternal;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"knowsel: empathetic response generation with adaptive knowledge selection"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, corpus, knowledge, out, checkpoint, input, split;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    std::size_t max_len = 0;
    bool self_reference = false;
  } f;
  std::map<std::string, std::vector<CLI::Option*>> given;

  auto common = [&](CLI::App* cmd) {
    given["config"].push_back(cmd->add_option(
        "--config", f.config, "JSON file of dotted config keys"));
    given["seed"].push_back(cmd->add_option(
        "--seed", f.seed, "global seed (init, shuffling, splits)"));
    given["data_fraction"].push_back(cmd->add_option(
        "--data-fraction", f.data_fraction, "fraction of the training split to keep"));
    given["out"].push_back(cmd->add_option("--out", f.out, "output directory for artifacts"));
    given["corpus"].push_back(cmd->add_option("--corpus", f.corpus, "JSON-lines dialogue corpus"));
    given["knowledge"].push_back(cmd->add_option(
        "--knowledge", f.knowledge, "JSON-lines knowledge store"));
  };
  auto scoring = [&](CLI::App* cmd) {
    given["split"].push_back(cmd->add_option("--split", f.split, "train | valid | test | all"));
    given["checkpoint"].push_back(cmd->add_option(
        "--checkpoint", f.checkpoint, "default: <out>/checkpoint.dcks"));
    given["max_len"].push_back(cmd->add_option(
        "--max-len", f.max_len, "greedy decoding length cap"));
  };

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  common(train);
  CLI::App* evaluate = app.add_subcommand("evaluate", "score greedy generations on a split");
  common(evaluate);
  scoring(evaluate);
  evaluate->add_flag("--self-reference", f.self_reference,
                     "score the gold responses against themselves (sanity check)");
  CLI::App* generate = app.add_subcommand("generate", "respond to JSON-lines inputs");
  common(generate);
  scoring(generate);
  given["input"].push_back(generate->add_option(
      "--input", f.input, "JSON-lines of contexts and knowledge"));
  CLI::App* trace = app.add_subcommand("trace", "knowledge-selection statistics per emotion");
  common(trace);
  scoring(trace);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  // Each subcommand registers its own copy of a flag; any use counts.
  auto set = [&](const std::string& name) {
    for (const CLI::Option* opt : given[name])
      if (opt->count() > 0) return true;
    return false;
  };

  try {
    RunConfig config;
    if (set("config")) load_config_file(config, f.config);
    if (set("seed")) config.seed = f.seed;
    if (set("data_fraction")) config.data_fraction = f.data_fraction;
    if (set("out")) config.out = f.out;
    if (set("corpus")) config.corpus = f.corpus;
    if (set("knowledge")) config.knowledge = f.knowledge;
    if (set("split")) config.split = parse_split(f.split);
    if (set("checkpoint")) config.checkpoint = f.checkpoint;
    if (set("max_len")) config.max_generate = f.max_len;
    if (set("input")) config.input = f.input;
    config.self_reference = f.self_reference;

    if (train->parsed()) return cmd_train(config, err);
    if (evaluate->parsed()) return cmd_evaluate(config, out, err);
    if (generate->parsed()) return cmd_generate(config, out, err);
    if (trace->parsed()) return cmd_trace(config, err);
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace knowsel
