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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "knowsel/checkpoint.hpp"
#include "knowsel/cli.hpp"
#include "knowsel/error.hpp"
#include "knowsel/synth.hpp"

using namespace knowsel;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "knowsel");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<nlohmann::json> json_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

/// A scratch directory with a small synthetic corpus, its knowledge and a
/// toy-sized config.
struct Workdir {
  fs::path dir;
  fs::path corpus, knowledge, config;

  explicit Workdir(const std::string& name, std::size_t size = 12) {
    dir = fs::temp_directory_path() / ("knowsel_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    corpus = dir / "corpus.jsonl";
    knowledge = dir / "knowledge.jsonl";
    config = dir / "config.json";
    const auto data = synth_corpus({.size = size, .num_emotions = 4, .seed = 3});
    std::ofstream c(corpus), k(knowledge);
    save_corpus(data.corpus, c);
    save_store(data.store, k);
    write(config, R"({"model.d_model": 8, "model.num_layers": 1, "model.num_heads": 2,
                      "model.ffn_dim": 16, "train.epochs": 1, "train.batch_size": 4,
                      "optim.lr": 0.01, "generate.max_len": 8})");
  }
  ~Workdir() { fs::remove_all(dir); }

  std::vector<std::string> args(const std::string& cmd, const std::string& out) const {
    return {cmd, "--config", config.string(), "--corpus", corpus.string(), "--knowledge",
            knowledge.string(), "--out", (dir / out).string()};
  }
};

template <class... More>
std::vector<std::string> plus(std::vector<std::string> base, More... more) {
  (base.push_back(more), ...);
  return base;
}

}  // namespace

TEST_CASE("config") {
  RunConfig c;
  CHECK(c.train.adam.lr == 5e-5);
  CHECK(c.train.batch_size == 16);
  CHECK(c.train.epochs == 5);
  CHECK(c.model.gamma == 1.0);
  apply_config(c, nlohmann::json::parse(
                      R"({"model.d_model": 16, "optim.lr": 0.5, "seed": 9, "split.train": 0.6,
                          "split.valid": 0.2, "split.test": 0.2, "model.refine_norm": "linear",
                          "data.missing_knowledge": "empty"})"));
  CHECK(c.model.d_model == 16);
  CHECK(c.train.adam.lr == 0.5);
  CHECK(c.seed == 9);
  CHECK(c.ratios.train == 0.6);
  CHECK(c.model.refine_norm == RefineNorm::kLinear);
  CHECK(c.missing == MissingKnowledge::kEmptyBundle);
  CHECK_NOTHROW(c.validate());

  RunConfig back;
  apply_config(back, nlohmann::json::parse(to_flat_json(c).dump()));
  CHECK(to_flat_json(back) == to_flat_json(c));

  CHECK_THROWS_AS(apply_config(c, nlohmann::json::parse(R"({"model.nope": 1})")), ConfigError);
  CHECK_THROWS_AS(apply_config(c, nlohmann::json::parse(R"({"model.d_model": "big"})")), ConfigError);
  CHECK_THROWS_AS(apply_config(c, nlohmann::json::parse("[1]")), ConfigError);
  c.data_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.data_fraction = 1.0;
  c.model.gamma = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_split("valid") == SplitName::kValid);
  CHECK_THROWS_AS(parse_split("dev"), ConfigError);
}

TEST_CASE("selection stats") {
  WorkspaceTrace a, b, c;
  a.winner = Relation::kXReact;
  a.eliminations = {{1, Relation::kXIntent, 2.0}};
  b.winner = Relation::kXWant;
  b.eliminations = {{1, Relation::kXIntent, 1.0}};
  c.winner = Relation::kXReact;
  const auto stats = selection_stats({"sad", "sad", "joyful"}, {a, b, c});
  const auto& sad = stats.winner_frequency.at("sad");
  CHECK(sad[index_of(Relation::kXReact)] == 0.5);
  CHECK(sad[index_of(Relation::kXWant)] == 0.5);
  CHECK(std::accumulate(sad.begin(), sad.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stats.winner_frequency.at("joyful")[index_of(Relation::kXReact)] == 1.0);
  CHECK(stats.eliminations.at(1)[index_of(Relation::kXIntent)] == 2);

  std::ostringstream w, e;
  stats.write_winners_csv(w);
  stats.write_eliminations_csv(e);
  CHECK(w.str() == "emotion,relation,winner_frequency\njoyful,xReact,1\nsad,xWant,0.5\nsad,xReact,0.5\n");
  CHECK(e.str() == "iteration,relation,elimination_count\n1,xIntent,2\n");
}

TEST_CASE("prepare_data and data_fraction") {
  Workdir w("prepare", 20);
  RunConfig c;
  c.corpus = w.corpus;
  c.knowledge = w.knowledge;
  const auto full = prepare_data(c);
  CHECK(full.train.size() == 16);
  CHECK(full.valid.size() == 2);
  CHECK(full.test.size() == 2);
  CHECK(full.emotion_labels.size() == 4);
  for (const auto& ex : full.all()) CHECK(ex.knowledge);

  c.data_fraction = 0.5;
  const auto half = prepare_data(c);
  CHECK(half.train.size() == 8);
  CHECK(half.valid == full.valid);
  CHECK(half.test == full.test);
  c.data_fraction = 0.3;
  CHECK(prepare_data(c).train.size() == 4);  // floor(4.8)

  c.knowledge = w.dir / "absent.jsonl";
  CHECK_THROWS_AS(prepare_data(c), DataError);
}

TEST_CASE("train, evaluate, generate, trace") {
  Workdir w("pipeline");
  const auto train = run(w.args("train", "run"));
  REQUIRE_MESSAGE(train.code == 0, train.err);
  const fs::path run_dir = w.dir / "run";
  for (const char* f : {kCheckpointFile, kTrainLogFile, kResolvedConfigFile}) CHECK(fs::exists(run_dir / f));
  CHECK_FALSE(fs::exists(run_dir / kLockFile));

  const auto log = json_lines(slurp(run_dir / kTrainLogFile));
  REQUIRE_FALSE(log.empty());
  CHECK(log.front()["type"] == "step");
  for (const char* key : {"loss", "nll", "emo"}) CHECK(log.front().contains(key));
  CHECK(log.back()["type"] == "epoch");

  SUBCASE("evaluate") {
    const auto eval = run(plus(w.args("evaluate", "run"), "--split", "train"));
    REQUIRE_MESSAGE(eval.code == 0, eval.err);
    const auto report = nlohmann::json::parse(slurp(run_dir / kEvalReportFile));
    CHECK(nlohmann::json::parse(eval.out) == report);
    std::vector<double> nlls;
    for (const auto& line : json_lines(slurp(run_dir / kTokenNllFile)))
      for (double v : line["nll"]) nlls.push_back(v);
    const double mean = std::accumulate(nlls.begin(), nlls.end(), 0.0) / static_cast<double>(nlls.size());
    CHECK(report["ppl"].get<double>() == doctest::Approx(std::exp(mean)).epsilon(1e-12));
    CHECK(report["counts"]["tokens"] == nlls.size());
    CHECK(report["counts"]["examples"] == 9);

    const auto self = run(plus(w.args("evaluate", "self"), "--split", "train", "--checkpoint",
                               (run_dir / kCheckpointFile).string(), "--self-reference"));
    REQUIRE(self.code == 0);
    const auto s = nlohmann::json::parse(self.out);
    for (int n = 0; n < 4; ++n) CHECK(s["bleu"][n].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s["rouge1_f"] == 1.0);
  }

  SUBCASE("generate") {
    write(w.dir / "input.jsonl",
          R"({"id":"q1","context":["i heard about the dog today .","what happened ?","i feel so afraid ."],)"
          R"("knowledge":{"xIntent":["to be alone"],"xNeed":["to see the dog"],"xWant":["to rest"],"xEffect":["cries"],"xReact":["afraid","feels afraid"]}})"
          "\n"
          R"({"id":"synth-0","context":["hello"]})" "\n"
          R"({"id":"bad","context":[]})" "\n"
          "not json\n");
    const auto args = plus(w.args("generate", "run"), "--input", (w.dir / "input.jsonl").string());
    const auto first = run(args);
    const auto second = run(args);
    REQUIRE(first.code == 0);
    CHECK(first.out == second.out);
    CHECK(first.err.find("2 failure(s)") != std::string::npos);
    const auto records = json_lines(first.out);
    REQUIRE(records.size() == 2);
    for (const auto& r : records) {
      CHECK(r["response"].is_string());
      CHECK(r["predicted_emotion"].is_string());
      const std::string process = r["selection_process"];
      std::size_t arrows = 0;
      for (std::size_t p = process.find("→"); p != std::string::npos; p = process.find("→", p + 1)) ++arrows;
      CHECK(arrows == 4);
      CHECK(process.substr(process.rfind(' ') + 1) == r["selected_knowledge"]["relation"]);
    }
    CHECK(records[0]["knowledge"]["xReact"] == nlohmann::json{"afraid", "feels afraid"});
    CHECK(records[0]["knowledge"].size() == 5);
    CHECK(records[1]["id"] == "synth-0");
  }

  SUBCASE("trace") {
    const auto t = run(plus(w.args("trace", "run"), "--split", "all"));
    REQUIRE_MESSAGE(t.code == 0, t.err);
    std::istringstream winners(slurp(run_dir / kWinnersFile));
    std::string line;
    std::getline(winners, line);
    CHECK(line == "emotion,relation,winner_frequency");
    std::map<std::string, double> totals;
    while (std::getline(winners, line)) {
      const auto a = line.find(','), b = line.rfind(',');
      totals[line.substr(0, a)] += std::stod(line.substr(b + 1));
    }
    CHECK(totals.size() == 4);
    for (const auto& [emotion, total] : totals) CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    const auto elim = slurp(run_dir / kEliminationsFile);
    CHECK(elim.rfind("iteration,relation,elimination_count\n", 0) == 0);
    std::size_t eliminated = 0;
    std::istringstream rows(elim);
    std::getline(rows, line);
    while (std::getline(rows, line)) eliminated += std::stoul(line.substr(line.rfind(',') + 1));
    CHECK(eliminated == 4 * 12);
  }
}

TEST_CASE("single-example trace") {
  Workdir w("single", 1);
  REQUIRE(run(w.args("train", "run")).code == 0);
  REQUIRE(run(plus(w.args("trace", "run"), "--split", "train")).code == 0);
  const auto csv = slurp(w.dir / "run" / kWinnersFile);
  std::istringstream in(csv);
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  CHECK_FALSE(std::getline(in, extra));
  CHECK(row.substr(row.rfind(',') + 1) == "1");
}

TEST_CASE("determinism and gamma = 0") {
  Workdir w("determinism");
  REQUIRE(run(w.args("train", "a")).code == 0);
  REQUIRE(run(w.args("train", "b")).code == 0);
  CHECK(slurp(w.dir / "a" / kTrainLogFile) == slurp(w.dir / "b" / kTrainLogFile));
  CHECK(slurp(w.dir / "a" / kCheckpointFile) == slurp(w.dir / "b" / kCheckpointFile));
  REQUIRE(run(plus(w.args("train", "c"), "--seed", "1")).code == 0);
  CHECK(slurp(w.dir / "a" / kCheckpointFile) != slurp(w.dir / "c" / kCheckpointFile));

  // With gamma = 0 the emotion head never moves.
  write(w.dir / "gamma.json", R"({"model.d_model": 8, "model.num_layers": 1, "model.num_heads": 2,
                                  "model.ffn_dim": 16, "train.epochs": 2, "train.batch_size": 4,
                                  "optim.lr": 0.01, "model.gamma": 0})");
  auto args = w.args("train", "g");
  args[2] = (w.dir / "gamma.json").string();
  REQUIRE(run(args).code == 0);
  const auto trained = load_checkpoint(w.dir / "g" / kCheckpointFile);
  const Model fresh(trained.model->config(), 0);
  auto theta = [](const Model& m) {
    for (const auto& [name, t] : m.parameters())
      if (name == "emotion.theta") return t.to_vector();
    return std::vector<double>{};
  };
  CHECK(theta(*trained.model) == theta(fresh));
  CHECK_FALSE(theta(fresh).empty());
}

TEST_CASE("exit codes") {
  Workdir w("errors");
  SUBCASE("missing knowledge file") {
    auto args = w.args("train", "run");
    args[6] = (w.dir / "absent.jsonl").string();
    const auto r = run(args);
    CHECK(r.code == kExitData);
    CHECK(r.err.find("absent.jsonl") != std::string::npos);
  }
  SUBCASE("bad config") {
    write(w.config, R"({"model.bogus": 1})");
    CHECK(run(w.args("train", "run")).code == kExitConfig);
    write(w.config, "{not json");
    CHECK(run(w.args("train", "run")).code == kExitConfig);
    CHECK(run({"train", "--data-fraction", "2", "--corpus", w.corpus.string()}).code == kExitConfig);
    CHECK(run({"frobnicate"}).code == kExitConfig);
    CHECK(run({"train", "--seed", "abc"}).code == kExitConfig);
  }
  SUBCASE("help") { CHECK(run({"--help"}).code == kExitOk); }
  SUBCASE("empty split, vocab mismatch, missing checkpoint") {
    REQUIRE(run(w.args("train", "run")).code == 0);
    CHECK(run(plus(w.args("evaluate", "run"), "--checkpoint", (w.dir / "none.dcks").string())).code ==
          kExitData);

    Workdir tiny("errors_tiny", 2);
    const auto ckpt = (w.dir / "run" / kCheckpointFile).string();
    CHECK(run(plus(tiny.args("evaluate", "run"), "--checkpoint", ckpt)).code == kExitData);  // test split empty

    const auto other = synth_corpus({.size = 8, .num_emotions = 8, .seed = 1});
    std::ofstream c(w.dir / "other.jsonl"), k(w.dir / "other_k.jsonl");
    save_corpus(other.corpus, c);
    save_store(other.store, k);
    c.close();
    k.close();
    const auto r = run({"evaluate", "--corpus", (w.dir / "other.jsonl").string(), "--knowledge",
                        (w.dir / "other_k.jsonl").string(), "--checkpoint", ckpt, "--split", "all",
                        "--out", (w.dir / "mismatch").string()});
    CHECK(r.code == kExitVocab);
  }
  SUBCASE("locked output directory") {
    fs::create_directories(w.dir / "run");
    write(w.dir / "run" / kLockFile, "");
    CHECK(run(w.args("train", "run")).code == kExitConfig);
  }
  SUBCASE("trace needs the selector") {
    write(w.config, R"({"model.d_model": 8, "model.num_layers": 1, "model.num_heads": 2,
                        "model.ffn_dim": 16, "train.epochs": 1, "model.adaptive_selection": false})");
    REQUIRE(run(w.args("train", "run")).code == 0);
    CHECK(run(w.args("trace", "run")).code == kExitConfig);
    CHECK(run(w.args("evaluate", "run")).code == kExitOk);
  }
  CHECK(exit_code_for(NumericError("x")) == kExitNumeric);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitInternal);
}

TEST_CASE("installed binary") {
  const char* binary = std::getenv("KNOWSEL_CLI");
  if (!binary) return;
  Workdir w("binary");
  const std::string base = std::string(binary) + " train --config " + w.config.string() + " --corpus " +
                           w.corpus.string() + " --out " + (w.dir / "run").string() + " >/dev/null 2>&1";
  const int missing = std::system((base + " --knowledge " + (w.dir / "absent.jsonl").string()).c_str());
  CHECK(WEXITSTATUS(missing) == kExitData);
  const int ok = std::system((base + " --knowledge " + w.knowledge.string()).c_str());
  CHECK(WEXITSTATUS(ok) == kExitOk);
}
