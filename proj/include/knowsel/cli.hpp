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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowsel/corpus.hpp"
#include "knowsel/knowledge.hpp"
#include "knowsel/model.hpp"
#include "knowsel/train.hpp"
#include "knowsel/workspace.hpp"

namespace knowsel {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitVocab = 5;

// Artifact names under the output directory.
inline constexpr const char* kCheckpointFile = "checkpoint.dcks";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kEvalReportFile = "eval_report.json";
inline constexpr const char* kTokenNllFile = "token_nll.jsonl";
inline constexpr const char* kWinnersFile = "trace_winners.csv";
inline constexpr const char* kEliminationsFile = "trace_eliminations.csv";
inline constexpr const char* kTraceExamplesFile = "trace_examples.csv";
inline constexpr const char* kResolvedConfigFile = "config.json";
inline constexpr const char* kLockFile = ".lock";

enum class SplitName { kTrain, kValid, kTest, kAll };

SplitName parse_split(const std::string& name);

struct RunConfig {
  std::filesystem::path corpus;
  std::filesystem::path knowledge;
  std::filesystem::path out = "out";
  std::filesystem::path checkpoint;  // empty: <out>/checkpoint.dcks
  std::filesystem::path input;       // generate only
  SplitRatios ratios;
  SplitName split = SplitName::kTest;
  std::uint64_t seed = 0;
  double data_fraction = 1.0;
  std::size_t min_freq = 1;
  MissingKnowledge missing = MissingKnowledge::kStrict;
  ModelConfig model;  // vocab_size and num_emotions are filled in from data
  TrainOptions train;
  std::size_t max_generate = 32;
  bool self_reference = false;  // evaluate: score gold responses against themselves

  RunConfig();

  /// Range checks only; file existence is checked when commands run.
  void validate() const;
  std::filesystem::path checkpoint_path() const;
};

/// Applies a flat object of dotted keys ("model.d_model", "optim.lr", ...).
/// Unknown keys and ill-typed values raise ConfigError.
void apply_config(RunConfig& config, const nlohmann::json& flat);
void load_config_file(RunConfig& config, const std::filesystem::path& path);
nlohmann::ordered_json to_flat_json(const RunConfig& config);

/// Winner frequencies per gold emotion and elimination counts per iteration.
struct SelectionStats {
  std::map<std::string, std::array<double, kNumRelations>> winner_frequency;
  std::map<std::string, std::size_t> examples_per_emotion;
  std::map<std::size_t, std::array<std::size_t, kNumRelations>> eliminations;

  void write_winners_csv(std::ostream& out) const;
  void write_eliminations_csv(std::ostream& out) const;
};

SelectionStats selection_stats(const std::vector<std::string>& emotions,
                               const std::vector<WorkspaceTrace>& traces);

/// Loaded, knowledge-attached and split data for one run.
struct PreparedData {
  Corpus train;
  Corpus valid;
  Corpus test;
  std::vector<std::string> emotion_labels;  // across the whole corpus

  const Corpus& get(SplitName name) const;
  Corpus all() const;
};

/// Loads corpus and knowledge, attaches, splits, then applies data_fraction
/// to the training split.
PreparedData prepare_data(const RunConfig& config);

// Commands write human-readable progress to `log` and machine output to the
// artifact files (generate writes JSON lines to `out`). Each returns an exit
// code; library errors propagate as exceptions.
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_trace(const RunConfig& config, std::ostream& log);

/// Exception-to-exit-code mapping used by run_cli.
int exit_code_for(const std::exception& e);

/// Full command line: parsing, config loading, dispatch, error reporting.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace knowsel
