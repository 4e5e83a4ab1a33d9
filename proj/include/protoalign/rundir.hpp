#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "protoalign/engine.hpp"

namespace protoalign {

/// checkpoint_000500.json style file name.
std::string checkpoint_name(std::size_t iteration);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Trains and fills `dir` (created if missing):
///   config.json          resolved configuration
///   metrics.jsonl        one IterationRecord per line, no timing fields
///   summary.json         final accuracies, confusion matrix, A-distance
///   checkpoint_*.json    periodic and final model + prototype bank
///   checkpoint_last_good.json  only after divergence
///   graph_debug.jsonl    per-iteration a_hat, T and mask when enabled
RunResult train_to_directory(const TrainConfig& config, const DomainPair& data, const std::filesystem::path& dir);

}  // namespace protoalign
