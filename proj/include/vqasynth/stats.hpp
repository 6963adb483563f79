#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "vqasynth/llm.hpp"

namespace vqasynth::stats {

struct CriterionStats {
  int stage = 1;
  std::size_t evaluated = 0;
  // Not awarded (stages 1 and 2) or triggered (stage 3).
  std::size_t failed = 0;

  double rate() const { return evaluated ? static_cast<double>(failed) / static_cast<double>(evaluated) : 0.0; }
};

struct RunStats {
  nlohmann::json funnel;  // funnel.json verbatim, null if absent
  std::size_t records = 0;
  std::map<std::string, std::size_t> status_counts;
  std::map<std::string, std::size_t> reject_causes;  // "<cause>@stage<n>"
  std::map<std::string, CriterionStats> criteria;
  std::map<std::string, std::size_t> score_histogram;  // 4-place decimal -> count
  std::map<std::string, std::size_t> primary_labels;
  std::map<std::string, std::size_t> secondary_labels;
  llm::TokenUsage usage;
  std::size_t skipped_lines = 0;

  nlohmann::json to_json() const;
};

// Reads audit.jsonl (and funnel.json when present) from a run directory.
// Malformed audit lines are counted and skipped.
RunStats compute(const std::filesystem::path& run_dir);

} // namespace vqasynth::stats
