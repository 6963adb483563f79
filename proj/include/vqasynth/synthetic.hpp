#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>

#include "vqasynth/llm.hpp"
#include "vqasynth/rubric.hpp"
#include "vqasynth/schema.hpp"

namespace vqasynth::synthetic {

// What the mock models say about one record. Replies are keyed off the
// request tag ("<record_id>/gen", "/verify<n>", "/trace").
struct RecordScript {
  bool item_parses = true;
  std::optional<std::string> item_json;  // replaces the synthesized item
  bool stage1_gradable = true;
  std::set<std::string> failed_essentials;
  bool stage2_gradable = true;
  std::set<std::string> missed_positives;
  bool stage3_gradable = true;
  std::set<std::string> triggered_penalties;
  std::optional<std::string> trace;  // default: a short trace naming the key
};

using Policy = std::function<RecordScript(const std::string& record_id)>;

// Deterministic well-formed item for a record id.
schema::McvqaItem default_item(const std::string& record_id);

class ScriptedResponder {
public:
  ScriptedResponder(rubric::RubricConfig rubric, Policy policy);

  std::string operator()(const llm::ChatRequest& request, const std::string& hash) const;

private:
  rubric::RubricConfig rubric_;
  Policy policy_;
};

// Conditional pass rates of each funnel step.
struct Rates {
  double gradable = 1.0;   // stage-1 verdict parses
  double gate = 1.0;       // essentials all pass, given gradable
  double accepted = 1.0;   // score clears tau, given the gate passed
};

// Per-record draws are hashed from (seed, record_id, step), so a run is
// reproducible and independent of scheduling.
Policy calibrated(const rubric::RubricConfig& rubric, Rates rates, std::uint64_t seed = 0);

double unit_draw(std::uint64_t seed, const std::string& record_id, const std::string& step);

} // namespace vqasynth::synthetic
