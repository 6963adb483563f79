#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vqasynth/content_store.hpp"
#include "vqasynth/corpus.hpp"
#include "vqasynth/generator.hpp"
#include "vqasynth/llm.hpp"
#include "vqasynth/prompt.hpp"
#include "vqasynth/rubric.hpp"
#include "vqasynth/schema.hpp"

namespace vqasynth::verifier {

enum class VerdictViolation {
  NoJsonObject,
  MissingCriteria,
  WrongType,
  MissingCriterion,
  UnknownCriterion,
  DuplicateCriterion,
  NonBinaryScore,
  MissingReason,
};

const char* to_string(VerdictViolation v);

struct VerdictDiagnostics {
  std::vector<std::pair<VerdictViolation, std::string>> violations;

  bool has(VerdictViolation v) const;
  nlohmann::json to_json() const;
};

using VerdictResult = std::variant<rubric::VerdictSheet, VerdictDiagnostics>;

std::string verdict_contract(int stage);

llm::ChatRequest build_verifier_prompt(const corpus::FigureRecord& record, const schema::McvqaItem& item, int stage,
                                       const rubric::RubricConfig& config, const prompt::PromptSet& prompts,
                                       const ContentStore& store, const generator::ModelParams& params);

// Strict per-stage verdict parse: one entry per configured criterion, scores
// in {0, weight}, a reason for every triggered penalty.
VerdictResult parse_verdict(const std::string& raw, int stage, const rubric::RubricConfig& config);

struct StageResult {
  int stage = 1;
  std::optional<rubric::VerdictSheet> sheet;
  std::optional<VerdictDiagnostics> diagnostics;  // set when ungradable
  std::string raw_output;
  generator::Provenance provenance;
  llm::TokenUsage usage;

  bool gradable() const { return sheet.has_value(); }
  nlohmann::json to_json() const;
  static StageResult from_json(const nlohmann::json& j, const rubric::RubricConfig& config);
};

StageResult make_stage_result(int stage, std::string raw, generator::Provenance provenance, llm::TokenUsage usage,
                              const rubric::RubricConfig& config);

// Transport errors propagate as llm::GatewayError.
StageResult run_stage(const corpus::FigureRecord& record, const schema::McvqaItem& item, int stage,
                      llm::Gateway& gateway, const rubric::RubricConfig& config, const prompt::PromptSet& prompts,
                      const ContentStore& store, const std::string& timestamp = {});

// Deterministic local scan of the stem for forbidden terms; audit only.
std::vector<std::string> forbidden_terms_lint(const std::string& stem);

struct VerificationResult {
  std::optional<rubric::GateResult> gate;
  std::optional<rubric::QualityScore> score;
  rubric::Decision decision;
  std::vector<StageResult> stages;
  std::vector<std::string> lint_terms;
};

// Composes recorded stage results into a decision. Stages must be a prefix
// of the sequence 1, 2, 3 that verify_item would have produced.
VerificationResult decide(const std::vector<StageResult>& stages, const rubric::RubricConfig& config,
                          const schema::McvqaItem& item);

// Next stage to run given the recorded prefix, or nullopt when decided.
std::optional<int> next_stage(const std::vector<StageResult>& stages, const rubric::RubricConfig& config);

// Stage 1, short-circuit on gate failure or ungradable verdicts, then stages
// 2 and 3 and the acceptance rule.
VerificationResult verify_item(const corpus::FigureRecord& record, const schema::McvqaItem& item,
                               llm::Gateway& gateway, const rubric::RubricConfig& config,
                               const prompt::PromptSet& prompts, const ContentStore& store,
                               const std::string& timestamp = {});

} // namespace vqasynth::verifier
