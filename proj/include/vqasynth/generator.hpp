#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vqasynth/content_store.hpp"
#include "vqasynth/corpus.hpp"
#include "vqasynth/llm.hpp"
#include "vqasynth/prompt.hpp"
#include "vqasynth/rubric.hpp"
#include "vqasynth/schema.hpp"

namespace vqasynth::generator {

std::vector<std::string> default_archetypes();

// Model parameters copied into every request.
struct ModelParams {
  std::string model_id;
  double temperature = 0.0;
  int max_output_tokens = 2048;

  static ModelParams from_profile(const llm::BackendProfile& p) {
    return {p.model_id, p.temperature, p.max_output_tokens};
  }
};

struct GenerationOptions {
  std::vector<std::string> archetypes = default_archetypes();
  // Adds the record's primary label as a category note. Off by default so
  // taxonomy labels never reach the prompt.
  bool modality_note = false;
};

struct Provenance {
  std::string model_id;
  std::string prompt_hash;  // canonical request hash
  std::string template_version;
  std::string timestamp;

  nlohmann::json to_json() const;
};

struct GenerationOutcome {
  std::string record_id;
  std::string raw_output;
  std::optional<schema::McvqaItem> item;
  std::optional<schema::ParseDiagnostics> diagnostics;
  Provenance provenance;
  llm::TokenUsage usage;
};

// Text blocks shared by generation and verification prompts.
std::string render_criteria_list(const std::vector<rubric::Criterion>& criteria, bool with_weights);
std::string render_references(const std::vector<std::string>& refs);
std::string output_contract();

// System message, then a user message with every image (manifest order)
// followed by the text context. Throws ImageFetchFailure.
llm::ChatRequest build_generation_prompt(const corpus::FigureRecord& record, const rubric::RubricConfig& config,
                                         const GenerationOptions& options, const prompt::PromptSet& prompts,
                                         const ContentStore& store, const ModelParams& params);

// Parses a raw model reply into an outcome (item or diagnostics).
GenerationOutcome make_outcome(const corpus::FigureRecord& record, std::string raw_output, Provenance provenance,
                               llm::TokenUsage usage = {});

// One generation call; transport errors propagate as llm::GatewayError.
GenerationOutcome generate_item(const corpus::FigureRecord& record, llm::Gateway& gateway,
                                const rubric::RubricConfig& config, const GenerationOptions& options,
                                const prompt::PromptSet& prompts, const ContentStore& store,
                                const std::string& timestamp = {});

enum class TraceStatus { Agrees, Mismatched, UnparseableAnswer };

const char* to_string(TraceStatus s);

struct TraceOutcome {
  std::string record_id;
  std::string trace_text;
  std::optional<char> answer_echo;
  TraceStatus status = TraceStatus::UnparseableAnswer;
  Provenance provenance;
};

// Final answer letter stated near the end of a reasoning trace.
std::optional<char> extract_final_answer(const std::string& trace);

llm::ChatRequest build_trace_prompt(const corpus::FigureRecord& record, const schema::McvqaItem& item,
                                    const prompt::PromptSet& prompts, const ContentStore& store,
                                    const ModelParams& params);

TraceOutcome classify_trace(const std::string& record_id, const schema::McvqaItem& item, std::string trace);

TraceOutcome elicit_trace(const corpus::FigureRecord& record, const schema::McvqaItem& item, llm::Gateway& gateway,
                          const prompt::PromptSet& prompts, const ContentStore& store);

} // namespace vqasynth::generator
