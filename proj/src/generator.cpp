#include "vqasynth/generator.hpp"

#include <regex>

namespace vqasynth::generator {

using nlohmann::json;

std::vector<std::string> default_archetypes() {
  return {"finding identification", "diagnosis", "next step", "localization", "modality recognition"};
}

json Provenance::to_json() const {
  return json{{"model_id", model_id}, {"prompt_hash", prompt_hash}, {"template_version", template_version},
              {"timestamp", timestamp}};
}

std::string render_criteria_list(const std::vector<rubric::Criterion>& criteria, bool with_weights) {
  std::string out;
  for (const auto& c : criteria) {
    if (!out.empty()) out += '\n';
    out += "- ";
    if (with_weights) out += "[" + c.id + "] ";
    out += c.name;
    if (with_weights) {
      if (c.tier == rubric::Tier::Penalty)
        out += " (weight " + std::to_string(c.weight) + "; score 0 or " + std::to_string(c.weight) + ")";
      else
        out += " (score 0 or " + std::to_string(c.weight) + ")";
    }
    if (!c.description.empty()) out += ": " + c.description;
  }
  return out;
}

std::string render_references(const std::vector<std::string>& refs) {
  std::string out;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (i) out += '\n';
    out += "[" + std::to_string(i + 1) + "] " + refs[i];
  }
  return out;
}

std::string output_contract() {
  return "Return exactly one JSON object with exactly these keys and nothing else:\n"
         "{\"question\": \"<self-contained stem>\", \"options\": {\"A\": \"...\", \"B\": \"...\", \"C\": \"...\", "
         "\"D\": \"...\", \"E\": \"...\"}, \"answer\": \"<one of A, B, C, D, E>\"}\n"
         "The five options must be distinct and exactly one must be correct.";
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<rubric::Criterion> of_tier(const std::vector<rubric::Criterion>& cs, rubric::Tier t) {
  std::vector<rubric::Criterion> out;
  for (const auto& c : cs)
    if (c.tier == t) out.push_back(c);
  return out;
}

std::vector<llm::Part> image_parts(const corpus::FigureRecord& record, const ContentStore& store) {
  std::vector<llm::Part> parts;
  for (const auto& ref : record.image_refs) {
    Blob b = store.require(ref);
    parts.emplace_back(llm::ImagePart{b.media_type, std::move(b.bytes)});
  }
  return parts;
}

} // namespace

llm::ChatRequest build_generation_prompt(const corpus::FigureRecord& record, const rubric::RubricConfig& config,
                                         const GenerationOptions& options, const prompt::PromptSet& prompts,
                                         const ContentStore& store, const ModelParams& params) {
  if (options.archetypes.empty()) throw prompt::PromptError("archetype list is empty");
  auto important = of_tier(config.positives, rubric::Tier::Important);
  auto optional = of_tier(config.positives, rubric::Tier::Optional);

  prompt::Vars vars{{"essential_rubric", render_criteria_list(config.essentials, false)},
                    {"important_rubric", important.empty() ? "- (none)" : render_criteria_list(important, false)},
                    {"optional_rubric", optional.empty() ? "- (none)" : render_criteria_list(optional, false)},
                    {"archetypes", join(options.archetypes, ", ")},
                    {"output_contract", output_contract()},
                    {"modality", record.primary_label},
                    {"caption", record.caption},
                    {"references", render_references(record.references)}};
  prompt::Flags flags{{"has_references", !record.references.empty()}, {"modality_note", options.modality_note}};

  const auto& tmpl = prompts.generation;
  llm::ChatRequest req;
  req.model_id = params.model_id;
  req.temperature = params.temperature;
  req.max_output_tokens = params.max_output_tokens;
  req.request_tag = record.record_id + "/gen";
  req.messages.push_back({"system", {llm::TextPart{prompt::render(tmpl.system, vars, flags)}}});
  llm::Message user{"user", image_parts(record, store)};
  user.parts.emplace_back(llm::TextPart{prompt::render(tmpl.user, vars, flags)});
  req.messages.push_back(std::move(user));
  return req;
}

GenerationOutcome make_outcome(const corpus::FigureRecord& record, std::string raw_output, Provenance provenance,
                               llm::TokenUsage usage) {
  GenerationOutcome out;
  out.record_id = record.record_id;
  out.raw_output = std::move(raw_output);
  out.provenance = std::move(provenance);
  out.usage = usage;
  auto parsed = schema::parse_strict(out.raw_output);
  if (auto* item = std::get_if<schema::McvqaItem>(&parsed))
    out.item = std::move(*item);
  else
    out.diagnostics = std::get<schema::ParseDiagnostics>(std::move(parsed));
  return out;
}

GenerationOutcome generate_item(const corpus::FigureRecord& record, llm::Gateway& gateway,
                                const rubric::RubricConfig& config, const GenerationOptions& options,
                                const prompt::PromptSet& prompts, const ContentStore& store,
                                const std::string& timestamp) {
  auto req = build_generation_prompt(record, config, options, prompts, store, ModelParams::from_profile(gateway.profile()));
  Provenance prov{req.model_id, req.hash(), prompts.generation.version, timestamp};
  auto resp = gateway.complete(req);
  return make_outcome(record, std::move(resp.text), std::move(prov), resp.usage);
}

const char* to_string(TraceStatus s) {
  switch (s) {
    case TraceStatus::Agrees: return "agrees";
    case TraceStatus::Mismatched: return "mismatched";
    case TraceStatus::UnparseableAnswer: return "unparseable_answer";
  }
  return "unknown";
}

std::optional<char> extract_final_answer(const std::string& trace) {
  // Only the tail counts; earlier mentions are intermediate reasoning.
  constexpr std::size_t kTail = 400;
  std::string tail = trace.size() > kTail ? trace.substr(trace.size() - kTail) : trace;
  static const std::regex stated(R"([Aa][Nn][Ss][Ww][Ee][Rr](?:\s+is|\s*:|\s*=)?\s*(?:[Oo]ption\s*)?[\(\*\s]*([A-E])\b)");
  std::optional<char> found;
  for (auto it = std::sregex_iterator(tail.begin(), tail.end(), stated); it != std::sregex_iterator(); ++it)
    found = (*it)[1].str()[0];
  if (found) return found;

  // A last line that is just the letter, e.g. "(C)" or "C."
  auto last_nl = tail.find_last_not_of(" \t\r\n");
  if (last_nl == std::string::npos) return std::nullopt;
  auto line_start = tail.rfind('\n', last_nl);
  std::size_t start = line_start == std::string::npos ? 0 : line_start + 1;
  std::string last_line = tail.substr(start, last_nl + 1 - start);
  static const std::regex bare(R"(^\s*[\(\*]*([A-E])[\)\.\*]*\s*$)");
  std::smatch m;
  if (std::regex_match(last_line, m, bare)) return m[1].str()[0];
  return std::nullopt;
}

llm::ChatRequest build_trace_prompt(const corpus::FigureRecord& record, const schema::McvqaItem& item,
                                    const prompt::PromptSet& prompts, const ContentStore& store,
                                    const ModelParams& params) {
  prompt::Vars vars{{"question", schema::render_question(item)}};
  llm::ChatRequest req;
  req.model_id = params.model_id;
  req.temperature = params.temperature;
  req.max_output_tokens = params.max_output_tokens;
  req.request_tag = record.record_id + "/trace";
  req.messages.push_back({"system", {llm::TextPart{prompt::render(prompts.trace.system, vars)}}});
  llm::Message user{"user", image_parts(record, store)};
  user.parts.emplace_back(llm::TextPart{prompt::render(prompts.trace.user, vars)});
  req.messages.push_back(std::move(user));
  return req;
}

TraceOutcome classify_trace(const std::string& record_id, const schema::McvqaItem& item, std::string trace) {
  TraceOutcome out;
  out.record_id = record_id;
  out.answer_echo = extract_final_answer(trace);
  out.trace_text = std::move(trace);
  if (!out.answer_echo)
    out.status = TraceStatus::UnparseableAnswer;
  else
    out.status = *out.answer_echo == item.answer ? TraceStatus::Agrees : TraceStatus::Mismatched;
  return out;
}

TraceOutcome elicit_trace(const corpus::FigureRecord& record, const schema::McvqaItem& item, llm::Gateway& gateway,
                          const prompt::PromptSet& prompts, const ContentStore& store) {
  auto req = build_trace_prompt(record, item, prompts, store, ModelParams::from_profile(gateway.profile()));
  Provenance prov{req.model_id, req.hash(), prompts.trace.version, {}};
  auto resp = gateway.complete(req);
  auto out = classify_trace(record.record_id, item, std::move(resp.text));
  out.provenance = std::move(prov);
  return out;
}

} // namespace vqasynth::generator
