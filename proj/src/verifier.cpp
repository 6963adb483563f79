#include "vqasynth/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "vqasynth/text.hpp"

namespace vqasynth::verifier {

using nlohmann::json;

const char* to_string(VerdictViolation v) {
  switch (v) {
    case VerdictViolation::NoJsonObject: return "NoJsonObject";
    case VerdictViolation::MissingCriteria: return "MissingCriteria";
    case VerdictViolation::WrongType: return "WrongType";
    case VerdictViolation::MissingCriterion: return "MissingCriterion";
    case VerdictViolation::UnknownCriterion: return "UnknownCriterion";
    case VerdictViolation::DuplicateCriterion: return "DuplicateCriterion";
    case VerdictViolation::NonBinaryScore: return "NonBinaryScore";
    case VerdictViolation::MissingReason: return "MissingReason";
  }
  return "Unknown";
}

bool VerdictDiagnostics::has(VerdictViolation v) const {
  return std::any_of(violations.begin(), violations.end(), [v](const auto& p) { return p.first == v; });
}

json VerdictDiagnostics::to_json() const {
  json arr = json::array();
  for (const auto& [code, msg] : violations) arr.push_back({{"code", to_string(code)}, {"message", msg}});
  return arr;
}

std::string verdict_contract(int stage) {
  std::string score = stage == 1 ? "0 or 5" : stage == 2 ? "0 or the criterion weight" : "0 or the (negative) weight";
  std::string out = "{\"criteria\": [{\"id\": \"<criterion id>\", \"score\": <" + score +
                    ">, \"reason\": \"<short concrete justification>\"}, ...]";
  if (stage == 2) out += ", \"volunteered\": [optional free-form observations]";
  return out + "}";
}

llm::ChatRequest build_verifier_prompt(const corpus::FigureRecord& record, const schema::McvqaItem& item, int stage,
                                       const rubric::RubricConfig& config, const prompt::PromptSet& prompts,
                                       const ContentStore& store, const generator::ModelParams& params) {
  const auto& criteria = config.stage_criteria(stage);
  const auto& tmpl = prompts.verify_stage(stage);
  prompt::Vars vars{{"criteria", generator::render_criteria_list(criteria, true)},
                    {"verdict_contract", verdict_contract(stage)},
                    {"caption", record.caption},
                    {"references", generator::render_references(record.references)},
                    {"item_json", schema::serialize_canonical(item)}};
  prompt::Flags flags{{"has_references", !record.references.empty()}};

  llm::ChatRequest req;
  req.model_id = params.model_id;
  req.temperature = params.temperature;
  req.max_output_tokens = params.max_output_tokens;
  req.request_tag = record.record_id + "/verify" + std::to_string(stage);
  req.messages.push_back({"system", {llm::TextPart{prompt::render(tmpl.system, vars, flags)}}});
  llm::Message user{"user", {}};
  for (const auto& ref : record.image_refs) {
    Blob b = store.require(ref);
    user.parts.emplace_back(llm::ImagePart{b.media_type, std::move(b.bytes)});
  }
  user.parts.emplace_back(llm::TextPart{prompt::render(tmpl.user, vars, flags)});
  req.messages.push_back(std::move(user));
  return req;
}

namespace {

std::optional<std::int64_t> integral_score(const json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d)) return static_cast<std::int64_t>(d);
  }
  return std::nullopt;
}

} // namespace

VerdictResult parse_verdict(const std::string& raw, int stage, const rubric::RubricConfig& config) {
  const auto& criteria = config.stage_criteria(stage);
  VerdictDiagnostics diag;
  auto add = [&](VerdictViolation v, std::string msg) { diag.violations.emplace_back(v, std::move(msg)); };

  auto extracted = schema::extract_json_object(raw);
  if (!extracted) {
    add(VerdictViolation::NoJsonObject, "no parseable JSON object in verifier output");
    return diag;
  }
  json obj = json::parse(*extracted);
  if (!obj.contains("criteria")) {
    add(VerdictViolation::MissingCriteria, "missing \"criteria\"");
    return diag;
  }
  if (!obj["criteria"].is_array()) {
    add(VerdictViolation::WrongType, "\"criteria\" must be an array");
    return diag;
  }

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < criteria.size(); ++i) index.emplace(criteria[i].id, i);
  std::vector<std::optional<rubric::VerdictEntry>> slots(criteria.size());
  std::vector<bool> seen(criteria.size(), false);

  for (const auto& e : obj["criteria"]) {
    if (!e.is_object() || !e.contains("id") || !e["id"].is_string()) {
      add(VerdictViolation::WrongType, "criterion entry needs a string \"id\"");
      continue;
    }
    std::string id = e["id"].get<std::string>();
    auto it = index.find(id);
    if (it == index.end()) {
      add(VerdictViolation::UnknownCriterion, "criterion " + id + " is not configured for stage " + std::to_string(stage));
      continue;
    }
    const auto& c = criteria[it->second];
    if (seen[it->second]) {
      add(VerdictViolation::DuplicateCriterion, "criterion " + id + " appears more than once");
      continue;
    }
    seen[it->second] = true;
    std::optional<std::int64_t> score = e.contains("score") ? integral_score(e["score"]) : std::nullopt;
    if (!score || (*score != 0 && *score != c.weight)) {
      add(VerdictViolation::NonBinaryScore, "criterion " + id + " score must be 0 or " + std::to_string(c.weight) +
                                                (e.contains("score") ? ", got " + e["score"].dump() : ", got none"));
      continue;
    }
    std::string reason;
    if (e.contains("reason")) {
      if (!e["reason"].is_string()) {
        add(VerdictViolation::WrongType, "criterion " + id + " reason must be a string");
        continue;
      }
      reason = text::trim(e["reason"].get<std::string>());
    }
    bool awarded = *score == c.weight;
    if (stage == 3 && awarded && reason.empty()) {
      add(VerdictViolation::MissingReason, "triggered penalty " + id + " lacks a concrete reason");
      continue;
    }
    slots[it->second] = rubric::VerdictEntry{id, awarded, static_cast<int>(*score), reason};
  }
  for (std::size_t i = 0; i < criteria.size(); ++i)
    if (!seen[i]) add(VerdictViolation::MissingCriterion, "criterion " + criteria[i].id + " is missing");
  if (!diag.violations.empty()) return diag;

  rubric::VerdictSheet sheet;
  sheet.stage = stage;
  for (auto& s : slots) sheet.entries.push_back(std::move(*s));
  if (obj.contains("volunteered")) sheet.volunteered = obj["volunteered"];
  return sheet;
}

json StageResult::to_json() const {
  json j{{"stage", stage},
         {"raw_output", raw_output},
         {"provenance", provenance.to_json()},
         {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}},
         {"gradable", gradable()}};
  if (sheet) j["sheet"] = sheet->to_json();
  if (diagnostics) j["diagnostics"] = diagnostics->to_json();
  return j;
}

StageResult make_stage_result(int stage, std::string raw, generator::Provenance provenance, llm::TokenUsage usage,
                              const rubric::RubricConfig& config) {
  StageResult r;
  r.stage = stage;
  r.provenance = std::move(provenance);
  r.usage = usage;
  auto parsed = parse_verdict(raw, stage, config);
  if (auto* s = std::get_if<rubric::VerdictSheet>(&parsed))
    r.sheet = std::move(*s);
  else
    r.diagnostics = std::get<VerdictDiagnostics>(std::move(parsed));
  r.raw_output = std::move(raw);
  return r;
}

StageResult StageResult::from_json(const json& j, const rubric::RubricConfig& config) {
  const auto& p = j.at("provenance");
  generator::Provenance prov{p.value("model_id", ""), p.value("prompt_hash", ""), p.value("template_version", ""),
                             p.value("timestamp", "")};
  llm::TokenUsage usage{j.at("usage").value("prompt_tokens", std::int64_t{0}),
                        j.at("usage").value("completion_tokens", std::int64_t{0})};
  return make_stage_result(j.at("stage").get<int>(), j.at("raw_output").get<std::string>(), std::move(prov), usage,
                           config);
}

StageResult run_stage(const corpus::FigureRecord& record, const schema::McvqaItem& item, int stage,
                      llm::Gateway& gateway, const rubric::RubricConfig& config, const prompt::PromptSet& prompts,
                      const ContentStore& store, const std::string& timestamp) {
  auto req = build_verifier_prompt(record, item, stage, config, prompts, store,
                                   generator::ModelParams::from_profile(gateway.profile()));
  generator::Provenance prov{req.model_id, req.hash(), prompts.verify_stage(stage).version, timestamp};
  auto resp = gateway.complete(req);
  return make_stage_result(stage, std::move(resp.text), std::move(prov), resp.usage, config);
}

std::vector<std::string> forbidden_terms_lint(const std::string& stem) {
  std::vector<std::string> found;
  for (const char* term : {"caption", "context"})
    if (text::contains_ci(stem, term)) found.emplace_back(term);
  return found;
}

std::optional<int> next_stage(const std::vector<StageResult>& stages, const rubric::RubricConfig& config) {
  if (stages.empty()) return 1;
  if (!stages.back().gradable()) return std::nullopt;
  if (stages.size() == 1 && !rubric::essential_gate(*stages[0].sheet, config).passed) return std::nullopt;
  if (stages.size() < 3) return static_cast<int>(stages.size()) + 1;
  return std::nullopt;
}

VerificationResult decide(const std::vector<StageResult>& stages, const rubric::RubricConfig& config,
                          const schema::McvqaItem& item) {
  if (next_stage(stages, config)) throw std::logic_error("verification is not complete");
  VerificationResult r;
  r.stages = stages;
  r.lint_terms = forbidden_terms_lint(item.stem);

  const StageResult& s1 = stages[0];
  if (!s1.gradable()) {
    r.decision = {false, 1, rubric::RejectCause::Ungradable};
    return r;
  }
  r.gate = rubric::essential_gate(*s1.sheet, config);
  if (!r.gate->passed) {
    r.decision = rubric::accept(*r.gate, std::nullopt);
    return r;
  }
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (!stages[i].gradable()) {
      r.decision = {false, stages[i].stage, rubric::RejectCause::Ungradable};
      return r;
    }
  }
  r.score = rubric::aggregate_score(*stages[1].sheet, *stages[2].sheet, config);
  r.decision = rubric::accept(*r.gate, r.score);
  return r;
}

VerificationResult verify_item(const corpus::FigureRecord& record, const schema::McvqaItem& item,
                               llm::Gateway& gateway, const rubric::RubricConfig& config,
                               const prompt::PromptSet& prompts, const ContentStore& store,
                               const std::string& timestamp) {
  std::vector<StageResult> stages;
  while (auto stage = next_stage(stages, config))
    stages.push_back(run_stage(record, item, *stage, gateway, config, prompts, store, timestamp));
  return decide(stages, config, item);
}

} // namespace vqasynth::verifier
