#include "vqasynth/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "vqasynth/journal.hpp"
#include "vqasynth/text.hpp"

namespace vqasynth::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

json FunnelCounts::to_json() const {
  return json{{"ingested", ingested},   {"prefiltered", prefiltered}, {"generated", generated},
              {"gradable", gradable},   {"gate_passed", gate_passed}, {"accepted", accepted}};
}

const char* to_string(Status s) {
  switch (s) {
    case Status::Pending: return "pending";
    case Status::Generated: return "generated";
    case Status::Verified: return "verified";
    case Status::Accepted: return "accepted";
    case Status::Rejected: return "rejected";
    case Status::Failed: return "failed";
  }
  return "unknown";
}

static Status status_from_string(const std::string& s) {
  for (Status st : {Status::Pending, Status::Generated, Status::Verified, Status::Accepted, Status::Rejected,
                    Status::Failed})
    if (s == to_string(st)) return st;
  throw JournalError("unknown status in journal: " + s);
}

llm::TokenUsage RecordState::usage() const {
  llm::TokenUsage u;
  if (generation) u += generation->usage;
  for (const auto& s : stages) u += s.usage;
  return u;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& why) { throw PipelineError(PipelineErrorKind::Invalid, why); };
  if (manifest_path.empty()) fail("manifest path is required");
  if (out_dir.empty()) fail("output directory is required");
  if (max_in_flight < 1) fail("max_in_flight must be >= 1");
  if (max_total_tokens < 0) fail("max_total_tokens must be >= 0");
  if (manifest_options.max_images < 1) fail("max_images must be >= 1");
  if (manifest_options.format != "jsonl") fail("unsupported manifest format: " + manifest_options.format);
  if (generation.archetypes.empty()) fail("at least one question archetype is required");
  rubric.validate();
  taxonomy.validate();
}

namespace {

json usage_json(const llm::TokenUsage& u) {
  return {{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
}

llm::TokenUsage usage_from_json(const json& j) {
  return {j.value("prompt_tokens", std::int64_t{0}), j.value("completion_tokens", std::int64_t{0})};
}

generator::Provenance provenance_from_json(const json& p) {
  return {p.value("model_id", ""), p.value("prompt_hash", ""), p.value("template_version", ""),
          p.value("timestamp", "")};
}

std::string sha_of(const json& j) { return text::sha256_hex(j.dump()); }

std::string now(const PipelineConfig& c) { return c.clock ? c.clock() : std::string{}; }

json generation_event(const generator::GenerationOutcome& g) {
  return {{"type", "generation"},
          {"record_id", g.record_id},
          {"raw_output", g.raw_output},
          {"provenance", g.provenance.to_json()},
          {"usage", usage_json(g.usage)}};
}

json stage_event(const std::string& id, const verifier::StageResult& s) {
  return {{"type", "stage"}, {"record_id", id}, {"result", s.to_json()}};
}

json terminal_event(const RecordState& st) {
  json j{{"type", "terminal"}, {"record_id", st.record.record_id}, {"status", to_string(st.status)}};
  if (!st.failure.empty()) j["failure"] = st.failure;
  return j;
}

json failure_event(const RecordState& st) {
  return {{"type", "failure"}, {"record_id", st.record.record_id}, {"failure", st.failure}, {"retryable", true}};
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string data;
  for (const auto& l : lines) data += l + '\n';
  text::write_file_atomic(path.string(), data);
}

// Decision for a record whose generation and stages are all recorded.
void settle(RecordState& st, const rubric::RubricConfig& config) {
  if (!st.generation->item) {
    st.status = Status::Rejected;
    st.decision = rubric::Decision{false, 0, rubric::RejectCause::Ungradable};
    return;
  }
  auto v = verifier::decide(st.stages, config, *st.generation->item);
  st.decision = v.decision;
  st.status = v.decision.accepted ? Status::Accepted : Status::Rejected;
}

bool verification_complete(const RecordState& st, const rubric::RubricConfig& config) {
  if (!st.generation) return false;
  if (!st.generation->item) return true;
  return !verifier::next_stage(st.stages, config).has_value();
}

void replay(std::vector<RecordState>& states, const std::vector<json>& events, const PipelineConfig& config) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < states.size(); ++i) index[states[i].record.record_id] = i;
  for (const auto& e : events) {
    auto it = index.find(e.value("record_id", ""));
    if (it == index.end()) throw JournalError("journal event for unknown record " + e.value("record_id", ""));
    RecordState& st = states[it->second];
    std::string type = e.value("type", "");
    if (type == "generation") {
      st.generation = generator::make_outcome(st.record, e.at("raw_output").get<std::string>(),
                                              provenance_from_json(e.at("provenance")),
                                              usage_from_json(e.at("usage")));
      st.stages.clear();
      st.status = Status::Generated;
      st.failure.clear();
      st.retryable = false;
    } else if (type == "stage") {
      st.stages.push_back(verifier::StageResult::from_json(e.at("result"), config.rubric));
      st.status = Status::Generated;
      st.failure.clear();
      st.retryable = false;
    } else if (type == "failure") {
      st.status = Status::Failed;
      st.failure = e.value("failure", "");
      st.retryable = true;
    } else if (type == "terminal") {
      Status s = status_from_string(e.at("status").get<std::string>());
      st.failure = e.value("failure", "");
      st.retryable = false;
      if (s == Status::Failed) {
        st.status = Status::Failed;
      } else {
        // Decisions are recomputed from the recorded verdicts.
        settle(st, config.rubric);
        if (st.status != s) throw JournalError("journal decision disagrees for " + st.record.record_id);
      }
    } else {
      throw JournalError("unknown journal event type: " + type);
    }
  }
}

std::vector<json> compacted_events(const std::vector<RecordState>& states) {
  std::vector<json> out;
  for (const auto& st : states) {
    if (st.generation) out.push_back(generation_event(*st.generation));
    for (const auto& s : st.stages) out.push_back(stage_event(st.record.record_id, s));
    if (st.terminal()) out.push_back(terminal_event(st));
    else if (st.status == Status::Failed && st.retryable) out.push_back(failure_event(st));
  }
  return out;
}

FunnelCounts funnel_of(const std::vector<RecordState>& states, std::size_t ingested,
                       const rubric::RubricConfig& config) {
  FunnelCounts f;
  f.ingested = ingested;
  f.prefiltered = states.size();
  for (const auto& st : states) {
    if (!st.generation) continue;
    ++f.generated;
    if (!st.generation->item || st.stages.empty() || !st.stages[0].gradable()) continue;
    ++f.gradable;
    if (!rubric::essential_gate(*st.stages[0].sheet, config).passed) continue;
    ++f.gate_passed;
    if (st.status == Status::Accepted) ++f.accepted;
  }
  return f;
}

dataset::AcceptedRecord accepted_record(const RecordState& st, const rubric::RubricConfig& config) {
  dataset::AcceptedRecord a;
  a.record_id = st.record.record_id;
  a.item = *st.generation->item;
  a.image_refs = st.record.image_refs;
  a.source_doc_id = st.record.source_doc_id;
  a.primary_label = st.record.primary_label;
  a.secondary_labels = st.record.secondary_labels;
  auto v = verifier::decide(st.stages, config, a.item);
  a.score = rubric::format_decimal(v.score->value, 4);
  json stage_prompts = json::array();
  for (const auto& s : st.stages) stage_prompts.push_back(s.provenance.prompt_hash);
  a.provenance = {{"generator", st.generation->provenance.to_json()},
                  {"verifier_model", st.stages.front().provenance.model_id},
                  {"verifier_templates", {st.stages[0].provenance.template_version,
                                          st.stages[1].provenance.template_version,
                                          st.stages[2].provenance.template_version}},
                  {"verifier_prompt_hashes", stage_prompts}};
  return a;
}

struct Session {
  const PipelineConfig& config;
  Backends& backends;
  Journal& journal;
  std::atomic<std::int64_t> tokens{0};
  std::atomic<std::size_t> terminated{0};
  std::atomic<std::size_t> calls{0};
  std::atomic<bool> stop{false};
  std::atomic<bool> budget_hit{false};

  void charge(const llm::TokenUsage& u) {
    ++calls;
    auto total = tokens += u.total();
    if (config.max_total_tokens > 0 && total >= config.max_total_tokens) {
      budget_hit = true;
      stop = true;
    }
  }

  void finish(RecordState& st) {
    journal.append(terminal_event(st));
    auto n = ++terminated;
    if (config.stop_after > 0 && n >= config.stop_after) stop = true;
  }

  void process(RecordState& st) {
    const auto& rubric = config.rubric;
    try {
      if (!st.generation) {
        auto params = generator::ModelParams::from_profile(backends.generator.profile());
        auto req = generator::build_generation_prompt(st.record, rubric, config.generation, config.prompts,
                                                      backends.store, params);
        generator::Provenance prov{req.model_id, req.hash(), config.prompts.generation.version, now(config)};
        auto resp = backends.generator.complete(req);
        auto outcome = generator::make_outcome(st.record, resp.text, std::move(prov), resp.usage);
        journal.append(generation_event(outcome));
        charge(resp.usage);
        st.generation = std::move(outcome);
        st.status = Status::Generated;
        st.failure.clear();
        st.retryable = false;
      }
      if (st.generation->item) {
        while (auto stage = verifier::next_stage(st.stages, rubric)) {
          if (stop) return;
          auto r = verifier::run_stage(st.record, *st.generation->item, *stage, backends.verifier, rubric,
                                       config.prompts, backends.store, now(config));
          journal.append(stage_event(st.record.record_id, r));
          charge(r.usage);
          st.stages.push_back(std::move(r));
          st.status = Status::Generated;
          st.failure.clear();
          st.retryable = false;
        }
        st.status = Status::Verified;
      }
      settle(st, rubric);
      finish(st);
    } catch (const ImageFetchFailure& e) {
      st.status = Status::Failed;
      st.retryable = false;
      st.failure = std::string("image_fetch: ") + e.what();
      finish(st);
    } catch (const llm::GatewayError& e) {
      st.status = Status::Failed;
      st.failure = std::string(llm::to_string(e.kind())) + ": " + e.what();
      if (e.retryable()) {
        st.retryable = true;
        journal.append(failure_event(st));
      } else {
        st.retryable = false;
        finish(st);
      }
    }
  }
};

RunResult execute(std::vector<RecordState>& states, std::size_t ingested, const PipelineConfig& config,
                  Backends& backends, Journal& journal, const json& header) {
  Session session{config, backends, journal};
  llm::TokenUsage prior;
  for (const auto& st : states) prior += st.usage();
  session.tokens = prior.total();
  if (config.max_total_tokens > 0 && prior.total() >= config.max_total_tokens) {
    session.stop = true;
    session.budget_hit = true;
  }

  std::vector<std::size_t> work;
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto& st = states[i];
    if (st.terminal()) continue;
    if (verification_complete(st, config.rubric)) {
      // Every verdict is on record; the decision needs no backend call.
      st.failure.clear();
      st.retryable = false;
      settle(st, config.rubric);
      session.finish(st);
      continue;
    }
    work.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      if (session.stop) return;
      std::size_t k = next++;
      if (k >= work.size()) return;
      session.process(states[work[k]]);
    }
  };
  std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight), work.size());
  {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  }

  RunResult result;
  result.funnel = funnel_of(states, ingested, config.rubric);
  result.budget_exhausted = session.budget_hit;
  result.backend_calls = session.calls;
  std::vector<std::string> accepted_lines, audit_lines;
  std::vector<std::size_t> order(states.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return states[a].record.record_id < states[b].record.record_id;
  });
  for (std::size_t i : order) {
    const auto& st = states[i];
    result.usage += st.usage();
    if (st.terminal()) {
      ++result.terminal;
      audit_lines.push_back(audit_record(st, config.rubric).dump());
    } else if (st.status == Status::Failed) {
      ++result.retryable_failures;
    } else {
      ++result.pending;
    }
    if (st.status == Status::Accepted) {
      result.accepted.push_back(accepted_record(st, config.rubric));
      accepted_lines.push_back(result.accepted.back().to_line());
    }
  }
  write_lines(config.out_dir / kAcceptedFile, accepted_lines);
  write_lines(config.out_dir / kAuditFile, audit_lines);
  text::write_file_atomic((config.out_dir / kFunnelFile).string(), result.funnel.to_json().dump(2) + "\n");
  journal.compact(header, compacted_events(states));
  return result;
}

std::vector<RecordState> initial_states(const IngestResult& ing) {
  std::vector<RecordState> states;
  states.reserve(ing.kept.size());
  for (const auto& r : ing.kept) {
    RecordState st;
    st.record = r;
    states.push_back(std::move(st));
  }
  return states;
}

} // namespace

json config_hashes(const PipelineConfig& config, const Backends& backends) {
  std::string manifest;
  try {
    manifest = text::read_file(config.manifest_path);
  } catch (const std::exception&) {
    throw PipelineError(PipelineErrorKind::Invalid, "cannot read manifest " + config.manifest_path);
  }
  return json{{"rubric", config.rubric.hash()},
              {"prompts", config.prompts.hash()},
              {"generator_backend", sha_of(backends.generator.profile().public_json())},
              {"verifier_backend", sha_of(backends.verifier.profile().public_json())},
              {"generation", sha_of({{"archetypes", config.generation.archetypes},
                                     {"modality_note", config.generation.modality_note}})},
              {"taxonomy", sha_of(config.taxonomy.to_json())},
              {"manifest", text::sha256_hex(manifest)},
              {"max_images", config.manifest_options.max_images}};
}

IngestResult ingest(const PipelineConfig& config) {
  IngestResult r;
  auto load = corpus::load_manifest(config.manifest_path, config.manifest_options);
  r.rejects = std::move(load.rejects);
  r.funnel.ingested = load.records.size();
  auto pre = corpus::prefilter(std::move(load.records), config.taxonomy);
  r.kept = std::move(pre.kept);
  r.dropped = std::move(pre.dropped);
  r.funnel.prefiltered = r.kept.size();
  return r;
}

void write_ingest_outputs(const IngestResult& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> rejects, dropped;
  for (const auto& x : r.rejects) rejects.push_back(x.to_json().dump());
  for (const auto& x : r.dropped) dropped.push_back(corpus::to_json(x).dump());
  write_lines(out_dir / kRejectsFile, rejects);
  write_lines(out_dir / kDroppedFile, dropped);
}

RunResult run(const PipelineConfig& config, Backends backends) {
  config.validate();
  fs::path journal_path = config.out_dir / kJournalFile;
  if (fs::exists(journal_path))
    throw PipelineError(PipelineErrorKind::RunExists, "a run already exists in " + config.out_dir.string());
  json hashes = config_hashes(config, backends);
  IngestResult ing = ingest(config);
  write_ingest_outputs(ing, config.out_dir);
  json header{{"run_id", sha_of(hashes).substr(0, 16)}, {"config", hashes}, {"created_at", now(config)}};
  Journal journal = Journal::create(journal_path, header);
  auto states = initial_states(ing);
  return execute(states, ing.funnel.ingested, config, backends, journal, header);
}

RunResult resume(const PipelineConfig& config, Backends backends) {
  config.validate();
  fs::path journal_path = config.out_dir / kJournalFile;
  if (!fs::exists(journal_path))
    throw PipelineError(PipelineErrorKind::NoRun, "no run to resume in " + config.out_dir.string());
  json hashes = config_hashes(config, backends);
  JournalContents contents = Journal::read(journal_path);
  const json& pinned = contents.header.at("config");
  std::vector<std::string> drift;
  for (auto it = hashes.begin(); it != hashes.end(); ++it)
    if (!pinned.contains(it.key()) || pinned.at(it.key()) != it.value()) drift.push_back(it.key());
  if (!drift.empty()) {
    std::string keys;
    for (const auto& k : drift) keys += (keys.empty() ? "" : ", ") + k;
    throw PipelineError(PipelineErrorKind::ConfigDrift, "configuration changed since the run started: " + keys);
  }
  Journal journal = Journal::open(journal_path, contents);
  IngestResult ing = ingest(config);
  auto states = initial_states(ing);
  replay(states, contents.events, config);
  return execute(states, ing.funnel.ingested, config, backends, journal, contents.header);
}

json audit_record(const RecordState& st, const rubric::RubricConfig& config) {
  json j{{"record_id", st.record.record_id},
         {"status", to_string(st.status)},
         {"primary_label", st.record.primary_label},
         {"secondary_labels", st.record.secondary_labels},
         {"usage", usage_json(st.usage())}};
  if (!st.failure.empty()) j["failure"] = st.failure;
  if (st.generation) {
    j["generation"] = {{"provenance", st.generation->provenance.to_json()}, {"raw_output", st.generation->raw_output}};
    if (st.generation->item) j["item"] = json::parse(schema::serialize_canonical(*st.generation->item));
    if (st.generation->diagnostics) j["generation"]["diagnostics"] = st.generation->diagnostics->to_json();
  }
  json stages = json::array();
  for (const auto& s : st.stages) stages.push_back(s.to_json());
  j["stages"] = stages;
  if (st.decision) {
    j["decision"] = {{"accepted", st.decision->accepted},
                     {"stage", st.decision->stage},
                     {"cause", st.decision->accepted ? json(nullptr) : json(rubric::to_string(st.decision->cause))}};
  }
  if (st.generation && st.generation->item && !verifier::next_stage(st.stages, config)) {
    auto v = verifier::decide(st.stages, config, *st.generation->item);
    j["lint_terms"] = v.lint_terms;
    if (v.gate) j["gate_failed"] = v.gate->failed_ids;
    if (v.score) {
      j["score"] = {{"raw_numerator", v.score->raw_numerator},
                    {"denominator", v.score->denominator},
                    {"value", rubric::format_decimal(v.score->value, 4)},
                    {"exact", std::to_string(v.score->value.numerator()) + "/" +
                                  std::to_string(v.score->value.denominator())}};
    }
  }
  return j;
}

} // namespace vqasynth::pipeline
