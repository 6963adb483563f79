#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqasynth/content_store.hpp"
#include "vqasynth/corpus.hpp"
#include "vqasynth/dataset.hpp"
#include "vqasynth/generator.hpp"
#include "vqasynth/llm.hpp"
#include "vqasynth/prompt.hpp"
#include "vqasynth/rubric.hpp"
#include "vqasynth/verifier.hpp"

namespace vqasynth::pipeline {

struct FunnelCounts {
  std::size_t ingested = 0;
  std::size_t prefiltered = 0;
  std::size_t generated = 0;
  std::size_t gradable = 0;
  std::size_t gate_passed = 0;
  std::size_t accepted = 0;

  bool monotone() const {
    return ingested >= prefiltered && prefiltered >= generated && generated >= gradable &&
           gradable >= gate_passed && gate_passed >= accepted;
  }
  bool operator==(const FunnelCounts&) const = default;
  nlohmann::json to_json() const;
};

enum class Status { Pending, Generated, Verified, Accepted, Rejected, Failed };

const char* to_string(Status s);

struct RecordState {
  corpus::FigureRecord record;
  Status status = Status::Pending;
  std::optional<generator::GenerationOutcome> generation;
  std::vector<verifier::StageResult> stages;
  std::optional<rubric::Decision> decision;
  std::string failure;     // set when status is Failed or a retryable failure occurred
  bool retryable = false;  // Failed but may be retried by resume

  bool terminal() const {
    return status == Status::Accepted || status == Status::Rejected || (status == Status::Failed && !retryable);
  }
  llm::TokenUsage usage() const;
};

enum class PipelineErrorKind { ConfigDrift, RunExists, NoRun, Invalid };

struct PipelineError : std::runtime_error {
  PipelineErrorKind kind;
  PipelineError(PipelineErrorKind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

struct PipelineConfig {
  std::string manifest_path;
  corpus::ManifestOptions manifest_options;
  corpus::TaxonomyFilter taxonomy = corpus::TaxonomyFilter::defaults();
  rubric::RubricConfig rubric = rubric::RubricConfig::defaults();
  prompt::PromptSet prompts = prompt::PromptSet::builtin();
  generator::GenerationOptions generation;
  std::filesystem::path out_dir;
  int max_in_flight = 8;             // records processed concurrently
  std::int64_t max_total_tokens = 0; // 0 disables the budget
  std::size_t stop_after = 0;        // pause after this many records terminate in one session
  std::function<std::string()> clock;  // provenance timestamps; empty string when unset

  void validate() const;
};

struct Backends {
  llm::Gateway& generator;
  llm::Gateway& verifier;
  const ContentStore& store;
};

// Provenance hashes pinned in the journal header; resume refuses on drift.
nlohmann::json config_hashes(const PipelineConfig& config, const Backends& backends);

struct IngestResult {
  std::vector<corpus::FigureRecord> kept;
  std::vector<corpus::FigureRecord> dropped;
  std::vector<corpus::Reject> rejects;
  FunnelCounts funnel;  // ingested and prefiltered only
};

IngestResult ingest(const PipelineConfig& config);
void write_ingest_outputs(const IngestResult& r, const std::filesystem::path& out_dir);

struct RunResult {
  FunnelCounts funnel;
  std::vector<dataset::AcceptedRecord> accepted;
  std::size_t terminal = 0;
  std::size_t retryable_failures = 0;
  std::size_t pending = 0;
  bool budget_exhausted = false;
  llm::TokenUsage usage;
  std::size_t backend_calls = 0;  // issued during this session

  bool complete() const { return pending == 0 && retryable_failures == 0; }
};

// Fresh run into config.out_dir; refuses if a journal already exists there.
RunResult run(const PipelineConfig& config, Backends backends);
// Continues the journal in config.out_dir. Records already terminal are not
// sent to any backend again.
RunResult resume(const PipelineConfig& config, Backends backends);

// Output files inside out_dir.
inline constexpr const char* kJournalFile = "journal.jsonl";
inline constexpr const char* kAcceptedFile = "accepted.jsonl";
inline constexpr const char* kAuditFile = "audit.jsonl";
inline constexpr const char* kFunnelFile = "funnel.json";
inline constexpr const char* kRejectsFile = "rejects.jsonl";
inline constexpr const char* kDroppedFile = "prefilter_dropped.jsonl";

nlohmann::json audit_record(const RecordState& state, const rubric::RubricConfig& config);

} // namespace vqasynth::pipeline
