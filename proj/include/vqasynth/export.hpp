#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqasynth/content_store.hpp"
#include "vqasynth/dataset.hpp"
#include "vqasynth/generator.hpp"

namespace vqasynth::exporter {

enum class ExportErrorKind { DuplicateId, MissingImage, Io };

struct ExportError : std::runtime_error {
  ExportErrorKind kind;
  ExportError(ExportErrorKind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

inline constexpr const char* kMcvqaFile = "mcvqa.jsonl";
inline constexpr const char* kSftFile = "sft.jsonl";
inline constexpr const char* kRlvrFile = "rlvr.jsonl";
inline constexpr const char* kCardFile = "dataset_card.json";
inline constexpr const char* kTracesFile = "traces.jsonl";

nlohmann::json trace_to_json(const generator::TraceOutcome& t);
generator::TraceOutcome trace_from_json(const nlohmann::json& j);
std::map<std::string, generator::TraceOutcome> read_traces(const std::filesystem::path& path);
void append_traces(const std::filesystem::path& path, const std::vector<generator::TraceOutcome>& traces);

corpus::FigureRecord figure_of(const dataset::AcceptedRecord& r);

// One trace request per record; transport errors are collected, not thrown.
struct TraceBatch {
  std::vector<generator::TraceOutcome> traces;
  std::vector<std::pair<std::string, std::string>> failures;  // record_id, error
};

TraceBatch elicit_traces(const std::vector<dataset::AcceptedRecord>& records, llm::Gateway& gateway,
                         const prompt::PromptSet& prompts, const ContentStore& store, int workers = 8);

// Throws ExportError(DuplicateId).
void check_unique(const std::vector<dataset::AcceptedRecord>& records);

std::string sft_line(const dataset::AcceptedRecord& r, const generator::TraceOutcome& trace,
                     const std::vector<std::string>& images);
std::string rlvr_line(const dataset::AcceptedRecord& r, const std::vector<std::string>& images);

struct ExportOptions {
  std::filesystem::path out_dir;
  // Copies image bytes into out_dir/images and references the copies.
  bool bundle_images = false;
  const ContentStore* store = nullptr;  // required when bundling
  nlohmann::json run_id = nullptr;
  nlohmann::json funnel = nullptr;
  nlohmann::json config_hashes = nullptr;
  std::string created_at;
  std::size_t decontaminated = 0;
};

struct ExportSummary {
  std::size_t mcvqa = 0;
  std::size_t sft = 0;
  std::size_t sft_skipped = 0;  // trace attempted but mismatched or unparseable
  std::size_t rlvr = 0;
  std::size_t bundled_images = 0;
  nlohmann::json card;
};

// Writes mcvqa.jsonl, sft.jsonl, rlvr.jsonl and dataset_card.json, ordered
// by record_id.
ExportSummary export_dataset(std::vector<dataset::AcceptedRecord> records,
                             const std::map<std::string, generator::TraceOutcome>& traces,
                             const ExportOptions& options);

} // namespace vqasynth::exporter
