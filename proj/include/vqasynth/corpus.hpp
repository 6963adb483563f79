#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace vqasynth::corpus {

inline constexpr std::size_t kDefaultMaxImages = 6;

// One pre-filtered source sample: figure image(s), caption and the in-text
// passages that reference the figure.
struct FigureRecord {
  std::string record_id;
  std::vector<std::string> image_refs;
  std::string caption;
  std::vector<std::string> references;
  std::string primary_label;
  std::vector<std::string> secondary_labels;
  std::string source_doc_id;

  bool operator==(const FigureRecord&) const = default;
};

nlohmann::json to_json(const FigureRecord& r);

enum class RejectReason {
  MalformedJson,
  MissingField,
  WrongType,
  EmptyCaption,
  NoImages,
  TooManyImages,
  DuplicateId,
};

const char* to_string(RejectReason r);

struct Reject {
  std::size_t line = 0;
  RejectReason reason = RejectReason::MalformedJson;
  std::string detail;
  // The parsed line when it was valid JSON, otherwise {"raw": <line text>}.
  nlohmann::json original;

  nlohmann::json to_json() const;
};

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ManifestOptions {
  std::string format = "jsonl";
  std::size_t max_images = kDefaultMaxImages;
};

// Validates one manifest object. Does not check id uniqueness.
std::variant<FigureRecord, Reject> parse_record(const nlohmann::json& obj, std::size_t line,
                                                std::size_t max_images);

// Streams a JSONL manifest. Blank lines are skipped; everything else yields
// either a record or a reject, in file order.
class ManifestReader {
public:
  ManifestReader(const std::string& path, ManifestOptions options = {});

  std::optional<std::variant<FigureRecord, Reject>> next();

private:
  std::ifstream in_;
  ManifestOptions options_;
  std::size_t line_no_ = 0;
  std::unordered_set<std::string> seen_ids_;
};

struct ManifestLoad {
  std::vector<FigureRecord> records;
  std::vector<Reject> rejects;
};

ManifestLoad load_manifest(const std::string& path, ManifestOptions options = {});

struct TaxonomyFilter {
  bool enabled = true;
  std::set<std::string> allowed_primary;
  std::set<std::string> allowed_secondary;
  bool require_secondary_match = false;

  void validate() const;
  bool admits(const FigureRecord& r) const;

  static TaxonomyFilter from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Primary labels {Clinical imaging, Microscopy}; secondary allowlist seeded
  // with the known subtypes.
  static TaxonomyFilter defaults();
};

struct PrefilterResult {
  std::vector<FigureRecord> kept;
  std::vector<FigureRecord> dropped;
  std::size_t input = 0;
};

PrefilterResult prefilter(std::vector<FigureRecord> records, const TaxonomyFilter& filter);

} // namespace vqasynth::corpus
