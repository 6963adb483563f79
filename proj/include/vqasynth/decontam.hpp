#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqasynth/content_store.hpp"
#include "vqasynth/dataset.hpp"

namespace vqasynth::decontam {

inline constexpr std::size_t kDefaultShingle = 8;
inline constexpr int kDefaultMaxHamming = 4;

// Lowercase (full case folding), punctuation to spaces, collapsed whitespace.
std::string normalize_text(std::string_view s);
// Token n-grams of the normalized text joined by single spaces. A text with
// fewer than n tokens yields itself as its only shingle.
std::vector<std::string> shingles(std::string_view s, std::size_t n = kDefaultShingle);

// 64-bit difference hash over a 9x8 grayscale downsample; nullopt when the
// bytes do not decode as an image.
std::optional<std::uint64_t> dhash(const std::string& encoded);
int hamming(std::uint64_t a, std::uint64_t b);

struct SuiteItem {
  std::string suite_id;
  std::string item_id;
  std::string text;  // question followed by its options
  std::vector<std::string> image_locators;
};

// Per-benchmark adapter over its native file layout.
struct SuiteConfig {
  std::string suite_id;
  std::vector<std::filesystem::path> files;
  std::string format = "jsonl";  // or "json_array"
  std::string id_field = "id";
  std::string question_field = "question";
  std::string options_field;  // optional; array or object of strings
  std::string image_field;    // optional; string or array of locators
  std::filesystem::path image_root;

  void validate() const;
  // Relative paths resolve against `base`.
  static SuiteConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
};

struct SuiteParseError {
  std::string file;
  std::size_t line = 0;  // 0 for whole-file errors
  std::string message;
};

struct SuiteLoad {
  std::vector<SuiteItem> items;
  std::vector<SuiteParseError> errors;
};

SuiteLoad load_suite(const SuiteConfig& config);

struct IndexedItem {
  std::string suite_id;
  std::string item_id;
  std::vector<std::uint64_t> image_hashes;
};

// Immutable once built; detection reads it from many threads.
class EvalSuiteIndex {
public:
  explicit EvalSuiteIndex(std::size_t n = kDefaultShingle) : n_(n) {}

  // Images that fail to fetch or decode are reported in the returned list.
  std::vector<std::string> add(const std::vector<SuiteItem>& items, const ContentStore& images);

  std::size_t shingle_size() const { return n_; }
  std::size_t item_count() const { return items_.size(); }
  std::size_t image_count() const { return images_.size(); }
  std::size_t signature_count() const { return text_.size(); }
  const std::vector<IndexedItem>& items() const { return items_; }
  const std::vector<std::uint32_t>* lookup(const std::string& shingle) const;
  const std::vector<std::pair<std::uint64_t, std::uint32_t>>& images() const { return images_; }

private:
  std::size_t n_;
  std::vector<IndexedItem> items_;
  std::unordered_map<std::string, std::vector<std::uint32_t>> text_;
  std::vector<std::pair<std::uint64_t, std::uint32_t>> images_;
};

struct DatasetEntry {
  std::string record_id;
  std::string text;
  std::vector<std::uint64_t> image_hashes;
};

// Stem plus options through the shared question renderer; image hashes from
// `images`. Images that cannot be hashed are skipped and listed in `missing`.
std::vector<DatasetEntry> dataset_entries(const std::vector<dataset::AcceptedRecord>& records,
                                          const ContentStore& images, std::vector<std::string>* missing = nullptr);

struct Thresholds {
  int max_hamming = kDefaultMaxHamming;
};

enum class MatchKind { Text, Image };

const char* to_string(MatchKind k);

struct OverlapPair {
  std::string record_id;
  std::string suite_id;
  std::string suite_item_id;
  MatchKind kind = MatchKind::Text;
  std::string evidence;  // shared shingle, or the hash pair
  int distance = 0;      // Hamming distance for image matches

  nlohmann::json to_json() const;
  auto operator<=>(const OverlapPair&) const = default;
};

// Sorted by (record_id, suite_id, suite_item_id, kind). One pair per kind;
// text evidence is the smallest shared shingle, image evidence the closest
// hash pair.
using OverlapReport = std::vector<OverlapPair>;

OverlapReport detect_overlap(const std::vector<DatasetEntry>& dataset, const EvalSuiteIndex& index,
                             const Thresholds& thresholds = {});
OverlapReport detect_overlap_serial(const std::vector<DatasetEntry>& dataset, const EvalSuiteIndex& index,
                                    const Thresholds& thresholds = {});

struct Removal {
  dataset::AcceptedRecord record;
  std::vector<OverlapPair> evidence;

  nlohmann::json to_json() const;
};

struct DecontamResult {
  std::vector<dataset::AcceptedRecord> clean;
  std::vector<Removal> removed;
};

DecontamResult decontaminate(std::vector<dataset::AcceptedRecord> records, const OverlapReport& report);

} // namespace vqasynth::decontam
