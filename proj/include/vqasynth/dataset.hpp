#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqasynth/corpus.hpp"
#include "vqasynth/schema.hpp"

namespace vqasynth::dataset {

// One line of accepted.jsonl:
//   {"record_id":..., "item":<canonical item JSON>, "meta":{...}}
// `item` is emitted byte-for-byte by schema::serialize_canonical.
struct AcceptedRecord {
  std::string record_id;
  schema::McvqaItem item;
  std::vector<std::string> image_refs;
  std::string source_doc_id;
  std::string primary_label;
  std::vector<std::string> secondary_labels;
  std::string score;           // decimal, 4 places
  nlohmann::json provenance;   // generator / verifier identities

  std::string to_line() const;
  static AcceptedRecord from_line(const std::string& line);
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<AcceptedRecord> read_accepted(const std::string& path);

} // namespace vqasynth::dataset
