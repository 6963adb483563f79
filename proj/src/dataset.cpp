#include "vqasynth/dataset.hpp"

#include <fstream>

namespace vqasynth::dataset {

using nlohmann::json;

std::string AcceptedRecord::to_line() const {
  json meta{{"image_refs", image_refs},
            {"source_doc_id", source_doc_id},
            {"primary_label", primary_label},
            {"secondary_labels", secondary_labels},
            {"score", score},
            {"provenance", provenance}};
  return "{\"record_id\":" + json(record_id).dump(-1, ' ', true) + ",\"item\":" + schema::serialize_canonical(item) +
         ",\"meta\":" + meta.dump(-1, ' ', true) + "}";
}

AcceptedRecord AcceptedRecord::from_line(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DatasetError("accepted line is not a JSON object");
  AcceptedRecord r;
  try {
    r.record_id = j.at("record_id").get<std::string>();
    auto parsed = schema::parse_strict(j.at("item").dump());
    if (auto* d = std::get_if<schema::ParseDiagnostics>(&parsed))
      throw DatasetError("accepted item " + r.record_id + " fails the strict schema: " + d->to_json().dump());
    r.item = std::get<schema::McvqaItem>(std::move(parsed));
    const json& m = j.at("meta");
    r.image_refs = m.value("image_refs", std::vector<std::string>{});
    r.source_doc_id = m.value("source_doc_id", "");
    r.primary_label = m.value("primary_label", "");
    r.secondary_labels = m.value("secondary_labels", std::vector<std::string>{});
    r.score = m.value("score", "");
    r.provenance = m.value("provenance", json::object());
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed accepted line: ") + e.what());
  }
  return r;
}

std::vector<AcceptedRecord> read_accepted(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot read " + path);
  std::vector<AcceptedRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(AcceptedRecord::from_line(line));
  return out;
}

} // namespace vqasynth::dataset
