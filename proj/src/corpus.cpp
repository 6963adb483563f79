#include "vqasynth/corpus.hpp"

#include <algorithm>

#include "vqasynth/text.hpp"

namespace vqasynth::corpus {

using nlohmann::json;

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::MalformedJson: return "MalformedJson";
    case RejectReason::MissingField: return "MissingField";
    case RejectReason::WrongType: return "WrongType";
    case RejectReason::EmptyCaption: return "EmptyCaption";
    case RejectReason::NoImages: return "NoImages";
    case RejectReason::TooManyImages: return "TooManyImages";
    case RejectReason::DuplicateId: return "DuplicateId";
  }
  return "Unknown";
}

json to_json(const FigureRecord& r) {
  return json{{"record_id", r.record_id},         {"image_refs", r.image_refs},
              {"caption", r.caption},             {"references", r.references},
              {"primary_label", r.primary_label}, {"secondary_labels", r.secondary_labels},
              {"source_doc_id", r.source_doc_id}};
}

json Reject::to_json() const {
  json out = original.is_object() ? original : json::object();
  out["reason"] = vqasynth::corpus::to_string(reason);
  out["detail"] = detail;
  out["line"] = line;
  return out;
}

namespace {

Reject make_reject(std::size_t line, RejectReason reason, std::string detail, const json& original) {
  return Reject{line, reason, std::move(detail), original};
}

std::optional<Reject> read_string(const json& obj, const char* key, bool required, std::string& out,
                                  std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) return make_reject(line, RejectReason::MissingField, std::string("missing \"") + key + "\"", obj);
    return std::nullopt;
  }
  if (!it->is_string())
    return make_reject(line, RejectReason::WrongType, std::string("\"") + key + "\" must be a string", obj);
  out = it->get<std::string>();
  return std::nullopt;
}

std::optional<Reject> read_string_list(const json& obj, const char* key, bool required,
                                       std::vector<std::string>& out, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) return make_reject(line, RejectReason::MissingField, std::string("missing \"") + key + "\"", obj);
    return std::nullopt;
  }
  if (!it->is_array())
    return make_reject(line, RejectReason::WrongType, std::string("\"") + key + "\" must be an array", obj);
  for (const auto& v : *it) {
    if (!v.is_string())
      return make_reject(line, RejectReason::WrongType, std::string("\"") + key + "\" entries must be strings", obj);
    out.push_back(v.get<std::string>());
  }
  return std::nullopt;
}

} // namespace

std::variant<FigureRecord, Reject> parse_record(const json& obj, std::size_t line, std::size_t max_images) {
  if (!obj.is_object()) return make_reject(line, RejectReason::MalformedJson, "line is not a JSON object", json{{"raw", obj.dump()}});

  FigureRecord r;
  if (auto rej = read_string(obj, "record_id", true, r.record_id, line)) return *rej;
  if (auto rej = read_string_list(obj, "image_refs", true, r.image_refs, line)) return *rej;
  if (auto rej = read_string(obj, "caption", true, r.caption, line)) return *rej;
  if (auto rej = read_string_list(obj, "references", false, r.references, line)) return *rej;
  if (auto rej = read_string(obj, "primary_label", false, r.primary_label, line)) return *rej;
  if (auto rej = read_string_list(obj, "secondary_labels", false, r.secondary_labels, line)) return *rej;
  if (auto rej = read_string(obj, "source_doc_id", false, r.source_doc_id, line)) return *rej;

  if (text::trim(r.record_id).empty()) return make_reject(line, RejectReason::MissingField, "empty \"record_id\"", obj);
  if (r.image_refs.empty()) return make_reject(line, RejectReason::NoImages, "no image references", obj);
  if (r.image_refs.size() > max_images)
    return make_reject(line, RejectReason::TooManyImages,
                       std::to_string(r.image_refs.size()) + " images exceeds max_images=" + std::to_string(max_images),
                       obj);
  for (const auto& ref : r.image_refs)
    if (text::trim(ref).empty()) return make_reject(line, RejectReason::NoImages, "empty image reference", obj);

  r.caption = text::normalize_field(r.caption);
  if (r.caption.empty()) return make_reject(line, RejectReason::EmptyCaption, "caption empty after trimming", obj);
  for (auto& ref : r.references) ref = text::nfc(ref);
  // Blank reference passages carry no context.
  std::erase_if(r.references, [](const std::string& s) { return text::trim(s).empty(); });
  return r;
}

ManifestReader::ManifestReader(const std::string& path, ManifestOptions options)
    : in_(path, std::ios::binary), options_(std::move(options)) {
  if (options_.format != "jsonl") throw CorpusError("unregistered manifest format: " + options_.format);
  if (!in_) throw CorpusError("cannot read manifest: " + path);
}

std::optional<std::variant<FigureRecord, Reject>> ManifestReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;

    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded())
      return make_reject(line_no_, RejectReason::MalformedJson, "invalid JSON", json{{"raw", line}});

    auto parsed = parse_record(obj, line_no_, options_.max_images);
    if (auto* rec = std::get_if<FigureRecord>(&parsed)) {
      if (!seen_ids_.insert(rec->record_id).second)
        return make_reject(line_no_, RejectReason::DuplicateId, "duplicate record_id " + rec->record_id, obj);
    }
    return parsed;
  }
  if (in_.bad()) throw CorpusError("read error in manifest");
  return std::nullopt;
}

ManifestLoad load_manifest(const std::string& path, ManifestOptions options) {
  ManifestReader reader(path, std::move(options));
  ManifestLoad out;
  while (auto entry = reader.next()) {
    if (auto* rec = std::get_if<FigureRecord>(&*entry))
      out.records.push_back(std::move(*rec));
    else
      out.rejects.push_back(std::get<Reject>(std::move(*entry)));
  }
  return out;
}

void TaxonomyFilter::validate() const {
  if (enabled && allowed_primary.empty()) throw CorpusError("taxonomy filter enabled with empty allowed_primary");
  if (enabled && require_secondary_match && allowed_secondary.empty())
    throw CorpusError("require_secondary_match set with empty allowed_secondary");
}

bool TaxonomyFilter::admits(const FigureRecord& r) const {
  if (!enabled) return true;
  if (!allowed_primary.contains(r.primary_label)) return false;
  if (!require_secondary_match) return true;
  return std::any_of(r.secondary_labels.begin(), r.secondary_labels.end(),
                     [&](const std::string& s) { return allowed_secondary.contains(s); });
}

TaxonomyFilter TaxonomyFilter::from_json(const json& j) {
  TaxonomyFilter f;
  f.enabled = j.value("enabled", true);
  f.allowed_primary = j.value("allowed_primary", std::set<std::string>{});
  f.allowed_secondary = j.value("allowed_secondary", std::set<std::string>{});
  f.require_secondary_match = j.value("require_secondary_match", false);
  f.validate();
  return f;
}

json TaxonomyFilter::to_json() const {
  return json{{"enabled", enabled},
              {"allowed_primary", allowed_primary},
              {"allowed_secondary", allowed_secondary},
              {"require_secondary_match", require_secondary_match}};
}

TaxonomyFilter TaxonomyFilter::defaults() {
  TaxonomyFilter f;
  f.allowed_primary = {"Clinical imaging", "Microscopy"};
  f.allowed_secondary = {"x-ray radiography", "optical coherence tomography", "skull", "brain"};
  return f;
}

PrefilterResult prefilter(std::vector<FigureRecord> records, const TaxonomyFilter& filter) {
  filter.validate();
  PrefilterResult out;
  out.input = records.size();
  for (auto& r : records) {
    if (filter.admits(r))
      out.kept.push_back(std::move(r));
    else
      out.dropped.push_back(std::move(r));
  }
  return out;
}

} // namespace vqasynth::corpus
