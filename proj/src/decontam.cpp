#include "vqasynth/decontam.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "vqasynth/schema.hpp"
#include "vqasynth/text.hpp"

namespace vqasynth::decontam {

using nlohmann::json;
namespace fs = std::filesystem;

std::string normalize_text(std::string_view s) {
  std::string folded = text::casefold(s);
  std::string out;
  out.reserve(folded.size());
  bool pending_space = false;
  const auto* p = reinterpret_cast<const uint8_t*>(folded.data());
  int32_t i = 0, len = static_cast<int32_t>(folded.size());
  while (i < len) {
    int32_t start = i;
    UChar32 c;
    U8_NEXT(p, i, len, c);
    if (c < 0 || u_ispunct(c) || u_isUWhiteSpace(c) || u_iscntrl(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.append(folded, static_cast<std::size_t>(start), static_cast<std::size_t>(i - start));
  }
  return out;
}

std::vector<std::string> shingles(std::string_view s, std::size_t n) {
  if (n == 0) throw std::invalid_argument("shingle size must be >= 1");
  std::string norm = normalize_text(s);
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < norm.size()) {
    std::size_t sp = norm.find(' ', pos);
    if (sp == std::string::npos) sp = norm.size();
    tokens.push_back(norm.substr(pos, sp - pos));
    pos = sp + 1;
  }
  std::vector<std::string> out;
  if (tokens.empty()) return out;
  if (tokens.size() < n) {
    out.push_back(norm);
    return out;
  }
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string sh = tokens[i];
    for (std::size_t k = 1; k < n; ++k) sh += ' ' + tokens[i + k];
    out.push_back(std::move(sh));
  }
  return out;
}

std::optional<std::uint64_t> dhash(const std::string& encoded) {
  if (encoded.empty()) return std::nullopt;
  cv::Mat buf(1, static_cast<int>(encoded.size()), CV_8U, const_cast<char*>(encoded.data()));
  cv::Mat gray = cv::imdecode(buf, cv::IMREAD_GRAYSCALE);
  if (gray.empty()) return std::nullopt;
  cv::Mat small;
  cv::resize(gray, small, cv::Size(9, 8), 0, 0, cv::INTER_AREA);
  std::uint64_t h = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      h <<= 1;
      if (small.at<std::uint8_t>(r, c) > small.at<std::uint8_t>(r, c + 1)) h |= 1;
    }
  return h;
}

int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

void SuiteConfig::validate() const {
  if (suite_id.empty()) throw std::invalid_argument("suite_id is required");
  if (files.empty()) throw std::invalid_argument("suite " + suite_id + " lists no files");
  if (format != "jsonl" && format != "json_array")
    throw std::invalid_argument("suite " + suite_id + ": format must be jsonl or json_array");
  if (id_field.empty() || question_field.empty())
    throw std::invalid_argument("suite " + suite_id + ": id_field and question_field are required");
}

SuiteConfig SuiteConfig::from_json(const json& j, const fs::path& base) {
  SuiteConfig c;
  c.suite_id = j.at("suite_id").get<std::string>();
  for (const auto& f : j.at("files")) {
    fs::path p = f.get<std::string>();
    c.files.push_back(p.is_absolute() || base.empty() ? p : base / p);
  }
  c.format = j.value("format", c.format);
  c.id_field = j.value("id_field", c.id_field);
  c.question_field = j.value("question_field", c.question_field);
  c.options_field = j.value("options_field", "");
  c.image_field = j.value("image_field", "");
  if (j.contains("image_root")) {
    fs::path r = j.at("image_root").get<std::string>();
    c.image_root = r.is_absolute() || base.empty() ? r : base / r;
  }
  c.validate();
  return c;
}

namespace {

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw std::runtime_error("expected a string or number");
}

SuiteItem item_from(const json& obj, const SuiteConfig& c) {
  if (!obj.is_object()) throw std::runtime_error("entry is not an object");
  SuiteItem it;
  it.suite_id = c.suite_id;
  if (!obj.contains(c.id_field)) throw std::runtime_error("missing " + c.id_field);
  it.item_id = scalar_text(obj.at(c.id_field));
  if (!obj.contains(c.question_field)) throw std::runtime_error("missing " + c.question_field);
  it.text = obj.at(c.question_field).get<std::string>();
  if (!c.options_field.empty() && obj.contains(c.options_field)) {
    const json& opts = obj.at(c.options_field);
    if (opts.is_array())
      for (const auto& o : opts) it.text += "\n" + scalar_text(o);
    else if (opts.is_object())
      for (const auto& [k, o] : opts.items()) it.text += "\n" + k + ". " + scalar_text(o);
    else
      throw std::runtime_error(c.options_field + " must be an array or object");
  }
  if (!c.image_field.empty() && obj.contains(c.image_field)) {
    const json& im = obj.at(c.image_field);
    if (im.is_string())
      it.image_locators.push_back(im.get<std::string>());
    else if (im.is_array())
      for (const auto& x : im) it.image_locators.push_back(x.get<std::string>());
    else if (!im.is_null())
      throw std::runtime_error(c.image_field + " must be a string or array");
  }
  return it;
}

} // namespace

SuiteLoad load_suite(const SuiteConfig& config) {
  config.validate();
  SuiteLoad out;
  for (const auto& file : config.files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      out.errors.push_back({file.string(), 0, "cannot open"});
      continue;
    }
    if (config.format == "json_array") {
      json arr = json::parse(in, nullptr, false);
      if (arr.is_discarded() || !arr.is_array()) {
        out.errors.push_back({file.string(), 0, "not a JSON array"});
        continue;
      }
      for (std::size_t i = 0; i < arr.size(); ++i) {
        try {
          out.items.push_back(item_from(arr[i], config));
        } catch (const std::exception& e) {
          out.errors.push_back({file.string(), i + 1, e.what()});
        }
      }
    } else {
      std::string line;
      std::size_t n = 0;
      while (std::getline(in, line)) {
        ++n;
        if (text::trim(line).empty()) continue;
        try {
          json obj = json::parse(line);
          out.items.push_back(item_from(obj, config));
        } catch (const std::exception& e) {
          out.errors.push_back({file.string(), n, e.what()});
        }
      }
    }
  }
  return out;
}

std::vector<std::string> EvalSuiteIndex::add(const std::vector<SuiteItem>& items, const ContentStore& images) {
  std::vector<std::string> failed;
  for (const auto& it : items) {
    auto idx = static_cast<std::uint32_t>(items_.size());
    IndexedItem entry{it.suite_id, it.item_id, {}};
    std::set<std::string> seen;
    for (auto& sh : shingles(it.text, n_))
      if (seen.insert(sh).second) text_[sh].push_back(idx);
    for (const auto& loc : it.image_locators) {
      auto blob = images.fetch(loc);
      auto h = blob ? dhash(blob->bytes) : std::nullopt;
      if (!h) {
        failed.push_back(it.suite_id + ":" + it.item_id + ":" + loc);
        continue;
      }
      entry.image_hashes.push_back(*h);
      images_.emplace_back(*h, idx);
    }
    items_.push_back(std::move(entry));
  }
  return failed;
}

const std::vector<std::uint32_t>* EvalSuiteIndex::lookup(const std::string& shingle) const {
  auto it = text_.find(shingle);
  return it == text_.end() ? nullptr : &it->second;
}

std::vector<DatasetEntry> dataset_entries(const std::vector<dataset::AcceptedRecord>& records,
                                          const ContentStore& images, std::vector<std::string>* missing) {
  std::vector<DatasetEntry> out(records.size());
  std::vector<std::vector<std::string>> misses(records.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out[i].record_id = r.record_id;
    out[i].text = schema::render_question(r.item);
    for (const auto& loc : r.image_refs) {
      auto blob = images.fetch(loc);
      auto h = blob ? dhash(blob->bytes) : std::nullopt;
      if (h) out[i].image_hashes.push_back(*h);
      else misses[i].push_back(r.record_id + ":" + loc);
    }
  }
  if (missing)
    for (auto& m : misses) missing->insert(missing->end(), m.begin(), m.end());
  return out;
}

const char* to_string(MatchKind k) { return k == MatchKind::Text ? "text" : "image"; }

json OverlapPair::to_json() const {
  json j{{"record_id", record_id},
         {"suite_id", suite_id},
         {"suite_item_id", suite_item_id},
         {"kind", to_string(kind)},
         {"evidence", evidence}};
  if (kind == MatchKind::Image) j["distance"] = distance;
  return j;
}

namespace {

std::string hex64(std::uint64_t h) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

std::vector<OverlapPair> overlaps_for(const DatasetEntry& e, const EvalSuiteIndex& index, const Thresholds& t) {
  // suite item -> (kind -> best evidence)
  std::map<std::pair<std::uint32_t, MatchKind>, OverlapPair> best;
  for (const auto& sh : shingles(e.text, index.shingle_size())) {
    const auto* hits = index.lookup(sh);
    if (!hits) continue;
    for (auto idx : *hits) {
      auto key = std::make_pair(idx, MatchKind::Text);
      auto it = best.find(key);
      if (it == best.end()) {
        const auto& item = index.items()[idx];
        best.emplace(key, OverlapPair{e.record_id, item.suite_id, item.item_id, MatchKind::Text, sh, 0});
      } else if (sh < it->second.evidence) {
        it->second.evidence = sh;
      }
    }
  }
  for (auto h : e.image_hashes) {
    for (const auto& [sh, idx] : index.images()) {
      int d = hamming(h, sh);
      if (d > t.max_hamming) continue;
      auto key = std::make_pair(idx, MatchKind::Image);
      std::string ev = hex64(h) + "~" + hex64(sh);
      auto it = best.find(key);
      if (it == best.end()) {
        const auto& item = index.items()[idx];
        best.emplace(key, OverlapPair{e.record_id, item.suite_id, item.item_id, MatchKind::Image, ev, d});
      } else if (d < it->second.distance || (d == it->second.distance && ev < it->second.evidence)) {
        it->second.distance = d;
        it->second.evidence = ev;
      }
    }
  }
  std::vector<OverlapPair> out;
  for (auto& [k, p] : best) out.push_back(std::move(p));
  return out;
}

OverlapReport flatten(std::vector<std::vector<OverlapPair>>& per_item) {
  OverlapReport report;
  for (auto& v : per_item) std::move(v.begin(), v.end(), std::back_inserter(report));
  std::sort(report.begin(), report.end(), [](const OverlapPair& a, const OverlapPair& b) {
    return std::tie(a.record_id, a.suite_id, a.suite_item_id, a.kind) <
           std::tie(b.record_id, b.suite_id, b.suite_item_id, b.kind);
  });
  return report;
}

} // namespace

OverlapReport detect_overlap(const std::vector<DatasetEntry>& dataset, const EvalSuiteIndex& index,
                             const Thresholds& thresholds) {
  std::vector<std::vector<OverlapPair>> per_item(dataset.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < dataset.size(); ++i) per_item[i] = overlaps_for(dataset[i], index, thresholds);
  return flatten(per_item);
}

OverlapReport detect_overlap_serial(const std::vector<DatasetEntry>& dataset, const EvalSuiteIndex& index,
                                    const Thresholds& thresholds) {
  std::vector<std::vector<OverlapPair>> per_item(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) per_item[i] = overlaps_for(dataset[i], index, thresholds);
  return flatten(per_item);
}

json Removal::to_json() const {
  json ev = json::array();
  for (const auto& p : evidence) ev.push_back(p.to_json());
  return json{{"record_id", record.record_id}, {"item", json::parse(schema::serialize_canonical(record.item))},
              {"evidence", ev}};
}

DecontamResult decontaminate(std::vector<dataset::AcceptedRecord> records, const OverlapReport& report) {
  std::map<std::string, std::vector<OverlapPair>> flagged;
  for (const auto& p : report) flagged[p.record_id].push_back(p);
  DecontamResult out;
  for (auto& r : records) {
    auto it = flagged.find(r.record_id);
    if (it == flagged.end()) out.clean.push_back(std::move(r));
    else out.removed.push_back(Removal{std::move(r), it->second});
  }
  return out;
}

} // namespace vqasynth::decontam
