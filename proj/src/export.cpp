#include "vqasynth/export.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "vqasynth/schema.hpp"
#include "vqasynth/text.hpp"

namespace vqasynth::exporter {

using nlohmann::json;
namespace fs = std::filesystem;

json trace_to_json(const generator::TraceOutcome& t) {
  return json{{"record_id", t.record_id},
              {"trace", t.trace_text},
              {"answer_echo", t.answer_echo ? json(std::string(1, *t.answer_echo)) : json(nullptr)},
              {"status", generator::to_string(t.status)},
              {"provenance", t.provenance.to_json()}};
}

generator::TraceOutcome trace_from_json(const json& j) {
  generator::TraceOutcome t;
  t.record_id = j.at("record_id").get<std::string>();
  t.trace_text = j.at("trace").get<std::string>();
  if (j.contains("answer_echo") && j["answer_echo"].is_string() && j["answer_echo"].get<std::string>().size() == 1)
    t.answer_echo = j["answer_echo"].get<std::string>()[0];
  std::string s = j.at("status").get<std::string>();
  using generator::TraceStatus;
  if (s == generator::to_string(TraceStatus::Agrees)) t.status = TraceStatus::Agrees;
  else if (s == generator::to_string(TraceStatus::Mismatched)) t.status = TraceStatus::Mismatched;
  else t.status = TraceStatus::UnparseableAnswer;
  const json& p = j.value("provenance", json::object());
  t.provenance = {p.value("model_id", ""), p.value("prompt_hash", ""), p.value("template_version", ""),
                  p.value("timestamp", "")};
  return t;
}

std::map<std::string, generator::TraceOutcome> read_traces(const fs::path& path) {
  std::map<std::string, generator::TraceOutcome> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    // A torn final line from an interrupted elicitation is ignored.
    if (j.is_discarded()) continue;
    auto t = trace_from_json(j);
    out[t.record_id] = std::move(t);
  }
  return out;
}

void append_traces(const fs::path& path, const std::vector<generator::TraceOutcome>& traces) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw ExportError(ExportErrorKind::Io, "cannot write " + path.string());
  for (const auto& t : traces) out << trace_to_json(t).dump() << '\n';
}

corpus::FigureRecord figure_of(const dataset::AcceptedRecord& r) {
  corpus::FigureRecord f;
  f.record_id = r.record_id;
  f.image_refs = r.image_refs;
  f.primary_label = r.primary_label;
  f.secondary_labels = r.secondary_labels;
  f.source_doc_id = r.source_doc_id;
  return f;
}

TraceBatch elicit_traces(const std::vector<dataset::AcceptedRecord>& records, llm::Gateway& gateway,
                         const prompt::PromptSet& prompts, const ContentStore& store, int workers) {
  std::vector<std::optional<generator::TraceOutcome>> results(records.size());
  std::vector<std::string> errors(records.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        results[i] = generator::elicit_trace(figure_of(records[i]), records[i].item, gateway, prompts, store);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), records.size());
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work);
  }
  TraceBatch b;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (results[i]) b.traces.push_back(std::move(*results[i]));
    else b.failures.emplace_back(records[i].record_id, errors[i]);
  }
  return b;
}

void check_unique(const std::vector<dataset::AcceptedRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records)
    if (!seen.insert(r.record_id).second)
      throw ExportError(ExportErrorKind::DuplicateId, "duplicate record_id " + r.record_id);
}

std::string sft_line(const dataset::AcceptedRecord& r, const generator::TraceOutcome& trace,
                     const std::vector<std::string>& images) {
  json j{{"record_id", r.record_id},
         {"images", images},
         {"prompt", schema::render_question(r.item)},
         {"trace", trace.trace_text},
         {"answer", std::string(1, r.item.answer)}};
  return j.dump(-1, ' ', true);
}

std::string rlvr_line(const dataset::AcceptedRecord& r, const std::vector<std::string>& images) {
  json j{{"record_id", r.record_id},
         {"images", images},
         {"prompt", schema::render_question(r.item)},
         {"gold_answer", std::string(1, r.item.answer)}};
  return j.dump(-1, ' ', true);
}

namespace {

std::string safe_name(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return out;
}

std::string extension_for(const std::string& media_type) {
  if (media_type == "image/png") return ".png";
  if (media_type == "image/jpeg") return ".jpg";
  if (media_type == "image/gif") return ".gif";
  if (media_type == "image/webp") return ".webp";
  if (media_type == "image/bmp") return ".bmp";
  if (media_type == "image/tiff") return ".tif";
  return ".bin";
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string data;
  for (const auto& l : lines) data += l + '\n';
  try {
    text::write_file_atomic(path.string(), data);
  } catch (const std::exception& e) {
    throw ExportError(ExportErrorKind::Io, e.what());
  }
}

} // namespace

ExportSummary export_dataset(std::vector<dataset::AcceptedRecord> records,
                             const std::map<std::string, generator::TraceOutcome>& traces,
                             const ExportOptions& options) {
  check_unique(records);
  if (options.bundle_images && !options.store)
    throw std::invalid_argument("bundling images requires a content store");
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
  fs::create_directories(options.out_dir);

  ExportSummary s;
  std::vector<std::string> mcvqa, sft, rlvr;
  std::map<std::string, std::size_t> primary, secondary;
  for (const auto& r : records) {
    std::vector<std::string> images = r.image_refs;
    if (options.bundle_images) {
      fs::path dir = options.out_dir / "images" / safe_name(r.record_id);
      fs::create_directories(dir);
      for (std::size_t i = 0; i < r.image_refs.size(); ++i) {
        auto blob = options.store->fetch(r.image_refs[i]);
        if (!blob) throw ExportError(ExportErrorKind::MissingImage, "cannot fetch " + r.image_refs[i]);
        std::string name = std::to_string(i) + extension_for(blob->media_type);
        text::write_file_atomic((dir / name).string(), blob->bytes);
        images[i] = "images/" + safe_name(r.record_id) + "/" + name;
        ++s.bundled_images;
      }
    }
    mcvqa.push_back(r.to_line());
    rlvr.push_back(rlvr_line(r, images));
    auto t = traces.find(r.record_id);
    if (t != traces.end()) {
      if (t->second.status == generator::TraceStatus::Agrees && !text::trim(t->second.trace_text).empty())
        sft.push_back(sft_line(r, t->second, images));
      else
        ++s.sft_skipped;
    }
    ++primary[r.primary_label];
    for (const auto& l : r.secondary_labels) ++secondary[l];
  }
  write_lines(options.out_dir / kMcvqaFile, mcvqa);
  write_lines(options.out_dir / kSftFile, sft);
  write_lines(options.out_dir / kRlvrFile, rlvr);
  s.mcvqa = mcvqa.size();
  s.sft = sft.size();
  s.rlvr = rlvr.size();

  s.card = json{{"run_id", options.run_id},
                {"created_at", options.created_at},
                {"item_count", s.mcvqa},
                {"funnel", options.funnel},
                {"config_hashes", options.config_hashes},
                {"decontaminated", options.decontaminated},
                {"label_distribution", {{"primary", primary}, {"secondary", secondary}}},
                {"files",
                 {{kMcvqaFile, s.mcvqa},
                  {kSftFile, s.sft},
                  {kRlvrFile, s.rlvr}}},
                {"sft_skipped", s.sft_skipped},
                {"images", options.bundle_images ? "bundled" : "by_reference"}};
  try {
    text::write_file_atomic((options.out_dir / kCardFile).string(), s.card.dump(2) + "\n");
  } catch (const std::exception& e) {
    throw ExportError(ExportErrorKind::Io, e.what());
  }
  return s;
}

} // namespace vqasynth::exporter
