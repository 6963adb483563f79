#include "vqasynth/stats.hpp"

#include <fstream>

#include "vqasynth/pipeline.hpp"
#include "vqasynth/text.hpp"

namespace vqasynth::stats {

using nlohmann::json;
namespace fs = std::filesystem;

json RunStats::to_json() const {
  json crit = json::object();
  for (const auto& [id, c] : criteria)
    crit[id] = {{"stage", c.stage}, {"evaluated", c.evaluated}, {"failed", c.failed}, {"failure_rate", c.rate()}};
  return json{{"funnel", funnel},
              {"records", records},
              {"status", status_counts},
              {"reject_causes", reject_causes},
              {"criteria", crit},
              {"score_histogram", score_histogram},
              {"primary_labels", primary_labels},
              {"secondary_labels", secondary_labels},
              {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}},
              {"skipped_lines", skipped_lines}};
}

namespace {

void tally(RunStats& s, const json& rec) {
  ++s.records;
  ++s.status_counts[rec.at("status").get<std::string>()];
  ++s.primary_labels[rec.value("primary_label", "")];
  for (const auto& l : rec.value("secondary_labels", json::array())) ++s.secondary_labels[l.get<std::string>()];
  if (rec.contains("usage")) {
    s.usage.prompt_tokens += rec["usage"].value("prompt_tokens", std::int64_t{0});
    s.usage.completion_tokens += rec["usage"].value("completion_tokens", std::int64_t{0});
  }
  if (rec.contains("decision") && !rec["decision"].at("accepted").get<bool>())
    ++s.reject_causes[rec["decision"].at("cause").get<std::string>() + "@stage" +
                      std::to_string(rec["decision"].at("stage").get<int>())];
  for (const auto& st : rec.value("stages", json::array())) {
    if (!st.contains("sheet")) continue;
    int stage = st.at("stage").get<int>();
    for (const auto& e : st["sheet"].at("criteria")) {
      auto& c = s.criteria[e.at("id").get<std::string>()];
      c.stage = stage;
      ++c.evaluated;
      bool awarded = e.at("awarded").get<bool>();
      if (stage == 3 ? awarded : !awarded) ++c.failed;
    }
  }
  if (rec.contains("score")) ++s.score_histogram[rec["score"].at("value").get<std::string>()];
}

} // namespace

RunStats compute(const fs::path& run_dir) {
  RunStats s;
  fs::path funnel = run_dir / pipeline::kFunnelFile;
  if (fs::exists(funnel)) {
    s.funnel = json::parse(text::read_file(funnel.string()), nullptr, false);
    if (s.funnel.is_discarded()) s.funnel = nullptr;
  }
  std::ifstream in(run_dir / pipeline::kAuditFile);
  if (!in) throw std::runtime_error("no audit log in " + run_dir.string());
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      ++s.skipped_lines;
      continue;
    }
    try {
      RunStats tmp = s;
      tally(tmp, rec);
      s = std::move(tmp);
    } catch (const json::exception&) {
      ++s.skipped_lines;
    }
  }
  return s;
}

} // namespace vqasynth::stats
