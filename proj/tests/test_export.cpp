#include <doctest.h>

#include <fstream>

#include "harness.hpp"
#include "vqasynth/export.hpp"

using namespace vqasynth;
using namespace vqasynth::exporter;
using nlohmann::json;

namespace {

std::vector<json> lines(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string l;
  while (std::getline(in, l)) out.push_back(json::parse(l));
  return out;
}

dataset::AcceptedRecord accepted(const std::string& id, int images = 1) {
  dataset::AcceptedRecord r;
  r.record_id = id;
  r.item = synthetic::default_item(id);
  for (int i = 0; i < images; ++i) r.image_refs.push_back(id + "/img" + std::to_string(i) + ".png");
  r.primary_label = id < "m" ? "Clinical imaging" : "Microscopy";
  r.secondary_labels = {"ct"};
  r.score = "1.0000";
  r.provenance = json::object();
  return r;
}

generator::TraceOutcome trace(const dataset::AcceptedRecord& r, std::optional<char> say) {
  std::string text = say ? "Looking at the image... the answer is " + std::string(1, *say) + "." : "Unclear.";
  return generator::classify_trace(r.record_id, r.item, text);
}

} // namespace

TEST_CASE("every accepted item lands in each applicable file") {
  testsupport::TempDir dir;
  std::vector<dataset::AcceptedRecord> recs;
  for (const char* id : {"c", "a", "x", "b", "z"}) recs.push_back(accepted(id));
  std::map<std::string, generator::TraceOutcome> traces;
  traces["a"] = trace(recs[1], recs[1].item.answer);
  traces["b"] = trace(recs[3], recs[3].item.answer == 'A' ? 'B' : 'A');  // mismatched
  traces["c"] = trace(recs[0], std::nullopt);
  traces["x"] = trace(recs[2], recs[2].item.answer);

  ExportOptions opt;
  opt.out_dir = dir / "export";
  opt.run_id = "run1";
  opt.created_at = "2024-01-01T00:00:00Z";
  opt.decontaminated = 3;
  auto s = export_dataset(recs, traces, opt);
  CHECK(s.mcvqa == 5);
  CHECK(s.rlvr == 5);
  CHECK(s.sft == 2);
  CHECK(s.sft_skipped == 2);

  auto mc = lines(opt.out_dir / kMcvqaFile);
  auto rl = lines(opt.out_dir / kRlvrFile);
  auto sft = lines(opt.out_dir / kSftFile);
  REQUIRE(mc.size() == 5);
  std::vector<std::string> ids;
  for (const auto& j : mc) ids.push_back(j["record_id"]);
  CHECK(ids == std::vector<std::string>{"a", "b", "c", "x", "z"});
  for (std::size_t i = 0; i < rl.size(); ++i) {
    const auto& r = *std::find_if(recs.begin(), recs.end(), [&](const auto& x) { return x.record_id == rl[i]["record_id"]; });
    CHECK(rl[i]["prompt"] == schema::render_question(r.item));
    CHECK(rl[i]["gold_answer"] == std::string(1, r.item.answer));
    CHECK(rl[i]["images"] == r.image_refs);
  }
  REQUIRE(sft.size() == 2);
  CHECK(sft[0]["record_id"] == "a");
  CHECK(sft[1]["record_id"] == "x");
  CHECK(sft[0]["trace"] == traces["a"].trace_text);
  CHECK(sft[0]["prompt"] == rl[0]["prompt"]);

  // mcvqa lines are the accepted lines verbatim.
  std::string text = testsupport::slurp(opt.out_dir / kMcvqaFile);
  CHECK(text.find(recs[1].to_line()) != std::string::npos);

  auto card = json::parse(testsupport::slurp(opt.out_dir / kCardFile));
  CHECK(card["item_count"] == 5);
  CHECK(card["decontaminated"] == 3);
  CHECK(card["sft_skipped"] == 2);
  CHECK(card["label_distribution"]["primary"]["Clinical imaging"] == 3);
  CHECK(card["label_distribution"]["primary"]["Microscopy"] == 2);
  CHECK(card["images"] == "by_reference");
}

TEST_CASE("duplicate ids refuse the export") {
  testsupport::TempDir dir;
  ExportOptions opt;
  opt.out_dir = dir / "e";
  try {
    export_dataset({accepted("a"), accepted("a")}, {}, opt);
    FAIL("expected duplicate");
  } catch (const ExportError& e) {
    CHECK(e.kind == ExportErrorKind::DuplicateId);
  }
  CHECK_FALSE(fs::exists(opt.out_dir / kMcvqaFile));
}

TEST_CASE("image bundling copies bytes and rewrites references") {
  testsupport::TempDir dir;
  MemoryContentStore store;
  auto r = accepted("rec/1", 2);
  store.put(r.image_refs[0], testsupport::png_bytes(1));
  store.put(r.image_refs[1], testsupport::encode(testsupport::smooth_image(2), ".jpg"));
  ExportOptions opt;
  opt.out_dir = dir / "e";
  opt.bundle_images = true;
  opt.store = &store;
  auto s = export_dataset({r}, {}, opt);
  CHECK(s.bundled_images == 2);
  auto rl = lines(opt.out_dir / kRlvrFile);
  CHECK(rl[0]["images"] == json::array({"images/rec_1/0.png", "images/rec_1/1.jpg"}));
  CHECK(testsupport::slurp(opt.out_dir / "images/rec_1/0.png") == store.fetch(r.image_refs[0])->bytes);

  auto missing = accepted("m");
  try {
    export_dataset({missing}, {}, opt);
    FAIL("expected missing image");
  } catch (const ExportError& e) {
    CHECK(e.kind == ExportErrorKind::MissingImage);
  }
  opt.store = nullptr;
  CHECK_THROWS(export_dataset({r}, {}, opt));
}

TEST_CASE("traces round-trip and survive a torn tail") {
  testsupport::TempDir dir;
  auto a = accepted("a"), b = accepted("b");
  auto ta = trace(a, a.item.answer);
  ta.provenance = {"m", "h", "v", "t"};
  append_traces(dir / "traces.jsonl", {ta, trace(b, std::nullopt)});
  {
    std::ofstream out(dir / "traces.jsonl", std::ios::app);
    out << R"({"record_id":"c","tra)";
  }
  auto back = read_traces(dir / "traces.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(trace_to_json(back["a"]) == trace_to_json(ta));
  CHECK(back["b"].status == generator::TraceStatus::UnparseableAnswer);
  CHECK(read_traces(dir / "absent.jsonl").empty());
}

TEST_CASE("trace elicitation through the mock backend") {
  auto rubric = rubric::RubricConfig::defaults();
  auto policy = [](const std::string& id) {
    synthetic::RecordScript s;
    if (id == "b") s.trace = "I think the answer is plainly unknowable.";
    return s;
  };
  MemoryContentStore store;
  std::vector<dataset::AcceptedRecord> recs{accepted("a"), accepted("b"), accepted("c")};
  // "c" has no image, so its elicitation fails.
  store.put(recs[0].image_refs[0], testsupport::png_bytes(9));
  store.put(recs[1].image_refs[0], testsupport::png_bytes(9));
  auto mock = std::make_shared<llm::MockBackend>(std::nullopt, synthetic::ScriptedResponder(rubric, policy));
  llm::Gateway gw(mock, testsupport::profile("tracer"), testsupport::no_sleep);
  auto batch = elicit_traces(recs, gw, prompt::PromptSet::builtin(), store, 4);
  REQUIRE(batch.traces.size() == 2);
  CHECK(batch.traces[0].status == generator::TraceStatus::Agrees);
  CHECK(batch.traces[1].status == generator::TraceStatus::UnparseableAnswer);
  REQUIRE(batch.failures.size() == 1);
  CHECK(batch.failures[0].first == "c");
}
