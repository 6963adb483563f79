#include <doctest.h>

#include "support.hpp"
#include "vqasynth/synthetic.hpp"
#include "vqasynth/verifier.hpp"

using namespace vqasynth;
using namespace vqasynth::verifier;
using nlohmann::json;

namespace {

const auto kRubric = rubric::RubricConfig::defaults();

// Verdict JSON with every criterion at its pass value, then overrides.
json verdict(int stage, const std::map<std::string, json>& overrides = {}) {
  json arr = json::array();
  for (const auto& c : kRubric.stage_criteria(stage)) {
    json e{{"id", c.id}, {"score", stage == 3 ? 0 : c.weight}, {"reason", "ok"}};
    auto o = overrides.find(c.id);
    if (o != overrides.end()) {
      if (o->second.is_null()) continue;
      e = o->second;
    }
    arr.push_back(e);
  }
  return json{{"criteria", arr}};
}

VerdictDiagnostics diag_of(const std::string& raw, int stage) {
  auto r = parse_verdict(raw, stage, kRubric);
  REQUIRE(std::holds_alternative<VerdictDiagnostics>(r));
  return std::get<VerdictDiagnostics>(r);
}

StageResult stage_of(int stage, const json& v) { return make_stage_result(stage, v.dump(), {}, {}, kRubric); }

const schema::McvqaItem kItem = synthetic::default_item("v");

} // namespace

TEST_CASE("well-formed verdicts parse at each stage") {
  for (int s : {1, 2, 3}) {
    auto r = parse_verdict("Verdict follows.\n" + verdict(s).dump(2), s, kRubric);
    REQUIRE(std::holds_alternative<rubric::VerdictSheet>(r));
    auto sheet = std::get<rubric::VerdictSheet>(r);
    CHECK(sheet.stage == s);
    CHECK(sheet.entries.size() == kRubric.stage_criteria(s).size());
  }
}

TEST_CASE("verdict violations") {
  CHECK(diag_of("nothing here", 1).has(VerdictViolation::NoJsonObject));
  CHECK(diag_of(R"({"items":[]})", 1).has(VerdictViolation::MissingCriteria));
  CHECK(diag_of(R"({"criteria":{}})", 1).has(VerdictViolation::WrongType));
  CHECK(diag_of(verdict(1, {{"diagnosis_leak", nullptr}}).dump(), 1).has(VerdictViolation::MissingCriterion));
  CHECK(diag_of(verdict(2, {{"stem_concision", {{"id", "stem_concision"}, {"score", 1}, {"reason", "r"}}}}).dump(), 2)
            .has(VerdictViolation::NonBinaryScore));
  CHECK(diag_of(verdict(2, {{"stem_concision", {{"id", "stem_concision"}, {"score", "2"}}}}).dump(), 2)
            .has(VerdictViolation::NonBinaryScore));
  CHECK(diag_of(verdict(3, {{"synonym_drift", {{"id", "synonym_drift"}, {"score", -1}, {"reason", "  "}}}}).dump(), 3)
            .has(VerdictViolation::MissingReason));
  auto dup = verdict(1);
  dup["criteria"].push_back(dup["criteria"][0]);
  CHECK(diag_of(dup.dump(), 1).has(VerdictViolation::DuplicateCriterion));
  auto unknown = verdict(2);
  unknown["criteria"].push_back({{"id", "diagnosis_leak"}, {"score", 5}, {"reason", "r"}});
  CHECK(diag_of(unknown.dump(), 2).has(VerdictViolation::UnknownCriterion));
}

TEST_CASE("penalty without reason is fine when not triggered; integral floats accepted") {
  auto v = verdict(3, {{"synonym_drift", {{"id", "synonym_drift"}, {"score", 0}}}});
  CHECK(std::holds_alternative<rubric::VerdictSheet>(parse_verdict(v.dump(), 3, kRubric)));
  auto f = verdict(2, {{"stem_concision", {{"id", "stem_concision"}, {"score", 2.0}, {"reason", "r"}}}});
  CHECK(std::holds_alternative<rubric::VerdictSheet>(parse_verdict(f.dump(), 2, kRubric)));
}

TEST_CASE("volunteered observations are kept apart from scored criteria") {
  auto v = verdict(2);
  v["volunteered"] = json::array({"image is low resolution"});
  auto r = parse_verdict(v.dump(), 2, kRubric);
  REQUIRE(std::holds_alternative<rubric::VerdictSheet>(r));
  CHECK(std::get<rubric::VerdictSheet>(r).volunteered.size() == 1);
  CHECK(std::get<rubric::VerdictSheet>(r).entries.size() == kRubric.positives.size());
}

TEST_CASE("stage prompts list their own criteria only") {
  MemoryContentStore store;
  auto rec = testsupport::make_record("v1", 2);
  testsupport::add_images(store, rec);
  auto prompts = prompt::PromptSet::builtin();
  for (int s : {1, 2, 3}) {
    auto req = build_verifier_prompt(rec, kItem, s, kRubric, prompts, store, {"ver", 0.0, 256});
    auto text = req.all_text();
    CHECK(req.request_tag == "v1/verify" + std::to_string(s));
    CHECK(req.image_count() == 2);
    CHECK(text.find(schema::serialize_canonical(kItem)) != std::string::npos);
    CHECK(text.find(rec.caption) != std::string::npos);
    for (int other : {1, 2, 3})
      for (const auto& c : kRubric.stage_criteria(other))
        CHECK((text.find(c.id) != std::string::npos) == (other == s));
  }
}

TEST_CASE("next_stage and decide") {
  std::vector<StageResult> st;
  CHECK(next_stage(st, kRubric) == 1);
  CHECK_THROWS(decide(st, kRubric, kItem));

  SUBCASE("gate failure stops after stage 1") {
    st.push_back(stage_of(1, verdict(1, {{"clinical_validity", {{"id", "clinical_validity"}, {"score", 0}, {"reason", "x"}}}})));
    CHECK_FALSE(next_stage(st, kRubric));
    auto d = decide(st, kRubric, kItem);
    CHECK(d.decision.stage == 1);
    CHECK(d.decision.cause == rubric::RejectCause::EssentialGate);
    CHECK_FALSE(d.score);
  }
  SUBCASE("ungradable stage 1") {
    st.push_back(make_stage_result(1, "garbage", {}, {}, kRubric));
    CHECK_FALSE(next_stage(st, kRubric));
    CHECK(decide(st, kRubric, kItem).decision.cause == rubric::RejectCause::Ungradable);
  }
  SUBCASE("ungradable stage 2") {
    st.push_back(stage_of(1, verdict(1)));
    CHECK(next_stage(st, kRubric) == 2);
    st.push_back(make_stage_result(2, "{}", {}, {}, kRubric));
    CHECK_FALSE(next_stage(st, kRubric));
    auto d = decide(st, kRubric, kItem);
    CHECK(d.decision.stage == 2);
    CHECK(d.decision.cause == rubric::RejectCause::Ungradable);
  }
  SUBCASE("full pass") {
    st.push_back(stage_of(1, verdict(1)));
    st.push_back(stage_of(2, verdict(2)));
    CHECK(next_stage(st, kRubric) == 3);
    st.push_back(stage_of(3, verdict(3)));
    CHECK_FALSE(next_stage(st, kRubric));
    auto d = decide(st, kRubric, kItem);
    CHECK(d.decision.accepted);
    CHECK(d.score->value == rubric::Rational(1));
  }
  SUBCASE("one penalty rejects at stage 3") {
    st.push_back(stage_of(1, verdict(1)));
    st.push_back(stage_of(2, verdict(2)));
    st.push_back(stage_of(3, verdict(3, {{"synonym_drift", {{"id", "synonym_drift"}, {"score", -1}, {"reason", "adds a size"}}}})));
    auto d = decide(st, kRubric, kItem);
    CHECK_FALSE(d.decision.accepted);
    CHECK(d.decision.stage == 3);
    CHECK(d.decision.cause == rubric::RejectCause::BelowThreshold);
    CHECK(d.score->value == rubric::Rational(16, 17));
  }
}

TEST_CASE("stage results round-trip through json") {
  auto s = make_stage_result(2, verdict(2).dump(), {"m", "h", "v", "t"}, {10, 2}, kRubric);
  auto back = StageResult::from_json(s.to_json(), kRubric);
  CHECK(back.to_json() == s.to_json());
  CHECK(back.gradable());
}

TEST_CASE("verify_item short-circuits on gate failure") {
  MemoryContentStore store;
  auto rec = testsupport::make_record("sc", 1);
  testsupport::add_images(store, rec);
  auto policy = [](const std::string& id) {
    synthetic::RecordScript s;
    if (id == "sc") s.failed_essentials = {"diagnosis_leak"};
    return s;
  };
  auto mock = std::make_shared<llm::MockBackend>(std::nullopt, synthetic::ScriptedResponder(kRubric, policy));
  llm::Gateway gw(mock, testsupport::profile("ver"), testsupport::no_sleep);
  auto r = verify_item(rec, kItem, gw, kRubric, prompt::PromptSet::builtin(), store);
  CHECK(r.decision.cause == rubric::RejectCause::EssentialGate);
  CHECK(r.gate->failed_ids == std::vector<std::string>{"diagnosis_leak"});
  REQUIRE(mock->call_count() == 1);
  CHECK(mock->calls()[0].request_tag == "sc/verify1");
}

TEST_CASE("forbidden term lint") {
  CHECK(forbidden_terms_lint("Based on the CAPTION, what...") == std::vector<std::string>{"caption"});
  CHECK(forbidden_terms_lint("In this context and caption").size() == 2);
  CHECK(forbidden_terms_lint("What is shown?").empty());
}
