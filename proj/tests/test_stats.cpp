#include <doctest.h>

#include <fstream>

#include "harness.hpp"
#include "vqasynth/stats.hpp"

using namespace vqasynth;

TEST_CASE("stats summarize a run directory") {
  auto policy = [](const std::string& id) {
    synthetic::RecordScript s;
    int n = std::stoi(id.substr(4));
    if (n % 4 == 1) s.failed_essentials = {"diagnosis_leak"};
    if (n % 4 == 2) s.triggered_penalties = {"synonym_drift"};
    if (n % 4 == 3) s.item_parses = false;
    return s;
  };
  testsupport::World w(20, policy);
  auto run = pipeline::run(w.config("out"), w.backends());
  {
    std::ofstream audit(w.dir / "out" / pipeline::kAuditFile, std::ios::app);
    audit << "{broken\n";
  }
  auto s = stats::compute(w.dir / "out");
  CHECK(s.records == 20);
  CHECK(s.skipped_lines == 1);
  CHECK(s.funnel["accepted"] == 5);
  CHECK(s.status_counts["accepted"] == 5);
  CHECK(s.status_counts["rejected"] == 15);
  CHECK(s.reject_causes["essential_gate@stage1"] == 5);
  CHECK(s.reject_causes["below_threshold@stage3"] == 5);
  CHECK(s.reject_causes["ungradable@stage0"] + s.reject_causes["ungradable@stage1"] == 5);

  CHECK(s.criteria["diagnosis_leak"].evaluated == 15);
  CHECK(s.criteria["diagnosis_leak"].failed == 5);
  CHECK(s.criteria["clinical_validity"].failed == 0);
  CHECK(s.criteria["synonym_drift"].evaluated == 10);
  CHECK(s.criteria["synonym_drift"].failed == 5);
  CHECK(s.criteria["synonym_drift"].rate() == doctest::Approx(0.5));
  CHECK(s.score_histogram["1.0000"] == 5);
  CHECK(s.score_histogram["0.9412"] == 5);
  CHECK(s.primary_labels["Clinical imaging"] == 20);
  CHECK(s.usage.total() == run.usage.total());
  auto j = s.to_json();
  CHECK(j.contains("criteria"));
  CHECK(j["records"] == 20);
}

TEST_CASE("stats need an audit log") {
  testsupport::TempDir dir;
  CHECK_THROWS(stats::compute(dir.path));
  std::ofstream(dir / "audit.jsonl").close();
  auto s = stats::compute(dir.path);
  CHECK(s.records == 0);
  CHECK(s.funnel.is_null());
}
