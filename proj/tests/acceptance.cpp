// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "contamination.hpp"
#include "fuzz.hpp"
#include "harness.hpp"
#include "oracle.hpp"
#include "vqasynth/decontam.hpp"
#include "vqasynth/rubric.hpp"
#include "vqasynth/schema.hpp"

using namespace vqasynth;
using nlohmann::json;
using testsupport::World;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. aggregate_score against the brute-force oracle on random rubrics.
Verdict scoring_oracle() {
  auto t0 = Clock::now();
  std::mt19937 rng(20240601);
  std::size_t patterns = 0, mismatches = 0;
  for (int r = 0; r < 100; ++r) {
    auto c = oracle::random_rubric(rng);
    std::vector<int> pw, nw;
    for (const auto& p : c.positives) pw.push_back(p.weight);
    for (const auto& p : c.penalties) nw.push_back(p.weight);
    auto rep = rubric::enumerate_acceptance_patterns(c);
    for (std::uint32_t m = 0; m < (1U << (pw.size() + nw.size())); ++m) {
      std::vector<bool> aw(pw.size()), tr(nw.size());
      for (std::size_t i = 0; i < pw.size(); ++i) aw[i] = (m >> i) & 1U;
      for (std::size_t j = 0; j < nw.size(); ++j) tr[j] = (m >> (pw.size() + j)) & 1U;
      auto want = oracle::score(pw, aw, nw, tr, c.tau.numerator(), c.tau.denominator());
      auto [ps, ns] = rubric::sheets_for_mask(c, m);
      auto got = rubric::aggregate_score(ps, ns, c);
      bool same = got.raw_numerator == want.raw && got.value.numerator() == want.num &&
                  got.value.denominator() == want.den && got.accepted == want.accepted &&
                  rep.outcomes[m].accepted == want.accepted;
      mismatches += !same;
      ++patterns;
    }
  }
  double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60.0,
          fmt("100 rubrics, %zu patterns, %zu mismatches, %.1fs (limit 60s)", patterns, mismatches, secs)};
}

// 2. Default rubric: only the perfect sheet clears tau.
Verdict default_threshold() {
  auto c = rubric::RubricConfig::defaults();
  auto rep = rubric::enumerate_acceptance_patterns(c);
  std::vector<std::uint32_t> accepted;
  for (const auto& o : rep.outcomes)
    if (o.accepted) accepted.push_back(o.mask);
  std::uint32_t perfect = (1U << c.positives.size()) - 1;  // all positives, no penalties
  // Independent check of the margin: (1 - tau) * W < 1, i.e. (den - num) * W < den.
  bool margin = (c.tau.denominator() - c.tau.numerator()) * c.positive_weight() < c.tau.denominator();
  bool ok = rep.denominator == 17 && rep.outcomes.size() == 1024 && accepted == std::vector<std::uint32_t>{perfect} && margin;
  return {ok, fmt("W=%lld, tau=%s, %zu/%zu patterns accepted, accepted mask 0x%x", static_cast<long long>(rep.denominator),
                  rubric::format_decimal(c.tau, 4).c_str(), accepted.size(), rep.outcomes.size(),
                  accepted.empty() ? 0U : accepted[0])};
}

// 3. All 128 essential pass/fail combinations.
Verdict gate_semantics() {
  auto c = rubric::RubricConfig::defaults();
  std::size_t passes = 0;
  bool only_all = true;
  for (std::uint32_t m = 0; m < 128; ++m) {
    rubric::VerdictSheet s;
    s.stage = 1;
    for (std::size_t i = 0; i < c.essentials.size(); ++i) {
      bool ok = (m >> i) & 1U;
      s.entries.push_back({c.essentials[i].id, ok, ok ? 5 : 0, "r"});
    }
    auto g = rubric::essential_gate(s, c);
    passes += g.passed;
    if (g.passed != (m == 127)) only_all = false;
    if (!g.passed && g.failed_ids.size() != static_cast<std::size_t>(7 - std::popcount(m))) only_all = false;
  }
  return {passes == 1 && only_all, fmt("%zu of 128 combinations pass; all-pass only: %s", passes, only_all ? "yes" : "no")};
}

// 4. Schema fuzz.
Verdict schema_fuzz() {
  std::mt19937 rng(99);
  std::size_t accepted = 0, bad = 0, roundtrip_fail = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    json base = fuzz::valid_payload(rng);
    std::string raw = fuzz::mutate(base, rng);
    auto r = schema::parse_strict(raw);
    auto* item = std::get_if<schema::McvqaItem>(&r);
    if (!item) continue;
    ++accepted;
    if (!fuzz::invariant_violations(*item).empty()) ++bad;
    std::string ser = schema::serialize_canonical(*item);
    auto back = schema::parse_strict(ser);
    auto* again = std::get_if<schema::McvqaItem>(&back);
    if (!again || !(*again == *item) || schema::serialize_canonical(*again) != ser) ++roundtrip_fail;
  }
  return {bad == 0 && roundtrip_fail == 0 && accepted > 0,
          fmt("%d mutations, %zu accepted, %zu invariant violations, %zu round-trip failures", n, accepted, bad,
              roundtrip_fail)};
}

// Scripted truth for 200 records: 50 ungradable, 30 gate failures, 30 below tau.
synthetic::RecordScript scripted(const std::string& id) {
  synthetic::RecordScript s;
  int k = std::stoi(id.substr(4)) % 20;
  if (k < 5) s.stage1_gradable = false;
  else if (k < 8) s.failed_essentials = {k == 5 ? "diagnosis_leak" : k == 6 ? "single_correct_option" : "clinical_validity"};
  else if (k < 10) s.missed_positives = {"plausible_distractors"};
  else if (k == 10) s.triggered_penalties = {"synonym_drift"};
  return s;
}

// Delays every call so a child process can be killed mid-run.
class Slow : public llm::Backend {
public:
  explicit Slow(std::shared_ptr<llm::Backend> inner) : inner_(std::move(inner)) {}
  llm::AttemptResult send(const llm::ChatRequest& r, std::chrono::milliseconds t) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(4));
    return inner_->send(r, t);
  }

private:
  std::shared_ptr<llm::Backend> inner_;
};

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

struct Criterion5 {
  Verdict verdict;
  std::vector<llm::MockCall> verifier_calls;
  fs::path audit;
  std::unique_ptr<World> world;
};

// 5. Funnel truth, monotonicity and kill-and-resume identity.
Criterion5 determinism_and_resume() {
  auto t0 = Clock::now();
  Criterion5 out;
  out.world = std::make_unique<World>(200, scripted);
  World& w = *out.world;
  auto ref = pipeline::run(w.config("ref"), w.backends());
  out.verifier_calls = w.ver_mock->calls();
  out.audit = w.dir / "ref" / pipeline::kAuditFile;
  pipeline::FunnelCounts truth{200, 200, 200, 150, 120, 90};

  // Child runs the same pipeline slowly and is SIGKILLed mid-flight.
  std::fflush(nullptr);
  pid_t pid = fork();
  if (pid == 0) {
    auto slow_gen = std::make_shared<Slow>(w.gen_mock), slow_ver = std::make_shared<Slow>(w.ver_mock);
    llm::Gateway g(slow_gen, testsupport::profile("gen-model"), testsupport::no_sleep);
    llm::Gateway v(slow_ver, testsupport::profile("ver-model"), testsupport::no_sleep);
    try {
      pipeline::run(w.config("cut"), {g, v, w.store});
    } catch (...) {
      _exit(2);
    }
    _exit(0);
  }
  fs::path journal = w.dir / "cut" / pipeline::kJournalFile;
  bool killed = false;
  for (int i = 0; i < 20000; ++i) {
    if (fs::exists(journal) && line_count(journal) >= 250) {
      kill(pid, SIGKILL);
      killed = true;
      break;
    }
    int status = 0;
    if (waitpid(pid, &status, WNOHANG) == pid) {
      pid = -1;
      break;
    }
    std::this_thread::sleep_for(std::chrono::microseconds(500));
  }
  if (pid > 0) waitpid(pid, nullptr, 0);
  std::size_t lines_at_kill = fs::exists(journal) ? line_count(journal) : 0;

  w.reset();
  auto resumed = pipeline::resume(w.config("cut"), w.backends());
  std::size_t resume_calls = w.calls();
  bool identical = testsupport::outputs(w.dir / "cut") == testsupport::outputs(w.dir / "ref");
  double secs = seconds_since(t0);

  bool ok = ref.funnel == truth && ref.funnel.monotone() && killed && resumed.complete() && identical &&
            resumed.funnel == truth && resume_calls < 200 * 4 && secs < 120.0;
  auto f = ref.funnel;
  out.verdict = {ok, fmt("funnel %zu/%zu/%zu/%zu/%zu/%zu (want 200/200/200/150/120/90), monotone %s, killed at %zu "
                         "journal lines, resume made %zu calls, outputs identical %s, %.1fs (limit 120s)",
                         f.ingested, f.prefiltered, f.generated, f.gradable, f.gate_passed, f.accepted,
                         f.monotone() ? "yes" : "no", lines_at_kill, resume_calls, identical ? "yes" : "no", secs)};
  return out;
}

// 6. No stage-2/3 request for a record whose stage-1 gate failed.
Verdict short_circuit(const Criterion5& c5) {
  std::set<std::string> gate_failed;
  std::ifstream in(c5.audit);
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    if (j["decision"]["cause"] == "essential_gate") gate_failed.insert(j["record_id"].get<std::string>());
  }
  std::size_t offending = 0, later_stage_calls = 0;
  for (const auto& call : c5.verifier_calls) {
    auto slash = call.request_tag.rfind('/');
    std::string id = call.request_tag.substr(0, slash), tag = call.request_tag.substr(slash + 1);
    if (tag == "verify2" || tag == "verify3") {
      ++later_stage_calls;
      offending += gate_failed.count(id);
    }
  }
  return {offending == 0 && gate_failed.size() == 30 && later_stage_calls > 0,
          fmt("%zu gate-failed records, %zu stage-2/3 calls logged, %zu for gate-failed records", gate_failed.size(),
              later_stage_calls, offending)};
}

// 7. Planted duplicates and re-encoded images.
Verdict decontamination() {
  using namespace decontam;
  auto c = testsupport::make_contamination(500, 500, 10, 10, 1234, 0);
  EvalSuiteIndex index;
  index.add(c.suite, c.suite_images);
  auto report = detect_overlap(dataset_entries(c.records, c.dataset_images), index);
  std::size_t correct = 0;
  std::set<std::string> found;
  for (const auto& p : report) {
    auto it = c.planted_from.find(p.record_id);
    if (it != c.planted_from.end() && it->second == p.suite_item_id &&
        (p.kind == MatchKind::Text ? c.text_plants : c.image_plants).count(p.record_id))
      ++correct;
    found.insert(p.record_id);
  }
  std::size_t misses = 0;
  for (const auto& [id, _] : c.planted_from) misses += !found.count(id);

  // Perturbation suite: each suite image re-encoded as JPEG at a spread of qualities.
  std::mt19937 rng(77);
  std::vector<dataset::AcceptedRecord> perturbed;
  MemoryContentStore images;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& s = c.suite[i];
    auto bytes = c.suite_images.fetch(s.image_locators[0])->bytes;
    cv::Mat img = cv::imdecode(std::vector<uchar>(bytes.begin(), bytes.end()), cv::IMREAD_GRAYSCALE);
    dataset::AcceptedRecord r;
    r.record_id = "p" + std::to_string(i);
    r.item = synthetic::default_item(r.record_id);
    r.item.stem = testsupport::random_sentence(rng, 12) + "?";
    r.image_refs = {"p/" + std::to_string(i) + ".jpg"};
    images.put(r.image_refs[0], testsupport::encode(img, ".jpg", 50 + static_cast<int>(i % 46)));
    perturbed.push_back(std::move(r));
  }
  std::set<std::string> caught;
  for (const auto& p : detect_overlap(dataset_entries(perturbed, images), index))
    if (p.kind == MatchKind::Image && p.suite_item_id == "q" + p.record_id.substr(1)) caught.insert(p.record_id);
  double recall = static_cast<double>(caught.size()) / 200.0;

  bool ok = report.size() == 20 && correct == 20 && misses == 0 && recall >= 0.95;
  return {ok, fmt("%zu detections (%zu correct, %zu misses, want exactly 20); JPEG re-encode recall %.1f%% (>= 95%%)",
                  report.size(), correct, misses, 100.0 * recall)};
}

// 8. The two worked cases through the mock-verified pipeline.
Verdict case_fixtures(const fs::path& source_dir) {
  std::ifstream in(source_dir / "tests" / "data" / "cases.json");
  if (!in) return {false, "tests/data/cases.json not found"};
  json cases = json::parse(in);
  std::map<std::string, json> by_id;
  for (const auto& c : cases) by_id[c["record"]["record_id"]] = c;

  auto policy = [by_id](const std::string& id) {
    const auto& c = by_id.at(id);
    synthetic::RecordScript s;
    s.item_json = c["item"].dump();
    for (const auto& e : c["verdict"]["failed_essentials"]) s.failed_essentials.insert(e.get<std::string>());
    for (const auto& e : c["verdict"]["missed_positives"]) s.missed_positives.insert(e.get<std::string>());
    for (const auto& e : c["verdict"]["triggered_penalties"]) s.triggered_penalties.insert(e.get<std::string>());
    return s;
  };
  World w(0, policy);
  for (const auto& c : cases) {
    corpus::FigureRecord r;
    const auto& j = c["record"];
    r.record_id = j["record_id"];
    r.image_refs = j["image_refs"].get<std::vector<std::string>>();
    r.caption = j["caption"];
    r.references = j["references"].get<std::vector<std::string>>();
    r.primary_label = j["primary_label"];
    r.secondary_labels = j["secondary_labels"].get<std::vector<std::string>>();
    r.source_doc_id = j["source_doc_id"];
    testsupport::add_images(w.store, r);
    w.records.push_back(r);
  }
  testsupport::write_manifest(w.dir / "manifest.jsonl", w.records);
  auto result = pipeline::run(w.config("out"), w.backends());

  std::map<std::string, json> audit;
  std::ifstream a(w.dir / "out" / pipeline::kAuditFile);
  std::string line;
  while (std::getline(a, line)) {
    auto j = json::parse(line);
    audit[j["record_id"]] = j;
  }
  std::vector<std::string> notes;
  bool ok = result.complete();
  for (const auto& [id, c] : by_id) {
    const auto& want = c["expect"];
    if (!audit.count(id)) {
      ok = false;
      notes.push_back(id + ": no audit line");
      continue;
    }
    const auto& d = audit[id]["decision"];
    bool match = d["accepted"] == want["accepted"];
    if (!want["accepted"].get<bool>()) {
      match = match && d["stage"] == want["stage"] && d["cause"] == want["cause"] &&
              audit[id]["gate_failed"] == want["failed"];
      // The stem restates the caption's findings, and nothing past stage 1 was asked.
      for (const auto& call : w.ver_mock->calls())
        if (call.request_tag.starts_with(id + "/") && !call.request_tag.ends_with("/verify1")) match = false;
    }
    ok = ok && match;
    notes.push_back(id + (d["accepted"].get<bool>() ? " accepted" : " rejected at stage " + d["stage"].dump() + " (" +
                                                                      d["cause"].get<std::string>() + ")"));
  }
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

// 9. Simulated funnel against the configured stage probabilities.
Verdict funnel_shape() {
  auto t0 = Clock::now();
  auto rubric = rubric::RubricConfig::defaults();
  const double g = 23635.0 / 23788.0, q = 22903.0 / 23635.0, a = 13087.0 / 22903.0;
  World w(5000, synthetic::calibrated(rubric, {g, q, a}, 2025));
  auto r = pipeline::run(w.config("out"), w.backends());
  const auto& f = r.funnel;
  double rg = static_cast<double>(f.gradable) / static_cast<double>(f.generated);
  double rq = static_cast<double>(f.gate_passed) / static_cast<double>(f.gradable);
  double ra = static_cast<double>(f.accepted) / static_cast<double>(f.gate_passed);
  bool ok = f.generated == 5000 && std::abs(rg - g) <= 0.03 && std::abs(rq - q) <= 0.03 && std::abs(ra - a) <= 0.03;
  return {ok, fmt("gradable %.2f%% (target %.2f%%), gate %.2f%% (target %.2f%%), accepted %.2f%% (target %.2f%%), "
                  "tolerance +/-3pp, %.1fs",
                  100 * rg, 100 * g, 100 * rq, 100 * q, 100 * ra, 100 * a, seconds_since(t0))};
}

} // namespace

int main() {
  const char* src = std::getenv("VQASYNTH_SOURCE_DIR");
  fs::path source_dir = src ? fs::path(src) : fs::path(VQASYNTH_SOURCE_DIR_DEFAULT);

  int failures = 0;
  auto report = [&](int n, const char* name, const Verdict& v) {
    std::printf("[%s] %d %s: %s\n", v.pass ? "PASS" : "FAIL", n, name, v.detail.c_str());
    std::fflush(stdout);
    failures += !v.pass;
  };
  auto guarded = [](auto&& f) -> Verdict {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "scoring oracle equivalence", guarded(scoring_oracle));
  report(2, "default threshold accepts only the perfect sheet", guarded(default_threshold));
  report(3, "essential gate semantics", guarded(gate_semantics));
  report(4, "schema fuzz", guarded(schema_fuzz));
  Criterion5 c5;
  try {
    c5 = determinism_and_resume();
  } catch (const std::exception& e) {
    c5.verdict = {false, std::string("exception: ") + e.what()};
  }
  report(5, "determinism and resumability", c5.verdict);
  report(6, "short-circuit economy", c5.world ? guarded([&] { return short_circuit(c5); })
                                               : Verdict{false, "criterion 5 produced no call log"});
  report(7, "decontamination recall", guarded(decontamination));
  report(8, "case fixture regression", guarded([&] { return case_fixtures(source_dir); }));
  report(9, "funnel shape", guarded(funnel_shape));
  std::printf("%d of 9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
