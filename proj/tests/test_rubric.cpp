#include <doctest.h>

#include <fstream>
#include <set>

#include "oracle.hpp"
#include "vqasynth/rubric.hpp"

using namespace vqasynth::rubric;

namespace {

VerdictSheet full_sheet(const std::vector<Criterion>& cs, int stage, const std::set<std::string>& off = {}) {
  VerdictSheet s;
  s.stage = stage;
  for (const auto& c : cs) {
    bool on = stage == 3 ? off.count(c.id) > 0 : off.count(c.id) == 0;
    s.entries.push_back({c.id, on, on ? c.weight : 0, "r"});
  }
  return s;
}

} // namespace

TEST_CASE("default rubric shape") {
  auto c = RubricConfig::defaults();
  CHECK(c.essentials.size() == 7);
  CHECK(c.positives.size() == 6);
  CHECK(c.penalties.size() == 4);
  CHECK(c.positive_weight() == 17);
  CHECK(c.tau == Rational(9670, 10000));
  std::vector<std::string> ess;
  for (const auto& e : c.essentials) ess.push_back(e.name);
  CHECK(ess == std::vector<std::string>{"Stem Self-contained", "Vocabulary Constraint", "Diagnosis Leak",
                                        "Single Correct Option", "Option Type Consistency", "Clinical Validity",
                                        "Image-Text Consistency"});
  std::vector<int> pen;
  for (const auto& p : c.penalties) pen.push_back(p.weight);
  CHECK(pen == std::vector<int>{-2, -1, -2, -2});
}

TEST_CASE("criterion weight ranges follow the tier") {
  CHECK_NOTHROW(validate_criterion({"a", "a", Tier::Essential, 5, ""}));
  CHECK_THROWS_AS(validate_criterion({"a", "a", Tier::Essential, 4, ""}), RubricError);
  CHECK_THROWS_AS(validate_criterion({"a", "a", Tier::Important, 2, ""}), RubricError);
  CHECK_THROWS_AS(validate_criterion({"a", "a", Tier::Optional, 3, ""}), RubricError);
  CHECK_THROWS_AS(validate_criterion({"a", "a", Tier::Penalty, -3, ""}), RubricError);
  CHECK_THROWS_AS(validate_criterion({"a", "a", Tier::Penalty, 1, ""}), RubricError);
}

TEST_CASE("config validation") {
  auto c = RubricConfig::defaults();
  SUBCASE("six essentials") {
    c.essentials.pop_back();
    CHECK_THROWS_AS(c.validate(), RubricError);
  }
  SUBCASE("three positives") {
    c.positives.resize(3);
    CHECK_THROWS_AS(c.validate(), RubricError);
  }
  SUBCASE("tau above one") {
    c.tau = Rational(11, 10);
    CHECK_THROWS_AS(c.validate(), RubricError);
  }
  SUBCASE("duplicate ids") {
    c.positives[1].id = c.positives[0].id;
    CHECK_THROWS_AS(c.validate(), RubricError);
  }
}

TEST_CASE("decimal parsing is exact") {
  CHECK(parse_decimal("0.9670") == Rational(967, 1000));
  CHECK(parse_decimal("1") == Rational(1));
  CHECK(parse_decimal(" .5 ") == Rational(1, 2));
  CHECK(parse_decimal("-0.25") == Rational(-1, 4));
  CHECK_THROWS_AS(parse_decimal("0.9x"), RubricError);
  CHECK_THROWS_AS(parse_decimal(""), RubricError);
  CHECK(format_decimal(Rational(16, 17), 4) == "0.9412");
  CHECK(format_decimal(Rational(15, 17), 4) == "0.8824");
  CHECK(format_decimal(Rational(1), 4) == "1.0000");
  CHECK(format_decimal(Rational(1, 8), 2) == "0.13");
}

TEST_CASE("tau accepted as decimal string, fraction or number") {
  auto j = RubricConfig::defaults().to_json();
  for (auto v : {nlohmann::json("0.9670"), nlohmann::json("967/1000"), nlohmann::json(0.967)}) {
    j["tau"] = v;
    CHECK(RubricConfig::from_json(j).tau == Rational(967, 1000));
  }
  CHECK(RubricConfig::from_json(RubricConfig::defaults().to_json()).to_json() == RubricConfig::defaults().to_json());
}

TEST_CASE("shipped rubric config equals the defaults") {
  const char* src = std::getenv("VQASYNTH_SOURCE_DIR");
  REQUIRE(src != nullptr);
  std::ifstream in(std::string(src) + "/config/rubric.json");
  auto j = nlohmann::json::parse(in, nullptr, true, true);
  CHECK(RubricConfig::from_json(j).hash() == RubricConfig::defaults().hash());
}

TEST_CASE("essential gate") {
  auto c = RubricConfig::defaults();
  CHECK(essential_gate(full_sheet(c.essentials, 1), c).passed);
  auto g = essential_gate(full_sheet(c.essentials, 1, {"diagnosis_leak"}), c);
  CHECK_FALSE(g.passed);
  CHECK(g.failed_ids == std::vector<std::string>{"diagnosis_leak"});

  auto six = full_sheet(c.essentials, 1);
  six.entries.pop_back();
  try {
    essential_gate(six, c);
    FAIL("expected IncompleteSheet");
  } catch (const RubricError& e) {
    CHECK(e.kind == RubricErrorKind::IncompleteSheet);
  }
  auto extra = full_sheet(c.essentials, 1);
  extra.entries.push_back({"bonus", true, 5, "r"});
  try {
    essential_gate(extra, c);
    FAIL("expected UnknownCriterion");
  } catch (const RubricError& e) {
    CHECK(e.kind == RubricErrorKind::UnknownCriterion);
  }
}

TEST_CASE("aggregate score examples under the default rubric") {
  auto c = RubricConfig::defaults();
  auto pos = full_sheet(c.positives, 2);
  auto pen = full_sheet(c.penalties, 3);

  auto s = aggregate_score(pos, pen, c);
  CHECK(s.raw_numerator == 17);
  CHECK(s.denominator == 17);
  CHECK(s.value == Rational(1));
  CHECK(s.accepted);

  s = aggregate_score(full_sheet(c.positives, 2, {"json_schema_compliance"}), pen, c);
  CHECK(s.value == Rational(16, 17));
  CHECK_FALSE(s.accepted);

  s = aggregate_score(pos, full_sheet(c.penalties, 3, {"multiple_keys"}), c);
  CHECK(s.value == Rational(15, 17));
  CHECK_FALSE(s.accepted);

  std::set<std::string> all_pos, all_pen;
  for (const auto& p : c.positives) all_pos.insert(p.id);
  for (const auto& p : c.penalties) all_pen.insert(p.id);
  s = aggregate_score(full_sheet(c.positives, 2, all_pos), full_sheet(c.penalties, 3, all_pen), c);
  CHECK(s.raw_numerator == -7);
  CHECK(s.value == Rational(0));
}

TEST_CASE("zero denominator") {
  auto c = RubricConfig::defaults();
  c.positives.clear();
  try {
    aggregate_score(VerdictSheet{2, {}, {}}, full_sheet(c.penalties, 3), c);
    FAIL("expected ZeroDenominator");
  } catch (const RubricError& e) {
    CHECK(e.kind == RubricErrorKind::ZeroDenominator);
  }
}

TEST_CASE("accept") {
  QualityScore perfect{17, 17, Rational(1), true};
  QualityScore short_one{16, 17, Rational(16, 17), false};
  GateResult pass{true, {}}, fail{false, {"diagnosis_leak"}};
  CHECK(accept(pass, perfect).accepted);
  auto d = accept(fail, perfect);
  CHECK_FALSE(d.accepted);
  CHECK(d.stage == 1);
  CHECK(d.cause == RejectCause::EssentialGate);
  d = accept(pass, short_one);
  CHECK_FALSE(d.accepted);
  CHECK(d.cause == RejectCause::BelowThreshold);
  // Gate failure decides regardless of the score.
  CHECK(accept(fail, short_one).stage == 1);
  CHECK(accept(fail, std::nullopt).stage == 1);
}

TEST_CASE("enumeration matches the brute-force oracle on random rubrics") {
  std::mt19937 rng(11);
  for (int t = 0; t < 20; ++t) {
    auto c = oracle::random_rubric(rng);
    auto rep = enumerate_acceptance_patterns(c);
    auto ser = enumerate_acceptance_patterns_serial(c);
    REQUIRE(rep.outcomes.size() == ser.outcomes.size());
    std::vector<int> pw, nw;
    for (const auto& p : c.positives) pw.push_back(p.weight);
    for (const auto& p : c.penalties) nw.push_back(p.weight);
    for (std::uint32_t m = 0; m < rep.outcomes.size(); ++m) {
      std::vector<bool> aw(pw.size()), tr(nw.size());
      for (std::size_t i = 0; i < pw.size(); ++i) aw[i] = (m >> i) & 1;
      for (std::size_t j = 0; j < nw.size(); ++j) tr[j] = (m >> (pw.size() + j)) & 1;
      auto o = oracle::score(pw, aw, nw, tr, c.tau.numerator(), c.tau.denominator());
      auto [ps, ns] = sheets_for_mask(c, m);
      auto s = aggregate_score(ps, ns, c);
      CHECK(s.raw_numerator == o.raw);
      CHECK(s.value.numerator() == o.num);
      CHECK(s.value.denominator() == o.den);
      CHECK(s.accepted == o.accepted);
      CHECK(rep.outcomes[m].accepted == o.accepted);
      CHECK(ser.outcomes[m].accepted == o.accepted);
      CHECK(rep.outcomes[m].raw_numerator == ser.outcomes[m].raw_numerator);
    }
    CHECK(rep.accepted_count == ser.accepted_count);
  }
}

TEST_CASE("default rubric accepts only the perfect sheet") {
  auto rep = enumerate_acceptance_patterns(RubricConfig::defaults());
  CHECK(rep.outcomes.size() == 1024);
  CHECK(rep.accepted_count == 1);
  CHECK(rep.outcomes[0b0000111111].accepted);
}

TEST_CASE("all-weight-4 rubric accepts no partial pattern") {
  auto c = RubricConfig::defaults();
  c.positives.clear();
  for (int i = 0; i < 8; ++i) c.positives.push_back({"i" + std::to_string(i), "I", Tier::Important, 4, ""});
  c.penalties.clear();
  auto rep = enumerate_acceptance_patterns(c);
  CHECK(rep.denominator == 32);
  CHECK(rep.accepted_count == 1);
  CHECK(rep.outcomes[255].accepted);
}

TEST_CASE("enumeration bound") {
  auto c = RubricConfig::defaults();
  c.positives.clear();
  for (int i = 0; i < 8; ++i) c.positives.push_back({"p" + std::to_string(i), "P", Tier::Optional, 1, ""});
  for (int j = 0; j < 13; ++j) c.penalties.push_back({"x" + std::to_string(j), "X", Tier::Penalty, -1, ""});
  try {
    enumerate_acceptance_patterns(c);
    FAIL("expected TooManyCriteria");
  } catch (const RubricError& e) {
    CHECK(e.kind == RubricErrorKind::TooManyCriteria);
  }
}

TEST_CASE("monotonicity and clipping over random rubrics") {
  std::mt19937 rng(5);
  for (int t = 0; t < 10; ++t) {
    auto c = oracle::random_rubric(rng);
    auto rep = enumerate_acceptance_patterns(c);
    std::size_t p = c.positives.size(), n = p + c.penalties.size();
    for (std::uint32_t m = 0; m < rep.outcomes.size(); ++m) {
      auto [ps, ns] = sheets_for_mask(c, m);
      auto v = aggregate_score(ps, ns, c).value;
      CHECK(v >= Rational(0));
      CHECK(v <= Rational(1));
      for (std::size_t b = 0; b < n; ++b) {
        if ((m >> b) & 1U) continue;
        auto [ps2, ns2] = sheets_for_mask(c, m | (1U << b));
        auto v2 = aggregate_score(ps2, ns2, c).value;
        if (b < p) CHECK(v2 >= v);
        else CHECK(v2 <= v);
      }
    }
  }
}
