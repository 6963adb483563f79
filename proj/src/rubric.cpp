#include "vqasynth/rubric.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "vqasynth/text.hpp"

namespace vqasynth::rubric {

using nlohmann::json;

Rational parse_decimal(const std::string& raw) {
  std::string s = text::trim(raw);
  if (s.empty()) throw RubricError(RubricErrorKind::InvalidConfig, "empty decimal");
  bool negative = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    negative = s[0] == '-';
    ++i;
  }
  std::int64_t num = 0, den = 1;
  bool seen_dot = false, seen_digit = false;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.' && !seen_dot) {
      seen_dot = true;
      continue;
    }
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw RubricError(RubricErrorKind::InvalidConfig, "not a decimal: " + s);
    if (num > 100'000'000'000LL || den > 100'000'000'000LL)
      throw RubricError(RubricErrorKind::InvalidConfig, "decimal too precise: " + s);
    seen_digit = true;
    num = num * 10 + (c - '0');
    if (seen_dot) den *= 10;
  }
  if (!seen_digit) throw RubricError(RubricErrorKind::InvalidConfig, "not a decimal: " + s);
  return Rational(negative ? -num : num, den);
}

std::string format_decimal(const Rational& r, int places) {
  std::int64_t scale = 1;
  for (int i = 0; i < places; ++i) scale *= 10;
  // Round half up on the magnitude.
  std::int64_t n = r.numerator(), d = r.denominator();
  bool neg = n < 0;
  if (neg) n = -n;
  std::int64_t scaled = (n * scale * 2 + d) / (2 * d);
  std::string digits = std::to_string(scaled / scale);
  if (places > 0) {
    std::string frac = std::to_string(scaled % scale);
    digits += "." + std::string(static_cast<std::size_t>(places) - frac.size(), '0') + frac;
  }
  return (neg && scaled != 0 ? "-" : "") + digits;
}

const char* to_string(Tier t) {
  switch (t) {
    case Tier::Essential: return "Essential";
    case Tier::Important: return "Important";
    case Tier::Optional: return "Optional";
    case Tier::Penalty: return "Penalty";
  }
  return "Unknown";
}

Tier tier_from_string(const std::string& s) {
  if (s == "Essential") return Tier::Essential;
  if (s == "Important") return Tier::Important;
  if (s == "Optional") return Tier::Optional;
  if (s == "Penalty") return Tier::Penalty;
  throw RubricError(RubricErrorKind::InvalidConfig, "unknown tier: " + s);
}

void validate_criterion(const Criterion& c) {
  auto bad = [&](const std::string& why) {
    throw RubricError(RubricErrorKind::InvalidConfig, "criterion " + c.id + ": " + why);
  };
  if (c.id.empty()) bad("empty id");
  switch (c.tier) {
    case Tier::Essential:
      if (c.weight != kEssentialWeight) bad("essential weight must be 5");
      break;
    case Tier::Important:
      if (c.weight != 3 && c.weight != 4) bad("important weight must be 3 or 4");
      break;
    case Tier::Optional:
      if (c.weight != 1 && c.weight != 2) bad("optional weight must be 1 or 2");
      break;
    case Tier::Penalty:
      if (c.weight != -1 && c.weight != -2) bad("penalty weight must be -1 or -2");
      break;
  }
}

void RubricConfig::validate(bool strict_counts) const {
  auto fail = [](const std::string& why) { throw RubricError(RubricErrorKind::InvalidConfig, why); };
  std::set<std::string> ids;
  auto check_group = [&](const std::vector<Criterion>& group, std::initializer_list<Tier> tiers, const char* name) {
    for (const auto& c : group) {
      validate_criterion(c);
      if (std::find(tiers.begin(), tiers.end(), c.tier) == tiers.end())
        fail(std::string("criterion ") + c.id + " has tier " + to_string(c.tier) + " in " + name);
      if (!ids.insert(c.id).second) fail("duplicate criterion id " + c.id);
    }
  };
  check_group(essentials, {Tier::Essential}, "essentials");
  check_group(positives, {Tier::Important, Tier::Optional}, "positives");
  check_group(penalties, {Tier::Penalty}, "penalties");
  if (strict_counts) {
    if (essentials.size() != kEssentialCount) fail("exactly 7 essential criteria required");
    if (positives.size() < 4 || positives.size() > 8) fail("between 4 and 8 positive criteria required");
  }
  if (positive_weight() <= 0) fail("total positive weight must be > 0");
  if (tau < 0 || tau > 1) fail("tau must lie in [0, 1]");
}

std::int64_t RubricConfig::positive_weight() const {
  std::int64_t w = 0;
  for (const auto& c : positives) w += c.weight;
  return w;
}

const std::vector<Criterion>& RubricConfig::stage_criteria(int stage) const {
  switch (stage) {
    case 1: return essentials;
    case 2: return positives;
    case 3: return penalties;
  }
  throw RubricError(RubricErrorKind::InvalidConfig, "stage must be 1, 2 or 3");
}

namespace {

json criteria_json(const std::vector<Criterion>& cs) {
  json arr = json::array();
  for (const auto& c : cs)
    arr.push_back({{"id", c.id}, {"name", c.name}, {"tier", to_string(c.tier)}, {"weight", c.weight},
                   {"description", c.description}});
  return arr;
}

std::vector<Criterion> criteria_from_json(const json& j, const char* key) {
  std::vector<Criterion> out;
  if (!j.contains(key)) return out;
  for (const auto& e : j.at(key)) {
    Criterion c;
    c.id = e.at("id").get<std::string>();
    c.name = e.value("name", c.id);
    c.tier = tier_from_string(e.at("tier").get<std::string>());
    c.weight = e.at("weight").get<int>();
    c.description = e.value("description", "");
    out.push_back(std::move(c));
  }
  return out;
}

} // namespace

json RubricConfig::to_json() const {
  return json{{"essentials", criteria_json(essentials)},
              {"positives", criteria_json(positives)},
              {"penalties", criteria_json(penalties)},
              {"tau", std::to_string(tau.numerator()) + "/" + std::to_string(tau.denominator())}};
}

RubricConfig RubricConfig::from_json(const json& j) {
  RubricConfig c;
  try {
    c.essentials = criteria_from_json(j, "essentials");
    c.positives = criteria_from_json(j, "positives");
    c.penalties = criteria_from_json(j, "penalties");
    if (j.contains("tau")) {
      const json& t = j.at("tau");
      if (t.is_string()) {
        std::string s = t.get<std::string>();
        auto slash = s.find('/');
        if (slash != std::string::npos)
          c.tau = Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
        else
          c.tau = parse_decimal(s);
      } else if (t.is_number()) {
        // Shortest round-trip text of the double, e.g. 0.967.
        c.tau = parse_decimal(t.dump());
      } else {
        throw RubricError(RubricErrorKind::InvalidConfig, "tau must be a string or number");
      }
    }
  } catch (const json::exception& e) {
    throw RubricError(RubricErrorKind::InvalidConfig, std::string("rubric config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string RubricConfig::hash() const { return text::sha256_hex(to_json().dump()); }

RubricConfig RubricConfig::defaults() {
  RubricConfig c;
  c.essentials = {
      {"stem_self_contained", "Stem Self-contained", Tier::Essential, 5,
       "The stem is answerable on its own and never mentions the caption, context or source text."},
      {"vocabulary_constraint", "Vocabulary Constraint", Tier::Essential, 5,
       "No clinical facts appear that are unsupported by the image, caption or references."},
      {"diagnosis_leak", "Diagnosis Leak", Tier::Essential, 5,
       "The stem does not restate the diagnosis or key findings verbatim from the sources."},
      {"single_correct_option", "Single Correct Option", Tier::Essential, 5,
       "Exactly one option is the best answer."},
      {"option_type_consistency", "Option Type Consistency", Tier::Essential, 5,
       "All options share the same semantic type."},
      {"clinical_validity", "Clinical Validity", Tier::Essential, 5,
       "Terminology, modality and anatomy are medically correct."},
      {"image_text_consistency", "Image-Text Consistency", Tier::Essential, 5,
       "The question and answer agree with what the image shows and the text states."},
  };
  c.positives = {
      {"plausible_distractors", "Plausible Distractors", Tier::Important, 4,
       "Every distractor is a strong near-miss."},
      {"answer_field_validity", "Answer-field Validity", Tier::Important, 4,
       "The answer exists and matches one option."},
      {"parallel_options", "Parallel Options", Tier::Important, 3,
       "Options are uniform in length and structure."},
      {"clarity_and_focus", "Clarity and Focus", Tier::Important, 3,
       "A single, unambiguous question."},
      {"stem_concision", "Stem Concision", Tier::Optional, 2,
       "The stem is under two sentences and concise."},
      {"json_schema_compliance", "JSON Schema Compliance", Tier::Optional, 1,
       "Exact keys, no extras."},
  };
  c.penalties = {
      {"forbidden_terms", "Forbidden Terms", Tier::Penalty, -2, "The stem contains \"caption\" or \"context\"."},
      {"synonym_drift", "Synonym Drift", Tier::Penalty, -1, "Introduces unsupported specific facts."},
      {"multiple_keys", "Multiple Keys", Tier::Penalty, -2, "More than one option is defensible as correct."},
      {"medical_inaccuracy", "Medical Inaccuracy", Tier::Penalty, -2, "Contains a medical error."},
  };
  c.tau = Rational(9670, 10000);
  return c;
}

const VerdictEntry* VerdictSheet::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

json VerdictSheet::to_json() const {
  json arr = json::array();
  for (const auto& e : entries)
    arr.push_back({{"id", e.id}, {"awarded", e.awarded}, {"score", e.score}, {"reason", e.reason}});
  json out{{"stage", stage}, {"criteria", arr}};
  if (!volunteered.empty()) out["volunteered"] = volunteered;
  return out;
}

namespace {

// Maps each configured criterion to its entry; throws on gaps or strangers.
std::vector<const VerdictEntry*> match_sheet(const VerdictSheet& sheet, const std::vector<Criterion>& criteria) {
  std::unordered_map<std::string, const VerdictEntry*> by_id;
  for (const auto& e : sheet.entries) {
    if (!by_id.emplace(e.id, &e).second)
      throw RubricError(RubricErrorKind::IncompleteSheet, "criterion " + e.id + " has more than one entry");
  }
  std::vector<const VerdictEntry*> out;
  out.reserve(criteria.size());
  for (const auto& c : criteria) {
    auto it = by_id.find(c.id);
    if (it == by_id.end())
      throw RubricError(RubricErrorKind::IncompleteSheet, "stage " + std::to_string(sheet.stage) + " sheet lacks " + c.id);
    out.push_back(it->second);
    by_id.erase(it);
  }
  if (!by_id.empty())
    throw RubricError(RubricErrorKind::UnknownCriterion, "sheet has unconfigured criterion " + by_id.begin()->first);
  return out;
}

} // namespace

GateResult essential_gate(const VerdictSheet& sheet, const RubricConfig& config) {
  auto entries = match_sheet(sheet, config.essentials);
  GateResult g;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (!entries[i]->awarded) g.failed_ids.push_back(config.essentials[i].id);
  g.passed = g.failed_ids.empty();
  return g;
}

QualityScore aggregate_score(const VerdictSheet& positives, const VerdictSheet& penalties, const RubricConfig& config) {
  const std::int64_t w = config.positive_weight();
  if (w <= 0) throw RubricError(RubricErrorKind::ZeroDenominator, "total positive weight is zero");
  auto pos = match_sheet(positives, config.positives);
  auto pen = match_sheet(penalties, config.penalties);

  QualityScore s;
  s.denominator = w;
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (pos[i]->awarded) s.raw_numerator += config.positives[i].weight;
  for (std::size_t j = 0; j < pen.size(); ++j)
    if (pen[j]->awarded) s.raw_numerator += config.penalties[j].weight;

  std::int64_t clipped = std::clamp<std::int64_t>(s.raw_numerator, 0, w);
  s.value = Rational(clipped, w);
  s.accepted = s.value >= config.tau;
  return s;
}

const char* to_string(RejectCause c) {
  switch (c) {
    case RejectCause::Ungradable: return "ungradable";
    case RejectCause::EssentialGate: return "essential_gate";
    case RejectCause::BelowThreshold: return "below_threshold";
  }
  return "unknown";
}

Decision accept(const GateResult& gate, const std::optional<QualityScore>& score) {
  if (!gate.passed) return {false, 1, RejectCause::EssentialGate};
  if (!score) return {false, 2, RejectCause::Ungradable};
  if (!score->accepted) return {false, 3, RejectCause::BelowThreshold};
  return {true, 0, RejectCause::BelowThreshold};
}

json AcceptanceReport::summary_json() const {
  json accepted = json::array();
  for (const auto& o : outcomes)
    if (o.accepted) accepted.push_back(o.mask);
  return json{{"positives", num_positives},
              {"penalties", num_penalties},
              {"denominator", denominator},
              {"tau", format_decimal(tau, 4)},
              {"patterns", outcomes.size()},
              {"accepted", accepted_count},
              {"accepted_masks", accepted}};
}

namespace {

AcceptanceReport prepare_report(const RubricConfig& config) {
  config.validate(false);
  const std::size_t n = config.positives.size() + config.penalties.size();
  if (n > kMaxEnumeratedCriteria)
    throw RubricError(RubricErrorKind::TooManyCriteria,
                      std::to_string(n) + " criteria exceed the enumeration bound of 20");
  AcceptanceReport r;
  r.num_positives = config.positives.size();
  r.num_penalties = config.penalties.size();
  r.denominator = config.positive_weight();
  r.tau = config.tau;
  r.outcomes.resize(std::size_t{1} << n);
  return r;
}

std::vector<std::int64_t> mask_weights(const RubricConfig& config) {
  std::vector<std::int64_t> w;
  for (const auto& c : config.positives) w.push_back(c.weight);
  for (const auto& c : config.penalties) w.push_back(c.weight);
  return w;
}

// value >= tau  <=>  clip(num) * tau_den >= tau_num * W
inline bool meets_tau(std::int64_t num, std::int64_t w, const Rational& tau) {
  std::int64_t clipped = num < 0 ? 0 : (num > w ? w : num);
  return clipped * tau.denominator() >= tau.numerator() * w;
}

} // namespace

AcceptanceReport enumerate_acceptance_patterns(const RubricConfig& config) {
  AcceptanceReport r = prepare_report(config);
  const auto weights = mask_weights(config);
  const int bits = static_cast<int>(weights.size());
  const std::int64_t total = static_cast<std::int64_t>(r.outcomes.size());
  const std::int64_t w = r.denominator;
  const Rational tau = r.tau;
  PatternOutcome* out = r.outcomes.data();
  std::int64_t accepted = 0;

#pragma omp parallel for schedule(static) reduction(+ : accepted)
  for (std::int64_t m = 0; m < total; ++m) {
    std::int64_t num = 0;
    for (int b = 0; b < bits; ++b)
      if ((m >> b) & 1) num += weights[static_cast<std::size_t>(b)];
    bool ok = meets_tau(num, w, tau);
    out[m] = PatternOutcome{static_cast<std::uint32_t>(m), num, ok};
    accepted += ok ? 1 : 0;
  }
  r.accepted_count = static_cast<std::size_t>(accepted);
  return r;
}

AcceptanceReport enumerate_acceptance_patterns_serial(const RubricConfig& config) {
  AcceptanceReport r = prepare_report(config);
  const auto weights = mask_weights(config);
  for (std::size_t m = 0; m < r.outcomes.size(); ++m) {
    std::int64_t num = 0;
    for (std::size_t b = 0; b < weights.size(); ++b)
      if ((m >> b) & 1) num += weights[b];
    bool ok = meets_tau(num, r.denominator, r.tau);
    r.outcomes[m] = PatternOutcome{static_cast<std::uint32_t>(m), num, ok};
    if (ok) ++r.accepted_count;
  }
  return r;
}

std::pair<VerdictSheet, VerdictSheet> sheets_for_mask(const RubricConfig& config, std::uint32_t mask) {
  VerdictSheet pos{2, {}, json::array()}, pen{3, {}, json::array()};
  const std::size_t p = config.positives.size();
  for (std::size_t i = 0; i < p; ++i) {
    bool on = (mask >> i) & 1U;
    pos.entries.push_back({config.positives[i].id, on, on ? config.positives[i].weight : 0, on ? "evidence" : "not met"});
  }
  for (std::size_t j = 0; j < config.penalties.size(); ++j) {
    bool on = (mask >> (p + j)) & 1U;
    pen.entries.push_back({config.penalties[j].id, on, on ? config.penalties[j].weight : 0, on ? "concrete reason" : ""});
  }
  return {std::move(pos), std::move(pen)};
}

} // namespace vqasynth::rubric
