#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/rational.hpp>
#include <nlohmann/json.hpp>

namespace vqasynth::rubric {

using Rational = boost::rational<std::int64_t>;

// Exact decimal parse: "0.9670" -> 967/1000. Accepts an optional leading sign.
Rational parse_decimal(const std::string& s);
std::string format_decimal(const Rational& r, int places);

enum class Tier { Essential, Important, Optional, Penalty };

const char* to_string(Tier t);
Tier tier_from_string(const std::string& s);

struct Criterion {
  std::string id;
  std::string name;
  Tier tier = Tier::Important;
  int weight = 0;
  std::string description;

  bool operator==(const Criterion&) const = default;
};

enum class RubricErrorKind { InvalidConfig, IncompleteSheet, UnknownCriterion, ZeroDenominator, TooManyCriteria };

struct RubricError : std::runtime_error {
  RubricErrorKind kind;
  RubricError(RubricErrorKind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

inline constexpr int kEssentialWeight = 5;
inline constexpr std::size_t kEssentialCount = 7;

// Checks the weight range of a criterion against its tier.
void validate_criterion(const Criterion& c);

struct RubricConfig {
  std::vector<Criterion> essentials;
  std::vector<Criterion> positives;  // Important and Optional
  std::vector<Criterion> penalties;
  Rational tau{967, 1000};

  // Throws RubricError(InvalidConfig). `strict_counts` enforces 7 essentials
  // and 4..8 positives; the enumeration tooling relaxes it.
  void validate(bool strict_counts = true) const;
  std::int64_t positive_weight() const;
  const std::vector<Criterion>& stage_criteria(int stage) const;

  nlohmann::json to_json() const;
  static RubricConfig from_json(const nlohmann::json& j);
  // SHA-256 over the canonical JSON form; part of run provenance.
  std::string hash() const;

  static RubricConfig defaults();
};

struct VerdictEntry {
  std::string id;
  bool awarded = false;  // stage 3: the penalty was triggered
  int score = 0;         // 0 or the criterion weight as returned by the verifier
  std::string reason;
};

struct VerdictSheet {
  int stage = 1;
  std::vector<VerdictEntry> entries;
  // Criteria the verifier volunteered beyond the configured set; audit only.
  nlohmann::json volunteered = nlohmann::json::array();

  const VerdictEntry* find(const std::string& id) const;
  nlohmann::json to_json() const;
};

struct GateResult {
  bool passed = false;
  std::vector<std::string> failed_ids;
};

struct QualityScore {
  std::int64_t raw_numerator = 0;
  std::int64_t denominator = 1;
  Rational value{0};
  bool accepted = false;

  double as_double() const { return boost::rational_cast<double>(value); }
};

GateResult essential_gate(const VerdictSheet& sheet, const RubricConfig& config);

// clip01((sum awarded positive weights + sum triggered penalty weights) / W),
// exact, accepted iff value >= tau.
QualityScore aggregate_score(const VerdictSheet& positives, const VerdictSheet& penalties,
                             const RubricConfig& config);

enum class RejectCause { Ungradable, EssentialGate, BelowThreshold };

const char* to_string(RejectCause c);

struct Decision {
  bool accepted = false;
  int stage = 0;  // earliest failing stage, 0 when accepted
  RejectCause cause = RejectCause::BelowThreshold;
};

Decision accept(const GateResult& gate, const std::optional<QualityScore>& score);

inline constexpr std::size_t kMaxEnumeratedCriteria = 20;

// Bit i (< |P|) set: positive i awarded. Bit |P|+j set: penalty j triggered.
struct PatternOutcome {
  std::uint32_t mask = 0;
  std::int64_t raw_numerator = 0;
  bool accepted = false;
};

struct AcceptanceReport {
  std::size_t num_positives = 0;
  std::size_t num_penalties = 0;
  std::int64_t denominator = 0;
  Rational tau{0};
  std::vector<PatternOutcome> outcomes;  // indexed by mask
  std::size_t accepted_count = 0;

  nlohmann::json summary_json() const;
};

// OpenMP-parallel over masks. Throws TooManyCriteria past 20 criteria.
AcceptanceReport enumerate_acceptance_patterns(const RubricConfig& config);
// Single-threaded reference of the same kernel.
AcceptanceReport enumerate_acceptance_patterns_serial(const RubricConfig& config);

// Builds the stage-2/3 sheets a verifier would return for `mask`.
std::pair<VerdictSheet, VerdictSheet> sheets_for_mask(const RubricConfig& config, std::uint32_t mask);

} // namespace vqasynth::rubric
