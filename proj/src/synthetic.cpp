#include "vqasynth/synthetic.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "vqasynth/text.hpp"

namespace vqasynth::synthetic {

using nlohmann::json;

schema::McvqaItem default_item(const std::string& record_id) {
  std::uint64_t h = text::fnv1a64(record_id);
  schema::McvqaItem item;
  item.stem = "Which finding is most consistent with the image shown (case " + record_id + ")?";
  item.options = {"Consolidation of the left lower lobe", "Pleural effusion on the right",
                  "Normal study without acute findings", "Pneumothorax with mediastinal shift",
                  "Hilar lymphadenopathy"};
  item.answer = static_cast<char>('A' + h % 5);
  return item;
}

ScriptedResponder::ScriptedResponder(rubric::RubricConfig rubric, Policy policy)
    : rubric_(std::move(rubric)), policy_(std::move(policy)) {}

namespace {

std::string verdict(const std::vector<rubric::Criterion>& criteria, const std::set<std::string>& flipped,
                    bool penalties) {
  json arr = json::array();
  for (const auto& c : criteria) {
    bool hit = flipped.count(c.id) > 0;
    int score = penalties ? (hit ? c.weight : 0) : (hit ? 0 : c.weight);
    std::string reason = hit ? (penalties ? "the item shows this problem" : "the criterion is not met")
                             : (penalties ? "not observed" : "satisfied");
    arr.push_back({{"id", c.id}, {"score", score}, {"reason", reason}});
  }
  return json{{"criteria", arr}}.dump(2);
}

} // namespace

std::string ScriptedResponder::operator()(const llm::ChatRequest& request, const std::string&) const {
  const std::string& tag = request.request_tag;
  auto slash = tag.rfind('/');
  if (slash == std::string::npos) return "unrecognized request";
  std::string id = tag.substr(0, slash), kind = tag.substr(slash + 1);
  RecordScript s = policy_(id);

  if (kind == "gen") {
    if (!s.item_parses) return "I am unable to produce a question for this figure.";
    std::string body = s.item_json ? *s.item_json : schema::serialize_canonical(default_item(id));
    return "```json\n" + body + "\n```";
  }
  if (kind == "verify1")
    return s.stage1_gradable ? verdict(rubric_.essentials, s.failed_essentials, false) : "{\"criteria\": \"n/a\"}";
  if (kind == "verify2")
    return s.stage2_gradable ? verdict(rubric_.positives, s.missed_positives, false) : "no verdict";
  if (kind == "verify3")
    return s.stage3_gradable ? verdict(rubric_.penalties, s.triggered_penalties, true) : "no verdict";
  if (kind == "trace") {
    if (s.trace) return *s.trace;
    char key = default_item(id).answer;
    if (s.item_json) {
      auto parsed = schema::parse_strict(*s.item_json);
      if (auto* it = std::get_if<schema::McvqaItem>(&parsed)) key = it->answer;
    }
    return "The image findings point to one option over the others.\nThe answer is " + std::string(1, key) + ".";
  }
  return "unrecognized request kind " + kind;
}

double unit_draw(std::uint64_t seed, const std::string& record_id, const std::string& step) {
  std::string h = text::sha256_hex(std::to_string(seed) + "|" + record_id + "|" + step);
  std::uint64_t v = std::stoull(h.substr(0, 13), nullptr, 16);  // 52 bits
  return static_cast<double>(v) / static_cast<double>(1ULL << 52);
}

Policy calibrated(const rubric::RubricConfig& rubric, Rates rates, std::uint64_t seed) {
  return [rubric, rates, seed](const std::string& id) {
    RecordScript s;
    auto pick = [&](const std::vector<rubric::Criterion>& cs, const char* step) {
      auto i = static_cast<std::size_t>(unit_draw(seed, id, step) * static_cast<double>(cs.size()));
      return cs[std::min(i, cs.size() - 1)].id;
    };
    if (unit_draw(seed, id, "gradable") >= rates.gradable) {
      s.stage1_gradable = false;
      return s;
    }
    if (unit_draw(seed, id, "gate") >= rates.gate) {
      s.failed_essentials.insert(pick(rubric.essentials, "which-essential"));
      return s;
    }
    if (unit_draw(seed, id, "accept") >= rates.accepted) {
      // Drop the heaviest positives until the score falls below tau.
      auto order = rubric.positives;
      std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
      std::int64_t w = rubric.positive_weight(), kept = w;
      for (const auto& c : order) {
        if (rubric::Rational(kept, w) < rubric.tau) break;
        s.missed_positives.insert(c.id);
        kept -= c.weight;
      }
      if (unit_draw(seed, id, "penalty") < 0.5 && !rubric.penalties.empty())
        s.triggered_penalties.insert(pick(rubric.penalties, "which-penalty"));
    }
    return s;
  };
}

} // namespace vqasynth::synthetic
