#include "vqasynth/schema.hpp"

#include <algorithm>
#include <set>

#include "vqasynth/text.hpp"

namespace vqasynth::schema {

using nlohmann::json;

const char* to_string(ViolationCode c) {
  switch (c) {
    case ViolationCode::NoJsonObject: return "NoJsonObject";
    case ViolationCode::ExtraKey: return "ExtraKey";
    case ViolationCode::MissingKey: return "MissingKey";
    case ViolationCode::InvalidAnswerKey: return "InvalidAnswerKey";
    case ViolationCode::DuplicateOption: return "DuplicateOption";
    case ViolationCode::EmptyField: return "EmptyField";
    case ViolationCode::WrongType: return "WrongType";
    case ViolationCode::DuplicateKey: return "DuplicateKey";
  }
  return "Unknown";
}

bool ParseDiagnostics::has(ViolationCode c) const {
  return std::any_of(violations.begin(), violations.end(), [c](const Violation& v) { return v.code == c; });
}

json ParseDiagnostics::to_json() const {
  json arr = json::array();
  for (const auto& v : violations) arr.push_back({{"code", to_string(v.code)}, {"path", v.path}, {"message", v.message}});
  return arr;
}

namespace {

// End index (inclusive) of the balanced object starting at `open`, honoring
// string literals and escapes.
std::optional<std::size_t> balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::nullopt;
}

// Parses with duplicate-key detection; nlohmann silently keeps the last value.
std::optional<json> parse_tracking_duplicates(std::string_view s, std::vector<Violation>& dups) {
  std::vector<std::set<std::string>> keys;
  std::vector<std::string> path{""};
  std::string last_key;
  auto cb = [&](int /*depth*/, json::parse_event_t ev, json& parsed) {
    switch (ev) {
      case json::parse_event_t::object_start:
        keys.emplace_back();
        path.push_back(path.back() + (keys.size() > 1 ? "/" + last_key : ""));
        break;
      case json::parse_event_t::object_end:
        if (!keys.empty()) keys.pop_back();
        if (path.size() > 1) path.pop_back();
        break;
      case json::parse_event_t::key: {
        last_key = parsed.get<std::string>();
        if (!keys.empty() && !keys.back().insert(last_key).second)
          dups.push_back({ViolationCode::DuplicateKey, path.back() + "/" + last_key, "key appears more than once"});
        break;
      }
      default: break;
    }
    return true;
  };
  json j = json::parse(s.begin(), s.end(), cb, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

} // namespace

std::optional<std::string> extract_json_object(std::string_view raw) {
  for (std::size_t pos = raw.find('{'); pos != std::string_view::npos; pos = raw.find('{', pos + 1)) {
    auto end = balanced_end(raw, pos);
    if (!end) continue;
    std::string_view candidate = raw.substr(pos, *end - pos + 1);
    if (json::accept(candidate)) return std::string(candidate);
  }
  return std::nullopt;
}

ParseResult parse_strict(std::string_view raw) {
  ParseDiagnostics diag;
  auto& v = diag.violations;

  auto extracted = extract_json_object(raw);
  if (!extracted) {
    v.push_back({ViolationCode::NoJsonObject, "", "no parseable JSON object in output"});
    return diag;
  }
  auto parsed = parse_tracking_duplicates(*extracted, v);
  if (!parsed || !parsed->is_object()) {
    v.push_back({ViolationCode::NoJsonObject, "", "extracted text is not a JSON object"});
    return diag;
  }
  const json& obj = *parsed;

  for (const auto& [key, _] : obj.items())
    if (key != "question" && key != "options" && key != "answer")
      v.push_back({ViolationCode::ExtraKey, "/" + key, "unexpected key"});

  McvqaItem item;

  if (!obj.contains("question")) {
    v.push_back({ViolationCode::MissingKey, "/question", "missing key"});
  } else if (!obj["question"].is_string()) {
    v.push_back({ViolationCode::WrongType, "/question", "must be a string"});
  } else {
    item.stem = text::normalize_field(obj["question"].get<std::string>());
    if (item.stem.empty()) v.push_back({ViolationCode::EmptyField, "/question", "empty after trimming"});
  }

  std::array<bool, 5> have{};
  if (!obj.contains("options")) {
    v.push_back({ViolationCode::MissingKey, "/options", "missing key"});
  } else if (!obj["options"].is_object()) {
    v.push_back({ViolationCode::WrongType, "/options", "must be an object keyed A..E"});
  } else {
    const json& opts = obj["options"];
    for (const auto& [key, _] : opts.items())
      if (key.size() != 1 || !option_index(key[0]))
        v.push_back({ViolationCode::ExtraKey, "/options/" + key, "option keys are exactly A..E"});
    for (std::size_t i = 0; i < kOptionKeys.size(); ++i) {
      std::string key(1, kOptionKeys[i]);
      std::string path = "/options/" + key;
      if (!opts.contains(key)) {
        v.push_back({ViolationCode::MissingKey, path, "missing option"});
      } else if (!opts[key].is_string()) {
        v.push_back({ViolationCode::WrongType, path, "must be a string"});
      } else {
        item.options[i] = text::normalize_field(opts[key].get<std::string>());
        if (item.options[i].empty())
          v.push_back({ViolationCode::EmptyField, path, "empty after trimming"});
        else
          have[i] = true;
      }
    }
    std::array<std::string, 5> folded;
    for (std::size_t i = 0; i < 5; ++i)
      if (have[i]) folded[i] = text::casefold(item.options[i]);
    for (std::size_t i = 0; i < 5; ++i) {
      if (!have[i]) continue;
      for (std::size_t j = 0; j < i; ++j) {
        if (have[j] && folded[i] == folded[j]) {
          v.push_back({ViolationCode::DuplicateOption, "/options/" + std::string(1, kOptionKeys[i]),
                       "duplicates option " + std::string(1, kOptionKeys[j])});
          break;
        }
      }
    }
  }

  if (!obj.contains("answer")) {
    v.push_back({ViolationCode::MissingKey, "/answer", "missing key"});
  } else {
    const json& a = obj["answer"];
    if (!a.is_string() || a.get<std::string>().size() != 1 || !option_index(a.get<std::string>()[0]))
      v.push_back({ViolationCode::InvalidAnswerKey, "/answer", "answer must be one of \"A\"..\"E\""});
    else
      item.answer = a.get<std::string>()[0];
  }

  if (!v.empty()) return diag;
  return item;
}

std::vector<Violation> validate(const McvqaItem& item) {
  std::vector<Violation> v;
  if (text::trim(item.stem).empty()) v.push_back({ViolationCode::EmptyField, "/question", "empty stem"});
  std::array<std::string, 5> folded;
  for (std::size_t i = 0; i < 5; ++i) {
    std::string t = text::normalize_field(item.options[i]);
    std::string path = "/options/" + std::string(1, kOptionKeys[i]);
    if (t.empty()) {
      v.push_back({ViolationCode::EmptyField, path, "empty option"});
      continue;
    }
    folded[i] = text::casefold(t);
    for (std::size_t j = 0; j < i; ++j)
      if (!folded[j].empty() && folded[j] == folded[i]) {
        v.push_back({ViolationCode::DuplicateOption, path, "duplicates option " + std::string(1, kOptionKeys[j])});
        break;
      }
  }
  if (!option_index(item.answer)) v.push_back({ViolationCode::InvalidAnswerKey, "/answer", "answer outside A..E"});
  return v;
}

McvqaItem normalized(McvqaItem item) {
  item.stem = text::normalize_field(item.stem);
  for (auto& o : item.options) o = text::normalize_field(o);
  return item;
}

std::string serialize_canonical(const McvqaItem& item) {
  auto quote = [](const std::string& s) { return json(text::normalize_field(s)).dump(-1, ' ', true); };
  std::string out = "{\"question\":" + quote(item.stem) + ",\"options\":{";
  for (std::size_t i = 0; i < 5; ++i) {
    if (i) out += ',';
    out += '"';
    out += kOptionKeys[i];
    out += "\":" + quote(item.options[i]);
  }
  out += "},\"answer\":\"";
  out += item.answer;
  out += "\"}";
  return out;
}

std::string render_question(const McvqaItem& item) {
  std::string out = item.stem + "\n\n";
  for (std::size_t i = 0; i < 5; ++i) {
    out += kOptionKeys[i];
    out += ". " + item.options[i];
    if (i + 1 < 5) out += '\n';
  }
  return out;
}

} // namespace vqasynth::schema
