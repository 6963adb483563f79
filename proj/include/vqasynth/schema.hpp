#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace vqasynth::schema {

inline constexpr std::array<char, 5> kOptionKeys = {'A', 'B', 'C', 'D', 'E'};

inline std::optional<std::size_t> option_index(char key) {
  if (key < 'A' || key > 'E') return std::nullopt;
  return static_cast<std::size_t>(key - 'A');
}

// A five-option multiple-choice question with a single answer key.
// Text fields are stored trimmed and NFC-normalized.
struct McvqaItem {
  std::string stem;
  std::array<std::string, 5> options;
  char answer = 'A';

  const std::string& answer_text() const { return options[static_cast<std::size_t>(answer - 'A')]; }
  bool operator==(const McvqaItem&) const = default;
};

enum class ViolationCode {
  NoJsonObject,
  ExtraKey,
  MissingKey,
  InvalidAnswerKey,
  DuplicateOption,
  EmptyField,
  WrongType,
  DuplicateKey,
};

const char* to_string(ViolationCode c);

struct Violation {
  ViolationCode code;
  std::string path;  // JSON pointer into the extracted object
  std::string message;
};

struct ParseDiagnostics {
  std::vector<Violation> violations;

  bool has(ViolationCode c) const;
  nlohmann::json to_json() const;
};

using ParseResult = std::variant<McvqaItem, ParseDiagnostics>;

// Returns the outermost balanced {...} in `raw` that parses as JSON, or nullopt.
std::optional<std::string> extract_json_object(std::string_view raw);

// Exact keys {question, options{A..E}, answer}; reports every violation found.
ParseResult parse_strict(std::string_view raw);

// Invariant check for items built in code; empty means valid.
std::vector<Violation> validate(const McvqaItem& item);

// Trim + NFC every text field.
McvqaItem normalized(McvqaItem item);

// Compact JSON, keys in order question, options A..E, answer; non-ASCII escaped.
std::string serialize_canonical(const McvqaItem& item);

// "stem\n\nA. ...\nB. ...\n...E. ..." shared by trace elicitation and export.
std::string render_question(const McvqaItem& item);

} // namespace vqasynth::schema
