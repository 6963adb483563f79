#include "vqasynth/prompt.hpp"

#include "vqasynth/text.hpp"

namespace vqasynth::prompt {

namespace {

constexpr std::string_view kUserMarker = "\n=== user ===\n";


} // namespace

std::string render(std::string_view tmpl, const Vars& vars, const Flags& flags) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    std::size_t close = tmpl.find("}}", open);
    if (close == std::string_view::npos) throw PromptError("unterminated tag in template");
    std::string_view tag = tmpl.substr(open + 2, close - open - 2);
    pos = close + 2;

    if (!tag.empty() && tag[0] == '#') {
      std::string name(tag.substr(1));
      std::string end_tag = "{{/" + name + "}}";
      std::size_t end = tmpl.find(end_tag, pos);
      if (end == std::string_view::npos) throw PromptError("section " + name + " is not closed");
      auto flag = flags.find(name);
      if (flag == flags.end()) throw PromptError("unknown section flag " + name);
      std::string_view body = tmpl.substr(pos, end - pos);
      pos = end + end_tag.size();
      // Section tags alone on their lines take their line breaks with them.
      bool standalone = !body.empty() && body.front() == '\n';
      if (standalone) {
        body.remove_prefix(1);
        if (pos < tmpl.size() && tmpl[pos] == '\n') ++pos;
      }
      if (flag->second) out += render(body, vars, flags);
      continue;
    }
    if (!tag.empty() && tag[0] == '/') throw PromptError("stray section close " + std::string(tag));
    auto v = vars.find(tag);
    if (v == vars.end()) throw PromptError("unknown template variable " + std::string(tag));
    out += v->second;
  }
  return out;
}

PromptTemplate PromptTemplate::parse(std::string name, std::string_view source) {
  PromptTemplate t;
  t.name = std::move(name);
  t.source = std::string(source);
  std::string_view rest = source;
  if (rest.starts_with("#version ")) {
    auto nl = rest.find('\n');
    t.version = text::trim(rest.substr(9, nl == std::string_view::npos ? std::string_view::npos : nl - 9));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
  } else {
    throw PromptError("template " + t.name + " lacks a #version line");
  }
  auto marker = rest.find(kUserMarker);
  if (marker == std::string_view::npos) throw PromptError("template " + t.name + " lacks the user section marker");
  t.system = std::string(rest.substr(0, marker));
  t.user = std::string(rest.substr(marker + kUserMarker.size()));
  return t;
}

std::string PromptTemplate::hash() const { return text::sha256_hex(source); }

const PromptTemplate& PromptSet::verify_stage(int stage) const {
  switch (stage) {
    case 1: return verify_stage1;
    case 2: return verify_stage2;
    case 3: return verify_stage3;
  }
  throw PromptError("verification stage must be 1, 2 or 3");
}

namespace {

constexpr std::string_view kGeneration = R"(#version gen-v1
You are an expert medical-education item writer. You turn biomedical figures into exam-quality multiple-choice questions.

You receive the figure image(s) and the figure caption{{#has_references}} together with the in-text passages that cite the figure{{/has_references}}. Use the text to understand what the image shows, but write a question that can only be answered by inspecting specific visual features of the image(s).

Check your item against this rubric before you output it.

Essential (the item must satisfy every one):
{{essential_rubric}}

Important (strongly recommended):
{{important_rubric}}

Optional (only when clearly supported by the figure):
{{optional_rubric}}

Pick the archetype that best fits the figure from: {{archetypes}}.
{{#modality_note}}
Figure category: {{modality}}
{{/modality_note}}
Output contract:
{{output_contract}}
=== user ===
Caption:
{{caption}}
{{#has_references}}
References:
{{references}}
{{/has_references}}
Write one five-option multiple-choice question about the figure. Respond with the JSON object only.
)";

constexpr std::string_view kStage1 = R"(#version verify1-v1
You are the Referee for a medical multiple-choice question. Apply each rule literally and grade fairly; do not reward or punish style.

You see the figure image(s), the caption{{#has_references}}, the in-text references{{/has_references}} and a candidate item. Every criterion below is mandatory. Score it 5 when the item satisfies it and 0 when it does not.

{{criteria}}

Return only a JSON object with exactly one entry per criterion id above:
{{verdict_contract}}
=== user ===
Caption:
{{caption}}
{{#has_references}}
References:
{{references}}
{{/has_references}}
Candidate item:
{{item_json}}
)";

constexpr std::string_view kStage2 = R"(#version verify2-v1
You are the Critic for a medical multiple-choice question. Start from the assumption that the item is not excellent. Award a criterion only when the evidence for it is beyond dispute; if you can picture a slightly better wording or a stronger distractor, deny it.

You see the figure image(s), the caption{{#has_references}}, the in-text references{{/has_references}} and a candidate item. Score each criterion with its weight when awarded and 0 otherwise.

{{criteria}}

Return only a JSON object with exactly one entry per criterion id above. You may add further observations under "volunteered"; they are recorded but never scored.
{{verdict_contract}}
=== user ===
Caption:
{{caption}}
{{#has_references}}
References:
{{references}}
{{/has_references}}
Candidate item:
{{item_json}}
)";

constexpr std::string_view kStage3 = R"(#version verify3-v1
You are the Critic hunting for errors in a medical multiple-choice question. Search the item actively for each pitfall below. Trigger a pitfall only when you can state a concrete reason; a triggered pitfall scores its negative weight, otherwise score 0. Every triggered pitfall needs a non-empty reason.

You see the figure image(s), the caption{{#has_references}}, the in-text references{{/has_references}} and a candidate item.

{{criteria}}

Return only a JSON object with exactly one entry per criterion id above:
{{verdict_contract}}
=== user ===
Caption:
{{caption}}
{{#has_references}}
References:
{{references}}
{{/has_references}}
Candidate item:
{{item_json}}
)";

constexpr std::string_view kTrace = R"(#version trace-v1
You are a medical expert answering a multiple-choice question about a figure. Reason step by step from what you see in the image(s), then finish with a final line of the form "Therefore, the answer is X." where X is one of A, B, C, D, E.
=== user ===
{{question}}
)";

} // namespace

PromptSet PromptSet::builtin() {
  return PromptSet{PromptTemplate::parse("generation", kGeneration), PromptTemplate::parse("verify_stage1", kStage1),
                   PromptTemplate::parse("verify_stage2", kStage2), PromptTemplate::parse("verify_stage3", kStage3),
                   PromptTemplate::parse("trace", kTrace)};
}

PromptSet PromptSet::load_dir(const std::filesystem::path& dir) {
  auto load = [&](const char* name) {
    auto p = dir / (std::string(name) + ".txt");
    std::string src;
    try {
      src = text::read_file(p.string());
    } catch (const std::exception&) {
      throw PromptError("missing prompt template " + p.string());
    }
    return PromptTemplate::parse(name, src);
  };
  return PromptSet{load("generation"), load("verify_stage1"), load("verify_stage2"), load("verify_stage3"),
                   load("trace")};
}

void PromptSet::write_dir(const std::filesystem::path& dir) const {
  for (const auto* t : {&generation, &verify_stage1, &verify_stage2, &verify_stage3, &trace})
    text::write_file_atomic((dir / (t->name + ".txt")).string(), t->source);
}

std::string PromptSet::hash() const {
  std::string all;
  for (const auto* t : {&generation, &verify_stage1, &verify_stage2, &verify_stage3, &trace})
    all += t->name + "\n" + t->hash() + "\n";
  return text::sha256_hex(all);
}

} // namespace vqasynth::prompt
