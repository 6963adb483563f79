#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vqasynth::prompt {

struct PromptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vars = std::map<std::string, std::string, std::less<>>;
using Flags = std::map<std::string, bool, std::less<>>;

// Minimal mustache subset: {{name}} substitutes, {{#flag}}...{{/flag}} keeps
// the block only when the flag is true. Unknown names throw.
std::string render(std::string_view tmpl, const Vars& vars, const Flags& flags = {});

// Template file layout:
//   #version <tag>
//   <system text>
//   === user ===
//   <user text>
struct PromptTemplate {
  std::string name;
  std::string version;
  std::string system;
  std::string user;
  std::string source;  // original file text, hashed into provenance

  static PromptTemplate parse(std::string name, std::string_view source);
  std::string hash() const;
};

struct PromptSet {
  PromptTemplate generation;
  PromptTemplate verify_stage1;
  PromptTemplate verify_stage2;
  PromptTemplate verify_stage3;
  PromptTemplate trace;

  const PromptTemplate& verify_stage(int stage) const;

  static PromptSet builtin();
  // Reads generation.txt, verify_stage1.txt ... trace.txt from `dir`.
  static PromptSet load_dir(const std::filesystem::path& dir);
  void write_dir(const std::filesystem::path& dir) const;
  std::string hash() const;
};

} // namespace vqasynth::prompt
