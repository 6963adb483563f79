#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "vqasynth/llm.hpp"
#include "vqasynth/pipeline.hpp"

namespace vqasynth::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON with // and /* */ comments. Errors name the file.
nlohmann::json load_json_file(const std::filesystem::path& path);

// Paths and overrides as given on the command line or in a run config file.
struct RunConfig {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> rubric;
  std::optional<std::filesystem::path> prompts;
  std::optional<std::filesystem::path> taxonomy;
  std::optional<std::filesystem::path> gen_backend;
  std::optional<std::filesystem::path> verify_backend;
  std::optional<std::filesystem::path> mock_fixtures;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> image_root;
  std::optional<std::string> tau;
  std::optional<int> max_concurrent;
  std::optional<std::size_t> max_images;
  std::optional<std::int64_t> max_total_tokens;
  std::size_t stop_after = 0;

  // Relative paths in the file resolve against its directory.
  static RunConfig from_file(const std::filesystem::path& path);
  // Fields set in `over` win.
  RunConfig merged(const RunConfig& over) const;
};

struct Resolved {
  pipeline::PipelineConfig pipeline;
  llm::BackendProfile generator;
  llm::BackendProfile verifier;
  std::optional<std::filesystem::path> fixtures;
  std::filesystem::path image_root;
  bool mock = false;
};

// Checks every referenced file and override, then loads them. Nothing is
// written and no backend is contacted. Throws ConfigError.
Resolved resolve(const RunConfig& rc, bool need_manifest = true);

llm::BackendProfile mock_profile(const std::string& model_id);

} // namespace vqasynth::config
