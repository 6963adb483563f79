#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace vqasynth::pipeline {

struct JournalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct JournalContents {
  nlohmann::json header;
  std::vector<nlohmann::json> events;
  bool torn_tail = false;  // last line was incomplete and has been dropped
};

// Append-only JSONL checkpoint journal. The first line is the run header;
// each later line is one event. A single writer serializes appends.
class Journal {
public:
  // Starts a new journal; fails if one already exists at `path`.
  static Journal create(const std::filesystem::path& path, const nlohmann::json& header);
  // Reads an existing journal, truncating a torn final line, and reopens it
  // for appending.
  static Journal open(const std::filesystem::path& path, JournalContents& contents);
  static JournalContents read(const std::filesystem::path& path);

  Journal(Journal&& other) noexcept;
  Journal& operator=(Journal&&) = delete;

  void append(const nlohmann::json& event);
  std::size_t appended() const { return appended_; }

  // Atomically replaces the journal with `header` + `events`.
  void compact(const nlohmann::json& header, const std::vector<nlohmann::json>& events);

  const std::filesystem::path& path() const { return path_; }

private:
  explicit Journal(std::filesystem::path path);

  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mutex_;
  std::size_t appended_ = 0;
};

} // namespace vqasynth::pipeline
