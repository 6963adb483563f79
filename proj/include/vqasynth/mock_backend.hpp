#pragma once

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vqasynth/llm.hpp"

namespace vqasynth::llm {

// Content-addressed response fixtures: <root>/<hash[0:2]>/<hash>.json holding
// {"request_tag": ..., "text": ...} or {"status": <http status>, "error": ...}.
class FixtureStore {
public:
  explicit FixtureStore(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path path_for(const std::string& hash) const;
  std::optional<nlohmann::json> lookup(const std::string& hash) const;
  void put(const std::string& hash, const nlohmann::json& fixture) const;
  void put_text(const ChatRequest& request, const std::string& text) const;

  const std::filesystem::path& root() const { return root_; }

private:
  std::filesystem::path root_;
};

struct MockCall {
  std::string request_tag;
  std::string hash;
};

// Produces the text for a request with no recorded fixture.
using Synthesizer = std::function<std::string(const ChatRequest&, const std::string& hash)>;

// Deterministic backend: fixture lookup by canonical request hash, then the
// synthesizer. Every call is logged.
class MockBackend : public Backend {
public:
  MockBackend(std::optional<FixtureStore> fixtures, Synthesizer synthesizer = {});

  AttemptResult send(const ChatRequest& request, std::chrono::milliseconds timeout) override;

  std::vector<MockCall> calls() const;
  std::size_t call_count() const;
  void clear_calls();

  // Default synthesizer: "mock:" + first 16 hex chars of the hash.
  static std::string hash_echo(const ChatRequest&, const std::string& hash);

private:
  std::optional<FixtureStore> fixtures_;
  Synthesizer synthesizer_;
  mutable std::mutex mutex_;
  std::vector<MockCall> calls_;
};

// Token estimate used for mock usage accounting (bytes / 4, at least 1).
std::int64_t estimate_tokens(std::size_t bytes);

} // namespace vqasynth::llm
