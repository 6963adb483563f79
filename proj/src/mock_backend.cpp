#include "vqasynth/mock_backend.hpp"

#include <algorithm>

#include "vqasynth/text.hpp"

namespace vqasynth::llm {

using nlohmann::json;

std::int64_t estimate_tokens(std::size_t bytes) { return std::max<std::int64_t>(1, static_cast<std::int64_t>(bytes / 4)); }

std::filesystem::path FixtureStore::path_for(const std::string& hash) const {
  return root_ / hash.substr(0, 2) / (hash + ".json");
}

std::optional<json> FixtureStore::lookup(const std::string& hash) const {
  auto p = path_for(hash);
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return std::nullopt;
  json j = json::parse(text::read_file(p.string()), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

void FixtureStore::put(const std::string& hash, const json& fixture) const {
  text::write_file_atomic(path_for(hash).string(), fixture.dump(2) + "\n");
}

void FixtureStore::put_text(const ChatRequest& request, const std::string& text) const {
  put(request.hash(), json{{"request_tag", request.request_tag}, {"text", text}});
}

MockBackend::MockBackend(std::optional<FixtureStore> fixtures, Synthesizer synthesizer)
    : fixtures_(std::move(fixtures)), synthesizer_(synthesizer ? std::move(synthesizer) : Synthesizer(&hash_echo)) {}

std::string MockBackend::hash_echo(const ChatRequest&, const std::string& hash) { return "mock:" + hash.substr(0, 16); }

AttemptResult MockBackend::send(const ChatRequest& request, std::chrono::milliseconds) {
  const std::string canonical = request.canonical();
  const std::string hash = text::sha256_hex(canonical);
  {
    std::lock_guard lock(mutex_);
    calls_.push_back({request.request_tag, hash});
  }

  std::string reply;
  bool found = false;
  if (fixtures_) {
    if (auto fx = fixtures_->lookup(hash)) {
      int status = fx->value("status", 200);
      if (status != 200)
        return TransportFailure{classify_http_status(status), status, fx->value("error", "scripted failure")};
      if (!fx->contains("text") || !(*fx)["text"].is_string())
        return TransportFailure{ErrorKind::MalformedResponse, 200, "fixture lacks \"text\""};
      reply = (*fx)["text"].get<std::string>();
      found = true;
    }
  }
  if (!found) reply = synthesizer_(request, hash);

  ChatResponse r;
  r.text = std::move(reply);
  r.usage.prompt_tokens = estimate_tokens(canonical.size());
  r.usage.completion_tokens = estimate_tokens(r.text.size());
  return r;
}

std::vector<MockCall> MockBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_.size();
}

void MockBackend::clear_calls() {
  std::lock_guard lock(mutex_);
  calls_.clear();
}

} // namespace vqasynth::llm
