#pragma once

#include <functional>
#include <string>

#include "vqasynth/llm.hpp"

namespace vqasynth::llm {

struct ParsedEndpoint {
  std::string scheme_host_port;  // "http://localhost:8000"
  std::string base_path;         // "/v1"
};

ParsedEndpoint parse_endpoint(const std::string& url);

// Extracts choices[0].message.content and usage from a chat-completions reply.
AttemptResult parse_completion_body(const std::string& body);

// OpenAI-compatible chat-completions over HTTP(S) with bearer auth read from
// the profile's api_key_env at call time.
class HttpBackend : public Backend {
public:
  using SecretLookup = std::function<std::string(const std::string& env_name)>;

  explicit HttpBackend(BackendProfile profile, SecretLookup secrets = {});

  AttemptResult send(const ChatRequest& request, std::chrono::milliseconds timeout) override;

private:
  BackendProfile profile_;
  ParsedEndpoint endpoint_;
  SecretLookup secrets_;
};

} // namespace vqasynth::llm
