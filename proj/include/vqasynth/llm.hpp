#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace vqasynth::llm {

struct TextPart {
  std::string text;
};

struct ImagePart {
  std::string media_type;
  std::string bytes;
};

using Part = std::variant<TextPart, ImagePart>;

struct Message {
  std::string role;
  std::vector<Part> parts;
};

struct ChatRequest {
  std::string model_id;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  // Correlation id, e.g. "rec-17/verify2". Not part of the wire body or hash.
  std::string request_tag;

  void validate() const;
  // OpenAI-compatible chat-completions body with base64 data-URL images.
  nlohmann::json wire_body() const;
  std::string canonical() const { return wire_body().dump(); }
  std::string hash() const;
  std::size_t image_count() const;
  // Concatenation of every text part, for substring checks.
  std::string all_text() const;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  std::int64_t total() const { return prompt_tokens + completion_tokens; }
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  double latency_ms = 0.0;
  int attempts = 1;
};

enum class ErrorKind { Timeout, RateLimited, ServerError, Connection, AuthFailure, BadRequest, MalformedResponse };

const char* to_string(ErrorKind k);
bool is_transient(ErrorKind k);
ErrorKind classify_http_status(int status);

struct TransportFailure {
  ErrorKind kind = ErrorKind::Connection;
  int http_status = 0;
  std::string message;
};

using AttemptResult = std::variant<ChatResponse, TransportFailure>;

// One attempt against a concrete backend; no retries.
class Backend {
public:
  virtual ~Backend() = default;
  virtual AttemptResult send(const ChatRequest& request, std::chrono::milliseconds timeout) = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(500), std::chrono::milliseconds(2000),
                                                 std::chrono::milliseconds(8000)};
  double jitter = 0.25;  // fraction of the base delay
};

struct BackendProfile {
  std::string endpoint;     // e.g. http://localhost:8000/v1
  std::string model_id;
  std::string api_key_env;  // environment variable holding the bearer token
  int max_concurrent = 8;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{120000};
  double temperature = 0.0;
  int max_output_tokens = 2048;

  void validate() const;
  static BackendProfile from_json(const nlohmann::json& j);
  // Secret-free identity of the profile for provenance.
  nlohmann::json public_json() const;
};

class GatewayError : public std::runtime_error {
public:
  GatewayError(ErrorKind kind, int http_status, int attempts, const std::string& what)
      : std::runtime_error(what), kind_(kind), http_status_(http_status), attempts_(attempts) {}

  ErrorKind kind() const { return kind_; }
  int http_status() const { return http_status_; }
  int attempts() const { return attempts_; }
  bool retryable() const { return is_transient(kind_); }

private:
  ErrorKind kind_;
  int http_status_;
  int attempts_;
};

struct BatchEntry {
  std::string request_tag;
  std::variant<ChatResponse, GatewayError> outcome;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Retries transient failures with jittered backoff and bounds in-flight
// requests to profile.max_concurrent. Jitter only changes timing.
class Gateway {
public:
  Gateway(std::shared_ptr<Backend> backend, BackendProfile profile, Sleeper sleeper = {});

  ChatResponse complete(const ChatRequest& request);
  std::vector<BatchEntry> complete_batch(const std::vector<ChatRequest>& requests);

  const BackendProfile& profile() const { return profile_; }
  int peak_in_flight() const { return peak_in_flight_.load(); }
  std::int64_t total_tokens() const { return total_tokens_.load(); }

private:
  std::chrono::milliseconds backoff_delay(int attempt);

  std::shared_ptr<Backend> backend_;
  BackendProfile profile_;
  Sleeper sleeper_;
  std::counting_semaphore<1 << 16> slots_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
  std::atomic<std::int64_t> total_tokens_{0};
  std::mutex rng_mutex_;
  std::uint64_t rng_state_;
};

} // namespace vqasynth::llm
