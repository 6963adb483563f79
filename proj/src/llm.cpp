#include "vqasynth/llm.hpp"

#include <algorithm>
#include <random>
#include <thread>

#include "vqasynth/text.hpp"

namespace vqasynth::llm {

using nlohmann::json;

void ChatRequest::validate() const {
  if (messages.empty()) throw std::invalid_argument("chat request has no messages");
  for (const auto& m : messages)
    for (const auto& p : m.parts)
      if (const auto* img = std::get_if<ImagePart>(&p); img && img->bytes.empty())
        throw std::invalid_argument("chat request carries an empty image payload");
  if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
  if (max_output_tokens <= 0) throw std::invalid_argument("max_output_tokens must be positive");
}

json ChatRequest::wire_body() const {
  json msgs = json::array();
  for (const auto& m : messages) {
    json content = json::array();
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        content.push_back({{"type", "text"}, {"text", t->text}});
      } else {
        const auto& img = std::get<ImagePart>(p);
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:" + img.media_type + ";base64," + text::base64_encode(img.bytes)}}}});
      }
    }
    msgs.push_back({{"role", m.role}, {"content", content}});
  }
  return json{{"model", model_id}, {"messages", msgs}, {"temperature", temperature}, {"max_tokens", max_output_tokens}};
}

std::string ChatRequest::hash() const { return text::sha256_hex(canonical()); }

std::size_t ChatRequest::image_count() const {
  std::size_t n = 0;
  for (const auto& m : messages)
    for (const auto& p : m.parts) n += std::holds_alternative<ImagePart>(p) ? 1 : 0;
  return n;
}

std::string ChatRequest::all_text() const {
  std::string out;
  for (const auto& m : messages)
    for (const auto& p : m.parts)
      if (const auto* t = std::get_if<TextPart>(&p)) {
        out += t->text;
        out += '\n';
      }
  return out;
}

const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::RateLimited: return "RateLimited";
    case ErrorKind::ServerError: return "ServerError";
    case ErrorKind::Connection: return "Connection";
    case ErrorKind::AuthFailure: return "AuthFailure";
    case ErrorKind::BadRequest: return "BadRequest";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
  }
  return "Unknown";
}

bool is_transient(ErrorKind k) {
  return k == ErrorKind::Timeout || k == ErrorKind::RateLimited || k == ErrorKind::ServerError ||
         k == ErrorKind::Connection;
}

ErrorKind classify_http_status(int status) {
  if (status == 401 || status == 403) return ErrorKind::AuthFailure;
  if (status == 408) return ErrorKind::Timeout;
  if (status == 429) return ErrorKind::RateLimited;
  if (status >= 500) return ErrorKind::ServerError;
  return ErrorKind::BadRequest;
}

void BackendProfile::validate() const {
  if (max_concurrent < 1) throw std::invalid_argument("max_concurrent must be >= 1");
  if (retry.max_attempts < 1) throw std::invalid_argument("retry.max_attempts must be >= 1");
  if (timeout.count() <= 0) throw std::invalid_argument("timeout must be positive");
  if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
  if (max_output_tokens <= 0) throw std::invalid_argument("max_output_tokens must be positive");
}

BackendProfile BackendProfile::from_json(const json& j) {
  BackendProfile p;
  p.endpoint = j.value("endpoint", "");
  p.model_id = j.value("model_id", "");
  p.api_key_env = j.value("api_key_env", "");
  p.max_concurrent = j.value("max_concurrent", p.max_concurrent);
  p.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<std::int64_t>(p.timeout.count())));
  p.temperature = j.value("temperature", p.temperature);
  p.max_output_tokens = j.value("max_output_tokens", p.max_output_tokens);
  if (j.contains("retry")) {
    const auto& r = j.at("retry");
    p.retry.max_attempts = r.value("max_attempts", p.retry.max_attempts);
    p.retry.jitter = r.value("jitter", p.retry.jitter);
    if (r.contains("backoff_ms")) {
      p.retry.backoff.clear();
      for (const auto& v : r.at("backoff_ms")) p.retry.backoff.emplace_back(v.get<std::int64_t>());
    }
  }
  p.validate();
  return p;
}

json BackendProfile::public_json() const {
  return json{{"endpoint", endpoint},
              {"model_id", model_id},
              {"temperature", temperature},
              {"max_output_tokens", max_output_tokens}};
}

Gateway::Gateway(std::shared_ptr<Backend> backend, BackendProfile profile, Sleeper sleeper)
    : backend_(std::move(backend)),
      profile_(std::move(profile)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      slots_(profile_.max_concurrent),
      rng_state_(std::random_device{}()) {
  profile_.validate();
}

std::chrono::milliseconds Gateway::backoff_delay(int attempt) {
  if (profile_.retry.backoff.empty()) return std::chrono::milliseconds(0);
  std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(attempt - 1), profile_.retry.backoff.size() - 1);
  auto base = profile_.retry.backoff[idx];
  double u;
  {
    std::lock_guard lock(rng_mutex_);
    std::mt19937_64 gen(rng_state_);
    rng_state_ = gen();
    u = std::uniform_real_distribution<double>(-1.0, 1.0)(gen);
  }
  auto jittered = static_cast<std::int64_t>(static_cast<double>(base.count()) * (1.0 + profile_.retry.jitter * u));
  return std::chrono::milliseconds(std::max<std::int64_t>(0, jittered));
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  request.validate();
  TransportFailure last;
  for (int attempt = 1; attempt <= profile_.retry.max_attempts; ++attempt) {
    AttemptResult result;
    {
      slots_.acquire();
      int now = ++in_flight_;
      int peak = peak_in_flight_.load();
      while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
      }
      auto start = std::chrono::steady_clock::now();
      try {
        result = backend_->send(request, profile_.timeout);
      } catch (...) {
        --in_flight_;
        slots_.release();
        throw;
      }
      --in_flight_;
      slots_.release();
      if (auto* ok = std::get_if<ChatResponse>(&result)) {
        ok->latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        ok->attempts = attempt;
        total_tokens_ += ok->usage.total();
        return std::move(*ok);
      }
    }
    last = std::get<TransportFailure>(result);
    if (!is_transient(last.kind)) throw GatewayError(last.kind, last.http_status, attempt, last.message);
    if (attempt < profile_.retry.max_attempts) sleeper_(backoff_delay(attempt));
  }
  throw GatewayError(last.kind, last.http_status, profile_.retry.max_attempts,
                     std::string(to_string(last.kind)) + " after retries exhausted: " + last.message);
}

std::vector<BatchEntry> Gateway::complete_batch(const std::vector<ChatRequest>& requests) {
  std::vector<BatchEntry> out(requests.size(), BatchEntry{"", ChatResponse{}});
  if (requests.empty()) return out;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      out[i].request_tag = requests[i].request_tag;
      try {
        out[i].outcome = complete(requests[i]);
      } catch (const GatewayError& e) {
        out[i].outcome = e;
      } catch (const std::exception& e) {
        out[i].outcome = GatewayError(ErrorKind::BadRequest, 0, 0, e.what());
      }
    }
  };
  std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(profile_.max_concurrent), requests.size());
  std::vector<std::jthread> threads;
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  threads.clear();
  return out;
}

} // namespace vqasynth::llm
