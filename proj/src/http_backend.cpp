#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "vqasynth/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

namespace vqasynth::llm {

using nlohmann::json;

ParsedEndpoint parse_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint needs a scheme: " + url);
  std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw std::invalid_argument("unsupported endpoint scheme: " + scheme);
  auto path_start = url.find('/', scheme_end + 3);
  ParsedEndpoint e;
  e.scheme_host_port = url.substr(0, path_start);
  e.base_path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
  return e;
}

AttemptResult parse_completion_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return TransportFailure{ErrorKind::MalformedResponse, 200, "response is not JSON"};
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    ChatResponse r;
    if (content.is_string()) {
      r.text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content)
        if (part.value("type", "") == "text") r.text += part.value("text", "");
    } else {
      return TransportFailure{ErrorKind::MalformedResponse, 200, "message content has unexpected type"};
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
      r.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
    }
    return r;
  } catch (const json::exception& e) {
    return TransportFailure{ErrorKind::MalformedResponse, 200, e.what()};
  }
}

HttpBackend::HttpBackend(BackendProfile profile, SecretLookup secrets)
    : profile_(std::move(profile)), endpoint_(parse_endpoint(profile_.endpoint)), secrets_(std::move(secrets)) {
  if (!secrets_)
    secrets_ = [](const std::string& name) {
      const char* v = std::getenv(name.c_str());
      return v ? std::string(v) : std::string();
    };
}

AttemptResult HttpBackend::send(const ChatRequest& request, std::chrono::milliseconds timeout) {
  httplib::Client client(endpoint_.scheme_host_port);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!profile_.api_key_env.empty()) {
    std::string key = secrets_(profile_.api_key_env);
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
  }

  auto res = client.Post(endpoint_.base_path + "/chat/completions", headers, request.canonical(), "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout)
      return TransportFailure{ErrorKind::Timeout, 0, httplib::to_string(err)};
    return TransportFailure{ErrorKind::Connection, 0, httplib::to_string(err)};
  }
  if (res->status != 200) return TransportFailure{classify_http_status(res->status), res->status, "HTTP " + std::to_string(res->status)};
  return parse_completion_body(res->body);
}

} // namespace vqasynth::llm
