#include "httplib.h"

#include <cstdlib>
#include <thread>

#include "json.hpp"
#include "modsel/model_pool.hpp"

namespace modsel {

using nlohmann::json;

namespace {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "base_url '" + url + "' has no scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  parts.origin = url.substr(0, path_start);
  parts.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!parts.path.empty() && parts.path.back() == '/') parts.path.pop_back();
  return parts;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string RemoteBackend::request_body(const CompletionRequest& request) const {
  const json body{{"model", endpoint_.remote_model},
                  {"messages", json::array({json{{"role", "user"}, {"content", request.prompt}}})},
                  {"temperature", request.temperature},
                  {"max_tokens", request.max_tokens}};
  return body.dump();
}

std::string RemoteBackend::parse_response_body(std::string_view body) {
  try {
    const auto doc = json::parse(body);
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    // some providers return a list of content parts
    std::string text;
    for (const auto& part : content) text += part.value("text", "");
    return text;
  } catch (const json::exception& err) {
    throw EndpointError(std::string("unexpected response body: ") + err.what(), 1);
  }
}

std::string RemoteBackend::complete(const CompletionRequest& request) {
  const auto url = split_url(endpoint_.base_url);
  httplib::Headers headers;
  if (!endpoint_.auth_env.empty()) {
    const char* token = std::getenv(endpoint_.auth_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw EndpointError("credential variable " + endpoint_.auth_env + " is not set", 0);
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  for (const auto& [name, value] : endpoint_.headers) headers.emplace(name, value);
  const auto body = request_body(request);

  std::string last_error;
  auto delay = endpoint_.backoff;
  const int attempts = std::max(1, endpoint_.attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(url.origin);
    client.set_connection_timeout(endpoint_.timeout);
    client.set_read_timeout(endpoint_.timeout);
    auto res = client.Post(url.path + "/chat/completions", headers, body, "application/json");
    if (res && res->status == 200) {
      try {
        return parse_response_body(res->body);
      } catch (const EndpointError& err) {
        throw EndpointError(err.what(), attempt);
      }
    }
    if (res) {
      last_error = "HTTP " + std::to_string(res->status);
      if (!retryable_status(res->status)) throw EndpointError(last_error + ": " + res->body, attempt);
    } else {
      last_error = "transport error: " + httplib::to_string(res.error());
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw EndpointError(endpoint_.base_url + " failed after " + std::to_string(attempts) + " attempts (" +
                          last_error + ")",
                      attempts);
}

}  // namespace modsel
