#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "modsel/system_graph.hpp"

namespace modsel {

struct CompletionRequest {
  ModelId model;
  std::string prompt;
  double temperature = 0.1;
  int max_tokens = 1000;
};

struct CompletionResponse {
  std::string text;
  bool cached = false;
  int cost_units = 0;  // 1 for a call that reached the backend, 0 otherwise
};

/// SHA-256 hex digest of the canonical serialization of (model name, prompt,
/// temperature, max_tokens). Stable across processes and platforms.
std::string cache_key(std::string_view model_name, const CompletionRequest& request);

/// Picks a substring of the prompt: the text after the first occurrence of
/// `after` (searching from the end of the previous field) up to the next
/// `until`. An empty `until` runs to the end of the prompt.
struct KeyField {
  std::string after;
  std::string until;
};

/// One module role a simulated model knows how to play. A role is selected
/// when `match` occurs in the prompt; the key is the concatenation of the
/// fields joined with " || ".
struct SimulatedRole {
  std::string role;
  std::string match;
  std::vector<KeyField> fields;
  std::map<std::string, std::string> responses;
  std::optional<std::string> default_response;
};

/// Deterministic stand-in for an LLM: a lookup table keyed by (role, task key).
struct SimulatedModelSpec {
  std::string name;
  std::vector<SimulatedRole> roles;
  std::string default_response = "I am not sure.";

  /// (role, key) for the first role whose marker occurs in the prompt.
  std::optional<std::pair<std::string, std::string>> resolve(std::string_view prompt) const;
  std::string respond(std::string_view prompt) const;
};

inline constexpr std::string_view kKeySeparator = " || ";

struct RemoteEndpoint {
  std::string base_url;          // e.g. https://api.example.com/v1
  std::string auth_env;          // name of the env var holding the bearer token
  std::string remote_model;      // model id sent on the wire
  std::map<std::string, std::string> headers;
  int attempts = 3;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{120};
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
  virtual bool remote() const = 0;
};

class SimulatedBackend final : public Backend {
 public:
  explicit SimulatedBackend(SimulatedModelSpec spec) : spec_(std::move(spec)) {}
  std::string complete(const CompletionRequest& request) override { return spec_.respond(request.prompt); }
  bool remote() const override { return false; }
  const SimulatedModelSpec& spec() const { return spec_; }

 private:
  SimulatedModelSpec spec_;
};

/// Generic chat-completion endpoint: POST {base_url}/chat/completions with
/// {model, messages:[{role:user, content}], temperature, max_tokens}.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string complete(const CompletionRequest& request) override;
  bool remote() const override { return true; }

  /// Request body exactly as sent.
  std::string request_body(const CompletionRequest& request) const;
  static std::string parse_response_body(std::string_view body);

 private:
  RemoteEndpoint endpoint_;
};

/// Append-only response store. With a directory it persists to
/// `<dir>/responses.jsonl` (one JSON record per line: key, model, prompt,
/// temperature, max_tokens, response, timestamp); without one it lives in memory.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(const std::filesystem::path& dir);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, std::string_view model_name, const CompletionRequest& request,
           const std::string& response);
  std::size_t size() const;
  bool persistent() const { return !file_.empty(); }

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
  std::filesystem::path file_;
};

struct ModelEntry {
  std::string name;
  double temperature = 0.1;
  int max_tokens = 1000;
  std::shared_ptr<Backend> backend;
  bool candidate = true;  // false for judge-only entries
};

struct PoolStats {
  std::size_t backend_calls = 0;  // uncached calls, simulated or remote
  std::size_t remote_calls = 0;
  std::size_t cache_hits = 0;
};

/// Uniform completion interface over the candidate models. Safe for
/// concurrent use; concurrent identical requests reach the backend once.
class ModelPool {
 public:
  explicit ModelPool(std::vector<ModelEntry> models, std::shared_ptr<ResponseCache> cache = nullptr,
                     std::string name = "pool", std::optional<std::string> default_judge = std::nullopt);
  ModelPool(const ModelPool&) = delete;
  ModelPool& operator=(const ModelPool&) = delete;

  const std::string& name() const { return name_; }
  std::size_t size() const { return models_.size(); }
  const std::string& model_name(ModelId id) const;
  ModelId id(std::string_view model_name) const;
  bool contains(std::string_view model_name) const;
  const ModelEntry& entry(ModelId id) const;
  /// Models eligible for allocation, ascending by index.
  std::vector<ModelId> candidates() const;

  /// Request carrying the model's configured temperature and max_tokens.
  CompletionRequest request(ModelId model, std::string prompt) const;
  CompletionResponse complete(const CompletionRequest& request);
  std::string cache_key(const CompletionRequest& request) const;

  /// Caps the number of uncached calls; exceeding it raises BudgetExhausted.
  void set_call_limit(std::optional<std::size_t> limit);
  PoolStats stats() const;
  const ResponseCache& cache() const { return *cache_; }

  /// Judge named by the pool file, if any.
  const std::optional<std::string>& default_judge() const { return default_judge_; }

 private:
  std::string name_;
  std::optional<std::string> default_judge_;
  std::vector<ModelEntry> models_;
  std::shared_ptr<ResponseCache> cache_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_future<std::string>> inflight_;
  std::optional<std::size_t> call_limit_;
  std::size_t backend_calls_ = 0;
  std::size_t remote_calls_ = 0;
  std::size_t cache_hits_ = 0;
};

SimulatedModelSpec parse_simulated_spec(std::string_view json_text);
std::string dump_simulated_spec(const SimulatedModelSpec& spec);

/// Pool config: {"name", "judge"?, "models": [{"name", "backend": "simulated"|"remote",
/// "base_url", "auth_env", "model", "temperature", "max_tokens", ...simulated fields}]}.
ModelPool load_pool(const std::filesystem::path& path, std::shared_ptr<ResponseCache> cache = nullptr);
ModelPool parse_pool(std::string_view json_text, std::shared_ptr<ResponseCache> cache = nullptr);

}  // namespace modsel
