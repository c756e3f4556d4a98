#include "modsel/model_pool.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace modsel {

using nlohmann::json;

namespace {

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string cache_key(std::string_view model_name, const CompletionRequest& request) {
  const json canonical = json::array(
      {"modsel.completion/1", std::string(model_name), request.prompt, request.temperature, request.max_tokens});
  return sha256_hex(canonical.dump());
}

// --- simulated models -------------------------------------------------------

std::optional<std::pair<std::string, std::string>> SimulatedModelSpec::resolve(std::string_view prompt) const {
  for (const auto& role : roles) {
    const auto at = prompt.find(role.match);
    if (at == std::string_view::npos) continue;
    std::string key;
    std::size_t cursor = at + role.match.size();
    bool ok = true;
    for (std::size_t i = 0; i < role.fields.size(); ++i) {
      const auto& field = role.fields[i];
      const auto start = prompt.find(field.after, cursor);
      if (start == std::string_view::npos) {
        ok = false;
        break;
      }
      const auto begin = start + field.after.size();
      auto end = field.until.empty() ? prompt.size() : prompt.find(field.until, begin);
      if (end == std::string_view::npos) end = prompt.size();
      if (i > 0) key += kKeySeparator;
      key += prompt.substr(begin, end - begin);
      cursor = end;
    }
    if (ok) return std::make_pair(role.role, key);
  }
  return std::nullopt;
}

std::string SimulatedModelSpec::respond(std::string_view prompt) const {
  const auto resolved = resolve(prompt);
  if (!resolved) return default_response;
  for (const auto& role : roles) {
    if (role.role != resolved->first) continue;
    if (auto it = role.responses.find(resolved->second); it != role.responses.end()) return it->second;
    return role.default_response.value_or(default_response);
  }
  return default_response;
}

namespace {

SimulatedModelSpec simulated_from_json(const json& j) {
  SimulatedModelSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.default_response = j.value("default_response", spec.default_response);
  for (const auto& r : j.value("roles", json::array())) {
    SimulatedRole role;
    role.role = r.at("role").get<std::string>();
    role.match = r.at("match").get<std::string>();
    for (const auto& f : r.value("fields", json::array())) {
      role.fields.push_back({f.value("after", ""), f.value("until", "")});
    }
    role.responses = r.value("responses", std::map<std::string, std::string>{});
    if (r.contains("default_response")) role.default_response = r.at("default_response").get<std::string>();
    spec.roles.push_back(std::move(role));
  }
  return spec;
}

json simulated_to_json(const SimulatedModelSpec& spec) {
  json roles = json::array();
  for (const auto& role : spec.roles) {
    json fields = json::array();
    for (const auto& f : role.fields) fields.push_back({{"after", f.after}, {"until", f.until}});
    json r{{"role", role.role}, {"match", role.match}, {"fields", fields}, {"responses", role.responses}};
    if (role.default_response) r["default_response"] = *role.default_response;
    roles.push_back(std::move(r));
  }
  return json{{"name", spec.name}, {"default_response", spec.default_response}, {"roles", roles}};
}

}  // namespace

SimulatedModelSpec parse_simulated_spec(std::string_view json_text) {
  try {
    return simulated_from_json(json::parse(json_text));
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("malformed simulated model: ") + err.what());
  }
}

std::string dump_simulated_spec(const SimulatedModelSpec& spec) { return simulated_to_json(spec).dump(2); }

// --- cache -----------------------------------------------------------------

ResponseCache::ResponseCache(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  file_ = dir / "responses.jsonl";
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto rec = json::parse(line);
      entries_.insert_or_assign(rec.at("key").get<std::string>(), rec.at("response").get<std::string>());
    } catch (const json::exception&) {
      // a torn final line from an interrupted run; the entry is simply refetched
    }
  }
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  return std::nullopt;
}

void ResponseCache::put(const std::string& key, std::string_view model_name, const CompletionRequest& request,
                        const std::string& response) {
  std::unique_lock lock(mutex_);
  if (!entries_.emplace(key, response).second) return;
  if (file_.empty()) return;
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  const json rec{{"key", key},
                 {"model", std::string(model_name)},
                 {"prompt", request.prompt},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_tokens},
                 {"response", response},
                 {"timestamp_ms", now}};
  std::ofstream out(file_, std::ios::app);
  out << rec.dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::ConfigError, "cannot append to cache file " + file_.string());
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

// --- pool ------------------------------------------------------------------

ModelPool::ModelPool(std::vector<ModelEntry> models, std::shared_ptr<ResponseCache> cache, std::string name,
                     std::optional<std::string> default_judge)
    : name_(std::move(name)), default_judge_(std::move(default_judge)), models_(std::move(models)), cache_(std::move(cache)) {
  if (!cache_) cache_ = std::make_shared<ResponseCache>();
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (!models_[i].backend) throw Error(ErrorCode::ConfigError, "model '" + models_[i].name + "' has no backend");
    for (std::size_t j = 0; j < i; ++j) {
      if (models_[j].name == models_[i].name) {
        throw Error(ErrorCode::ConfigError, "model name '" + models_[i].name + "' is used twice");
      }
    }
  }
}

const ModelEntry& ModelPool::entry(ModelId id) const {
  if (id.index < 1 || static_cast<std::size_t>(id.index) > models_.size()) {
    throw Error(ErrorCode::UnknownModel, "model " + std::to_string(id.index) + " is not registered in " + name_);
  }
  return models_[static_cast<std::size_t>(id.index - 1)];
}

std::vector<ModelId> ModelPool::candidates() const {
  std::vector<ModelId> out;
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (models_[i].candidate) out.push_back(ModelId{static_cast<int>(i + 1)});
  }
  return out;
}

const std::string& ModelPool::model_name(ModelId id) const { return entry(id).name; }

ModelId ModelPool::id(std::string_view model_name) const {
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (models_[i].name == model_name) return ModelId{static_cast<int>(i + 1)};
  }
  throw Error(ErrorCode::UnknownModel, "model '" + std::string(model_name) + "' is not registered in " + name_);
}

bool ModelPool::contains(std::string_view model_name) const {
  for (const auto& m : models_) {
    if (m.name == model_name) return true;
  }
  return false;
}

CompletionRequest ModelPool::request(ModelId model, std::string prompt) const {
  const auto& e = entry(model);
  return CompletionRequest{model, std::move(prompt), e.temperature, e.max_tokens};
}

std::string ModelPool::cache_key(const CompletionRequest& request) const {
  return modsel::cache_key(model_name(request.model), request);
}

void ModelPool::set_call_limit(std::optional<std::size_t> limit) {
  std::lock_guard lock(mutex_);
  call_limit_ = limit;
}

PoolStats ModelPool::stats() const {
  std::lock_guard lock(mutex_);
  return PoolStats{backend_calls_, remote_calls_, cache_hits_};
}

CompletionResponse ModelPool::complete(const CompletionRequest& request) {
  if (request.temperature < 0) throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  if (request.max_tokens < 1) throw Error(ErrorCode::ConfigError, "max_tokens must be >= 1");
  const auto& e = entry(request.model);
  const auto key = modsel::cache_key(e.name, request);

  std::promise<std::string> promise;
  {
    std::unique_lock lock(mutex_);
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      return {std::move(*hit), true, 0};
    }
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      auto pending = it->second;
      ++cache_hits_;
      lock.unlock();
      return {pending.get(), true, 0};
    }
    if (call_limit_ && backend_calls_ >= *call_limit_) {
      throw BudgetExhausted("call limit of " + std::to_string(*call_limit_) + " reached");
    }
    inflight_.emplace(key, promise.get_future().share());
    ++backend_calls_;
    if (e.backend->remote()) ++remote_calls_;
  }

  std::string text;
  try {
    text = e.backend->complete(request);
    cache_->put(key, e.name, request, text);
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mutex_);
    inflight_.erase(key);
    throw;
  }
  promise.set_value(text);
  {
    std::lock_guard lock(mutex_);
    inflight_.erase(key);
  }
  return {std::move(text), false, 1};
}

// --- config ----------------------------------------------------------------

ModelPool parse_pool(std::string_view json_text, std::shared_ptr<ResponseCache> cache) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("model pool file is not valid JSON: ") + err.what());
  }
  try {
    std::vector<ModelEntry> models;
    for (const auto& m : doc.at("models")) {
      ModelEntry entry;
      entry.name = m.at("name").get<std::string>();
      entry.temperature = m.value("temperature", 0.1);
      entry.max_tokens = m.value("max_tokens", 1000);
      entry.candidate = m.value("candidate", true);
      if (entry.temperature < 0) throw Error(ErrorCode::ConfigError, entry.name + ": temperature must be >= 0");
      if (entry.max_tokens < 1) throw Error(ErrorCode::ConfigError, entry.name + ": max_tokens must be >= 1");
      const auto backend = m.value("backend", "simulated");
      if (backend == "simulated") {
        entry.backend = std::make_shared<SimulatedBackend>(simulated_from_json(m));
      } else if (backend == "remote") {
        RemoteEndpoint ep;
        ep.base_url = m.at("base_url").get<std::string>();
        ep.auth_env = m.value("auth_env", "");
        ep.remote_model = m.value("model", entry.name);
        ep.headers = m.value("headers", std::map<std::string, std::string>{});
        ep.attempts = m.value("attempts", 3);
        ep.backoff = std::chrono::milliseconds(m.value("backoff_ms", 500));
        ep.timeout = std::chrono::seconds(m.value("timeout_s", 120));
        entry.backend = std::make_shared<RemoteBackend>(std::move(ep));
      } else {
        throw Error(ErrorCode::ConfigError, entry.name + ": unknown backend '" + backend + "'");
      }
      models.push_back(std::move(entry));
    }
    std::optional<std::string> judge;
    if (doc.contains("judge")) judge = doc.at("judge").get<std::string>();
    return ModelPool(std::move(models), std::move(cache), doc.value("name", "pool"), std::move(judge));
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("malformed model pool file: ") + err.what());
  }
}

ModelPool load_pool(const std::filesystem::path& path, std::shared_ptr<ResponseCache> cache) {
  return parse_pool(read_file(path), std::move(cache));
}

}  // namespace modsel
