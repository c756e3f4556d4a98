#include "doctest.h"

#include <openssl/evp.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "modsel/model_pool.hpp"

using namespace modsel;
namespace fs = std::filesystem;

namespace {

std::string sha256(const std::string& s) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(s.data(), s.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

class CountingBackend : public Backend {
 public:
  explicit CountingBackend(std::chrono::milliseconds delay = {}) : delay_(delay) {}
  std::string complete(const CompletionRequest& r) override {
    ++calls;
    std::this_thread::sleep_for(delay_);
    return "echo:" + r.prompt;
  }
  bool remote() const override { return false; }
  std::atomic<int> calls{0};

 private:
  std::chrono::milliseconds delay_;
};

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

SimulatedModelSpec table_locator() {
  SimulatedModelSpec spec;
  spec.name = "sim-locator";
  SimulatedRole role;
  role.role = "locate";
  role.match = "Extract the task";
  role.fields = {{"Table ", " has"}, {"ID is ", "."}};
  role.responses = {{"t7 || 3", "What is 5+(10.9>10.11)?"}};
  role.default_response = "no idea";
  spec.roles.push_back(role);
  return spec;
}

}  // namespace

TEST_CASE("cache key is the SHA-256 of the canonical request") {
  CompletionRequest r{ModelId{1}, "hello", 0.1, 1000};
  const auto canonical = nlohmann::json::array({"modsel.completion/1", "m", "hello", 0.1, 1000}).dump();
  CHECK(cache_key("m", r) == sha256(canonical));
  CHECK(cache_key("m", r).size() == 64);

  auto other = r;
  other.prompt = "hello!";
  CHECK(cache_key("m", other) != cache_key("m", r));
  other = r;
  other.temperature = 0.2;
  CHECK(cache_key("m", other) != cache_key("m", r));
  other = r;
  other.max_tokens = 999;
  CHECK(cache_key("m", other) != cache_key("m", r));
  CHECK(cache_key("m2", r) != cache_key("m", r));
}

TEST_CASE("simulated models key on sequential fields") {
  const auto spec = table_locator();
  const std::string prompt = "Extract the task whose ID is requested.\n\nTable t7 has rows.\nSolve the task whose ID is 3.";
  const auto resolved = spec.resolve(prompt);
  REQUIRE(resolved.has_value());
  CHECK(resolved->first == "locate");
  CHECK(resolved->second == "t7 || 3");
  CHECK(spec.respond(prompt) == "What is 5+(10.9>10.11)?");
  CHECK(spec.respond("Extract the task\n\nTable t8 has rows. ID is 3.") == "no idea");
  CHECK(spec.respond("something unrelated") == spec.default_response);

  const auto again = parse_simulated_spec(dump_simulated_spec(spec));
  CHECK(again.respond(prompt) == spec.respond(prompt));
}

TEST_CASE("pool caches completions and counts backend calls") {
  auto backend = std::make_shared<CountingBackend>();
  ModelPool pool({ModelEntry{"a", 0.1, 1000, backend}, ModelEntry{"b", 0.1, 1000, backend}});
  CHECK(pool.id("b") == ModelId{2});
  CHECK_THROWS_AS(pool.id("c"), Error);

  const auto first = pool.complete(pool.request(ModelId{1}, "p"));
  const auto second = pool.complete(pool.request(ModelId{1}, "p"));
  CHECK_FALSE(first.cached);
  CHECK(first.cost_units == 1);
  CHECK(second.cached);
  CHECK(second.cost_units == 0);
  CHECK(second.text == first.text);
  pool.complete(pool.request(ModelId{2}, "p"));  // different model, different key
  CHECK(backend->calls == 2);
  CHECK(pool.stats().backend_calls == 2);
  CHECK(pool.stats().cache_hits == 1);
}

TEST_CASE("concurrent identical requests reach the backend once") {
  auto backend = std::make_shared<CountingBackend>(std::chrono::milliseconds(30));
  ModelPool pool({ModelEntry{"slow", 0.1, 1000, backend}});
  std::vector<std::string> got(8);
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&, i] { got[i] = pool.complete(pool.request(ModelId{1}, "same")).text; });
    }
  }
  CHECK(backend->calls == 1);
  for (const auto& g : got) CHECK(g == "echo:same");
}

TEST_CASE("call limit raises BudgetExhausted but cached prompts still answer") {
  auto backend = std::make_shared<CountingBackend>();
  ModelPool pool({ModelEntry{"a", 0.1, 1000, backend}});
  pool.set_call_limit(2);
  pool.complete(pool.request(ModelId{1}, "1"));
  pool.complete(pool.request(ModelId{1}, "2"));
  CHECK_THROWS_AS(pool.complete(pool.request(ModelId{1}, "3")), BudgetExhausted);
  CHECK_NOTHROW(pool.complete(pool.request(ModelId{1}, "1")));
}

TEST_CASE("persistent cache survives a restart") {
  const auto dir = fresh_dir("modsel_cache_test");
  {
    auto backend = std::make_shared<CountingBackend>();
    ModelPool pool({ModelEntry{"a", 0.1, 1000, backend}}, std::make_shared<ResponseCache>(dir));
    pool.complete(pool.request(ModelId{1}, "x"));
    pool.complete(pool.request(ModelId{1}, "y"));
  }
  CHECK(fs::exists(dir / "responses.jsonl"));
  auto backend = std::make_shared<CountingBackend>();
  auto cache = std::make_shared<ResponseCache>(dir);
  CHECK(cache->size() == 2);
  ModelPool pool({ModelEntry{"a", 0.1, 1000, backend}}, cache);
  CHECK(pool.complete(pool.request(ModelId{1}, "x")).text == "echo:x");
  CHECK(backend->calls == 0);
}

TEST_CASE("pool files") {
  const auto pool = parse_pool(R"({
    "name": "demo", "judge": "j",
    "models": [
      {"name": "sim-a", "backend": "simulated", "temperature": 0.1, "max_tokens": 1000,
       "roles": [{"role": "r", "match": "Q:", "fields": [{"after": "Q:", "until": ""}], "responses": {"": ""}}]},
      {"name": "j", "backend": "simulated", "candidate": false, "default_response": "error: 0"},
      {"name": "api", "backend": "remote", "base_url": "http://127.0.0.1:9/v1", "auth_env": "NONE", "model": "x"}
    ]})");
  CHECK(pool.name() == "demo");
  CHECK(pool.default_judge() == std::optional<std::string>("j"));
  CHECK(pool.size() == 3);
  CHECK(pool.candidates() == std::vector<ModelId>{ModelId{1}, ModelId{3}});
  CHECK(pool.entry(ModelId{3}).backend->remote());
  CHECK_THROWS_AS(parse_pool(R"({"models": [{"name": "x", "backend": "carrier-pigeon"}]})"), Error);
  CHECK_THROWS_AS(parse_pool("not json"), Error);
}

TEST_CASE("remote backend speaks the chat-completions protocol") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"49"}}]})", "application/json");
  });
  server.Post("/bad/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::jthread runner([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("MODSEL_TEST_TOKEN", "s3cret", 1);
  RemoteEndpoint ep;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  ep.auth_env = "MODSEL_TEST_TOKEN";
  ep.remote_model = "gpt-test";
  ep.backoff = std::chrono::milliseconds(1);
  ep.timeout = std::chrono::seconds(5);

  SUBCASE("retries a 503, then parses the answer") {
    RemoteBackend backend(ep);
    CompletionRequest r{ModelId{1}, "What is 48+(10.9>10.11)?", 0.1, 1000};
    CHECK(backend.complete(r) == "49");
    CHECK(hits == 2);
    CHECK(seen_auth == "Bearer s3cret");
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body["model"] == "gpt-test");
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == r.prompt);
    CHECK(body["temperature"] == 0.1);
    CHECK(body["max_tokens"] == 1000);
  }
  SUBCASE("client errors are not retried") {
    auto bad = ep;
    bad.base_url = "http://127.0.0.1:" + std::to_string(port) + "/bad";
    RemoteBackend backend(bad);
    try {
      backend.complete({ModelId{1}, "x", 0.1, 10});
      FAIL("expected EndpointError");
    } catch (const EndpointError& e) {
      CHECK(e.attempts() == 1);
      CHECK(hits == 1);
    }
  }
  SUBCASE("missing credential fails before any request") {
    auto anon = ep;
    anon.auth_env = "MODSEL_TEST_TOKEN_UNSET";
    ::unsetenv("MODSEL_TEST_TOKEN_UNSET");
    CHECK_THROWS_AS(RemoteBackend(anon).complete({ModelId{1}, "x", 0.1, 10}), EndpointError);
    CHECK(hits == 0);
  }
  server.stop();
}

TEST_CASE("unreachable endpoint exhausts its attempts") {
  RemoteEndpoint ep;
  ep.base_url = "http://127.0.0.1:1/v1";
  ep.backoff = std::chrono::milliseconds(1);
  ep.timeout = std::chrono::seconds(2);
  try {
    RemoteBackend(ep).complete({ModelId{1}, "x", 0.1, 10});
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.attempts() == 3);
  }
}

TEST_CASE("response body parsing") {
  CHECK(RemoteBackend::parse_response_body(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
  CHECK(RemoteBackend::parse_response_body(
            R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})") ==
        "ab");
  CHECK_THROWS_AS(RemoteBackend::parse_response_body(R"({"error":"nope"})"), EndpointError);
}
