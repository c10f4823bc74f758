#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "latent_forge/endpoints.hpp"
#include "latent_forge/labeling.hpp"

using namespace latent_forge;
using namespace std::chrono_literals;
using nlohmann::json;

TEST_SUITE("endpoints") {

TEST_CASE("stdio proposer answers line by line and survives reuse") {
  StdioEndpoint ep({FAKE_ENDPOINT_PATH, "proposer", "choir", "organ"}, 5000ms);
  for (int i = 0; i < 3; ++i) {
    const auto reply = ep.call({{"feature_id", i}});
    const auto c = parse_proposer_reply(reply, LabelSource::generative, "fake");
    REQUIRE(c.size() == 2);
    CHECK(c[1].text == "organ");
  }
}

TEST_CASE("stdio embedder returns unit vectors through the Embedder checks") {
  StdioEndpoint ep({FAKE_ENDPOINT_PATH, "embedder", "16"}, 5000ms);
  Embedder e(ep);
  const std::vector<std::string> texts{"calm piano", "distorted guitar"};
  const auto v = e.embed_texts(texts);
  REQUIRE(v.size() == 2);
  CHECK(v[0].size() == 16);
  CHECK(v[0] != v[1]);
  CHECK(e.embed_texts(texts) == v);
}

TEST_CASE("protocol errors carry retry_after") {
  StdioEndpoint ep({FAKE_ENDPOINT_PATH, "fail"}, 5000ms);
  try {
    ep.call(json::object());
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    REQUIRE(e.retry_after().has_value());
    CHECK(*e.retry_after() == doctest::Approx(2.5));
  }
}

TEST_CASE("timeouts and dead children are endpoint errors") {
  StdioEndpoint hang({FAKE_ENDPOINT_PATH, "hang"}, 200ms);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(hang.call(json::object()), EndpointError);
  CHECK(std::chrono::steady_clock::now() - t0 < 5s);

  StdioEndpoint die({FAKE_ENDPOINT_PATH, "die"}, 2000ms);
  CHECK_THROWS_AS(die.call(json::object()), EndpointError);
  CHECK_THROWS_AS(die.call(json::object()), EndpointError);

  StdioEndpoint missing({"/nonexistent/latent-forge-helper"}, 500ms);
  CHECK_THROWS_AS(missing.call(json::object()), EndpointError);
}

TEST_CASE("http transport: success, JSON errors and Retry-After") {
  httplib::Server server;
  server.Post("/propose", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    res.set_content(json{{"candidates", {{{"text", "echo " + std::to_string(body["feature_id"].get<int>())}}}}}.dump(),
                    "application/json");
  });
  server.Post("/busy", [](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
    res.set_header("Retry-After", "7");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content(R"({"error": "model offline", "retry_after": 3})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);

  HttpEndpoint ok(base + "/propose", 3000ms);
  CHECK(ok.call({{"feature_id", 5}})["candidates"][0]["text"] == "echo 5");

  try {
    HttpEndpoint(base + "/busy", 3000ms).call(json::object());
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.retry_after().value_or(-1) == doctest::Approx(7.0));
  }
  try {
    HttpEndpoint(base + "/broken", 3000ms).call(json::object());
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(std::string(e.what()).find("model offline") != std::string::npos);
    CHECK(e.retry_after().value_or(-1) == doctest::Approx(3.0));
  }
  server.stop();
  th.join();
  CHECK_THROWS_AS(HttpEndpoint(base + "/propose", 500ms).call(json::object()), EndpointError);
}

TEST_CASE("registry JSON and environment") {
  const json j = {{"proposers",
                   {{{"name", "local"}, {"command", {"python3", "tagger.py"}}, {"source", "classifier"}},
                    {{"name", "remote"}, {"url", "http://localhost:9/p"}, {"timeout_seconds", 5}}}},
                  {"embedder", {{"name", "clap"}, {"command", {"clap-server"}}}}};
  const auto r = endpoint_registry_from_json(j);
  REQUIRE(r.proposers.size() == 2);
  CHECK(r.proposers[0].transport == Transport::stdio);
  CHECK(r.proposers[1].transport == Transport::http);
  CHECK(r.proposers[1].timeout_seconds == 5.0);
  REQUIRE(r.embedder.has_value());
  CHECK(endpoint_registry_from_json(to_json(r)).proposers[0].command == r.proposers[0].command);
  CHECK_THROWS(endpoint_spec_from_json({{"name", "x"}, {"command", {"y"}}, {"source", "oracle"}}));

  ::setenv("LATENT_FORGE_ENDPOINTS", j.dump().c_str(), 1);
  CHECK(endpoints_from_environment().proposers.size() == 2);
  ::unsetenv("LATENT_FORGE_ENDPOINTS");
  CHECK(endpoints_from_environment().proposers.empty());
}

}
