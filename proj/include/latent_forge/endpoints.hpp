#pragma once

// JSON request/response endpoints used for label proposers and embedders.
// Two transports: a long-lived child process speaking newline-delimited JSON
// on stdin/stdout, and HTTP POST.

#include <chrono>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace latent_forge {

// Transport failure, timeout, malformed reply, or a protocol-level
// {"error": ...} object from the remote side.
class EndpointError : public std::runtime_error {
 public:
  explicit EndpointError(const std::string& what, std::optional<double> retry_after = {})
      : std::runtime_error(what), retry_after_(retry_after) {}
  std::optional<double> retry_after() const { return retry_after_; }

 private:
  std::optional<double> retry_after_;
};

class JsonEndpoint {
 public:
  virtual ~JsonEndpoint() = default;
  // Thread-safe; calls on one endpoint are serialized.
  virtual nlohmann::json call(const nlohmann::json& request) = 0;
  virtual std::string describe() const = 0;
};

enum class Transport { stdio, http };

struct EndpointSpec {
  std::string name;
  Transport transport = Transport::stdio;
  std::vector<std::string> command;  // stdio: argv
  std::string url;                   // http: full URL including path
  double timeout_seconds = 60.0;
  std::string source = "generative";  // proposers only: generative|classifier|human
};

nlohmann::json to_json(const EndpointSpec& s);
EndpointSpec endpoint_spec_from_json(const nlohmann::json& j);

struct EndpointRegistry {
  std::vector<EndpointSpec> proposers;
  std::optional<EndpointSpec> embedder;
};

// {"proposers": [spec...], "embedder": spec}
EndpointRegistry endpoint_registry_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EndpointRegistry& r);

// Reads LATENT_FORGE_ENDPOINTS: either inline JSON or a path to a JSON file.
// Returns an empty registry when unset.
EndpointRegistry endpoints_from_environment();

class StdioEndpoint : public JsonEndpoint {
 public:
  StdioEndpoint(std::vector<std::string> command, std::chrono::milliseconds timeout);
  ~StdioEndpoint() override;
  StdioEndpoint(const StdioEndpoint&) = delete;
  StdioEndpoint& operator=(const StdioEndpoint&) = delete;

  nlohmann::json call(const nlohmann::json& request) override;
  std::string describe() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class HttpEndpoint : public JsonEndpoint {
 public:
  HttpEndpoint(std::string url, std::chrono::milliseconds timeout);
  ~HttpEndpoint() override;

  nlohmann::json call(const nlohmann::json& request) override;
  std::string describe() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<JsonEndpoint> open_endpoint(const EndpointSpec& spec);

}  // namespace latent_forge
