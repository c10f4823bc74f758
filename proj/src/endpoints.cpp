#include "latent_forge/endpoints.hpp"

#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "latent_forge/common.hpp"

extern char** environ;

namespace latent_forge {

nlohmann::json to_json(const EndpointSpec& s) {
  nlohmann::json j{{"name", s.name},
                   {"transport", s.transport == Transport::stdio ? "stdio" : "http"},
                   {"timeout_seconds", s.timeout_seconds},
                   {"source", s.source}};
  if (s.transport == Transport::stdio) {
    j["command"] = s.command;
  } else {
    j["url"] = s.url;
  }
  return j;
}

EndpointSpec endpoint_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("endpoint spec must be a JSON object");
  EndpointSpec s;
  s.name = j.value("name", std::string{});
  s.timeout_seconds = j.value("timeout_seconds", s.timeout_seconds);
  s.source = j.value("source", s.source);
  if (s.source != "generative" && s.source != "classifier" && s.source != "human") {
    throw ConfigError("endpoint '" + s.name + "': unknown source '" + s.source + "'");
  }
  if (!(s.timeout_seconds > 0.0)) {
    throw ConfigError("endpoint '" + s.name + "': timeout_seconds must be positive");
  }
  std::string transport = j.value("transport", std::string{});
  if (transport.empty()) transport = j.contains("url") ? "http" : "stdio";
  if (transport == "stdio") {
    s.transport = Transport::stdio;
    const auto& cmd = j.at("command");
    if (cmd.is_string()) {
      s.command = {cmd.get<std::string>()};
    } else {
      s.command = cmd.get<std::vector<std::string>>();
    }
    if (s.command.empty() || s.command.front().empty()) {
      throw ConfigError("endpoint '" + s.name + "': empty command");
    }
  } else if (transport == "http") {
    s.transport = Transport::http;
    s.url = j.at("url").get<std::string>();
  } else {
    throw ConfigError("endpoint '" + s.name + "': unknown transport '" + transport + "'");
  }
  if (s.name.empty()) s.name = s.transport == Transport::stdio ? s.command.front() : s.url;
  return s;
}

EndpointRegistry endpoint_registry_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("endpoint registry must be a JSON object");
  EndpointRegistry r;
  if (j.contains("proposers")) {
    for (const auto& p : j.at("proposers")) r.proposers.push_back(endpoint_spec_from_json(p));
  }
  if (j.contains("embedder") && !j.at("embedder").is_null()) {
    r.embedder = endpoint_spec_from_json(j.at("embedder"));
  }
  return r;
}

nlohmann::json to_json(const EndpointRegistry& r) {
  nlohmann::json j;
  j["proposers"] = nlohmann::json::array();
  for (const auto& p : r.proposers) j["proposers"].push_back(to_json(p));
  j["embedder"] = r.embedder ? to_json(*r.embedder) : nlohmann::json(nullptr);
  return j;
}

EndpointRegistry endpoints_from_environment() {
  const char* raw = std::getenv("LATENT_FORGE_ENDPOINTS");
  if (raw == nullptr || *raw == '\0') return {};
  std::string text(raw);
  const auto first = text.find_first_not_of(" \t\r\n");
  try {
    if (first != std::string::npos && text[first] == '{') {
      return endpoint_registry_from_json(nlohmann::json::parse(text));
    }
    std::ifstream in(text);
    if (!in) throw ConfigError("LATENT_FORGE_ENDPOINTS: cannot open '" + text + "'");
    return endpoint_registry_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("LATENT_FORGE_ENDPOINTS: ") + e.what());
  }
}

namespace {

nlohmann::json check_reply(const std::string& body, const std::string& who) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw EndpointError(who + ": malformed JSON reply");
  }
  if (!reply.is_object()) throw EndpointError(who + ": reply is not a JSON object");
  if (reply.contains("error") && !reply.at("error").is_null()) {
    std::optional<double> retry;
    if (reply.contains("retry_after") && reply.at("retry_after").is_number()) {
      retry = reply.at("retry_after").get<double>();
    }
    const auto& e = reply.at("error");
    throw EndpointError(who + ": " + (e.is_string() ? e.get<std::string>() : e.dump()), retry);
  }
  return reply;
}

// Writes all bytes without letting a closed pipe raise SIGPIPE.
bool write_all(int fd, const std::string& data) {
  sigset_t block, old;
  sigemptyset(&block);
  sigaddset(&block, SIGPIPE);
  pthread_sigmask(SIG_BLOCK, &block, &old);
  std::size_t off = 0;
  bool ok = true;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      ok = false;
      break;
    }
    off += static_cast<std::size_t>(n);
  }
  if (!ok && errno == EPIPE) {
    const timespec zero{0, 0};
    sigtimedwait(&block, nullptr, &zero);
  }
  pthread_sigmask(SIG_SETMASK, &old, nullptr);
  return ok;
}

}  // namespace

struct StdioEndpoint::Impl {
  std::vector<std::string> command;
  std::chrono::milliseconds timeout;
  std::mutex mu;
  pid_t pid = -1;
  int to_child = -1;
  int from_child = -1;
  std::string pending;

  void spawn() {
    int in_pipe[2], out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw EndpointError(describe() + ": pipe failed");
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw EndpointError(describe() + ": pipe failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    std::vector<char*> argv;
    for (auto& a : command) argv.push_back(a.data());
    argv.push_back(nullptr);
    const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    if (rc != 0) {
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      pid = -1;
      throw EndpointError(describe() + ": cannot start: " + std::strerror(rc));
    }
    to_child = in_pipe[1];
    from_child = out_pipe[0];
    pending.clear();
  }

  void shutdown() {
    if (to_child >= 0) ::close(to_child);
    if (from_child >= 0) ::close(from_child);
    to_child = from_child = -1;
    if (pid > 0) {
      // Closing stdin asks a well-behaved server to exit; give it a moment.
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid, &status, WNOHANG) == pid) {
          pid = -1;
          return;
        }
        ::usleep(2000);
      }
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      pid = -1;
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      const auto nl = pending.find('\n');
      if (nl != std::string::npos) {
        std::string line = pending.substr(0, nl);
        pending.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw EndpointError(describe() + ": timed out");
      pollfd p{from_child, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw EndpointError(describe() + ": poll failed");
      }
      if (r == 0) throw EndpointError(describe() + ": timed out");
      char buf[4096];
      const ssize_t n = ::read(from_child, buf, sizeof(buf));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw EndpointError(describe() + ": read failed");
      }
      if (n == 0) throw EndpointError(describe() + ": process closed its output");
      pending.append(buf, static_cast<std::size_t>(n));
    }
  }

  std::string describe() const {
    std::string s = "stdio:";
    for (const auto& a : command) s += " " + a;
    return s;
  }
};

StdioEndpoint::StdioEndpoint(std::vector<std::string> command, std::chrono::milliseconds timeout)
    : impl_(std::make_unique<Impl>()) {
  if (command.empty()) throw ConfigError("stdio endpoint: empty command");
  impl_->command = std::move(command);
  impl_->timeout = timeout;
}

StdioEndpoint::~StdioEndpoint() { impl_->shutdown(); }

nlohmann::json StdioEndpoint::call(const nlohmann::json& request) {
  std::lock_guard lock(impl_->mu);
  if (impl_->pid < 0) impl_->spawn();
  std::string line;
  try {
    if (!write_all(impl_->to_child, request.dump() + "\n")) {
      throw EndpointError(impl_->describe() + ": process closed its input");
    }
    line = impl_->read_line();
  } catch (const EndpointError&) {
    // The stream is out of sync after a transport failure; restart the
    // child on the next call.
    impl_->shutdown();
    throw;
  }
  return check_reply(line, impl_->describe());
}

std::string StdioEndpoint::describe() const { return impl_->describe(); }

struct HttpEndpoint::Impl {
  std::string url;
  std::string base;
  std::string path;
  std::chrono::milliseconds timeout;
  std::mutex mu;
};

HttpEndpoint::HttpEndpoint(std::string url, std::chrono::milliseconds timeout)
    : impl_(std::make_unique<Impl>()) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    throw ConfigError("http endpoint: expected http://host[:port]/path, got '" + url + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  impl_->base = slash == std::string::npos ? url : url.substr(0, slash);
  impl_->path = slash == std::string::npos ? "/" : url.substr(slash);
  impl_->url = std::move(url);
  impl_->timeout = timeout;
}

HttpEndpoint::~HttpEndpoint() = default;

nlohmann::json HttpEndpoint::call(const nlohmann::json& request) {
  std::lock_guard lock(impl_->mu);
  httplib::Client client(impl_->base);
  const auto secs = impl_->timeout.count() / 1000;
  const auto usecs = (impl_->timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  auto res = client.Post(impl_->path, request.dump(), "application/json");
  if (!res) {
    throw EndpointError(describe() + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    // Error bodies in the protocol's own shape carry the better message.
    const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_object() && parsed.contains("error")) check_reply(res->body, describe());
    std::optional<double> retry;
    if (res->has_header("Retry-After")) {
      try {
        retry = std::stod(res->get_header_value("Retry-After"));
      } catch (...) {
      }
    }
    throw EndpointError(describe() + ": HTTP " + std::to_string(res->status), retry);
  }
  return check_reply(res->body, describe());
}

std::string HttpEndpoint::describe() const { return "http: " + impl_->url; }

std::unique_ptr<JsonEndpoint> open_endpoint(const EndpointSpec& spec) {
  const auto timeout = std::chrono::milliseconds(
      static_cast<std::int64_t>(spec.timeout_seconds * 1000.0));
  if (spec.transport == Transport::stdio) {
    return std::make_unique<StdioEndpoint>(spec.command, timeout);
  }
  return std::make_unique<HttpEndpoint>(spec.url, timeout);
}

}  // namespace latent_forge
