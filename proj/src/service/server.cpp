#include "canhil/service/server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <httplib.h>

namespace canhil::service {
namespace {

[[noreturn]] void io_error(const std::string& what) {
  throw Error(ErrorCode::IoError, what + ": " + std::strerror(errno));
}

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

std::string bearer(const httplib::Request& req) {
  const std::string h = req.get_header_value("Authorization");
  constexpr std::string_view kPrefix = "Bearer ";
  if (h.rfind(kPrefix, 0) == 0) return h.substr(kPrefix.size());
  return req.get_param_value("token");
}

}  // namespace

// ---- NDJSON over TCP ----------------------------------------------------------

NdjsonServer::~NdjsonServer() { stop(); }

void NdjsonServer::start(const std::string& host, int port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) io_error("socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::IoError, "bad listen address '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) io_error("bind");
  if (::listen(listen_fd_, 16) < 0) io_error("listen");
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void NdjsonServer::stop() {
  if (listen_fd_ < 0) return;
  stopping_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  listen_fd_ = -1;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(clients_mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : clients_) {
    if (t.joinable()) t.join();
  }
  clients_.clear();
}

void NdjsonServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    std::lock_guard lock(clients_mu_);
    client_fds_.push_back(fd);
    clients_.emplace_back([this, fd] { serve(fd); });
  }
}

void NdjsonServer::serve(int fd) {
  auto session = service_.open_session();
  auto outbox = session->outbox;
  // One writer per connection, so lines never interleave.
  std::thread writer([fd, outbox] {
    while (auto line = outbox->pop()) {
      if (!send_all(fd, *line + "\n")) break;
    }
    ::shutdown(fd, SHUT_RDWR);
  });

  std::string buffer;
  char chunk[4096];
  while (true) {
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      outbox->push_response(service_.handle_line(line, *session));
    }
  }
  service_.close_session(session);
  writer.join();
  {
    std::lock_guard lock(clients_mu_);
    std::erase(client_fds_, fd);
  }
  ::close(fd);
}

// ---- HTTP + server-sent events --------------------------------------------------

struct HttpGateway::Impl {
  httplib::Server server;
};

HttpGateway::HttpGateway(ControlService& service) : service_(service), impl_(std::make_unique<Impl>()) {}

HttpGateway::~HttpGateway() { stop(); }

void HttpGateway::start(const std::string& host, int port, const std::string& static_dir) {
  auto& svr = impl_->server;
  ControlService& svc = service_;

  svr.Post("/api/command", [&svc](const httplib::Request& req, httplib::Response& res) {
    Json cmd;
    try {
      cmd = Json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(Json{{"ok", false}, {"error", {{"code", "ValidationError"}, {"message", e.what()}}}}.dump(),
                      "application/json");
      return;
    }
    // Streaming ops attach to the session opened by GET /api/stream.
    std::shared_ptr<Session> session;
    if (cmd.is_object() && cmd.contains("session") && cmd.at("session").is_number_unsigned()) {
      session = svc.find_session(cmd.at("session").get<std::uint64_t>());
    }
    Session transient;
    Session& target = session ? *session : transient;
    // A bearer header authenticates; otherwise a "token" field in the command.
    if (!target.authenticated && !bearer(req).empty()) target.authenticated = svc.check_token(bearer(req));
    if (!session && svc.options().token.empty()) target.authenticated = true;
    const Json response = svc.handle_command(cmd, target);
    const bool auth_failed = !response.value("ok", false) && response.contains("error") &&
                             response.at("error").value("code", "") == "AuthFailed";
    res.status = auth_failed ? 401 : 200;
    res.set_content(response.dump(), "application/json");
  });

  svr.Get("/api/stream", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (!svc.check_token(bearer(req))) {
      res.status = 401;
      res.set_content(R"({"ok":false,"error":{"code":"AuthFailed","message":"missing or wrong token"}})",
                      "application/json");
      return;
    }
    auto session = svc.open_session();
    session->authenticated = true;
    std::string streams = req.has_param("streams") ? req.get_param_value("streams") : "monitor";
    try {
      std::size_t pos = 0;
      while (pos <= streams.size()) {
        const std::size_t comma = std::min(streams.find(',', pos), streams.size());
        if (comma > pos) svc.add_stream(*session, streams.substr(pos, comma - pos));
        pos = comma + 1;
      }
    } catch (const Error& e) {
      svc.close_session(session);
      res.status = 400;
      res.set_content(Json{{"ok", false}, {"error", {{"code", "ValidationError"}, {"message", e.what()}}}}.dump(),
                      "application/json");
      return;
    }
    session->outbox->push_response(Json{{"session", session->id}}.dump());
    res.set_chunked_content_provider(
        "text/event-stream",
        [session](std::size_t, httplib::DataSink& sink) {
          auto line = session->outbox->pop(1000);
          if (!line) {
            sink.done();
            return true;
          }
          const std::string event = line->empty() ? std::string(": keepalive\n\n") : "data: " + *line + "\n\n";
          return sink.write(event.data(), event.size());
        },
        [&svc, session](bool) { svc.close_session(session); });
  });

  if (!static_dir.empty() && !svr.set_mount_point("/", static_dir)) {
    throw Error(ErrorCode::IoError, "static directory not found: " + static_dir);
  }
  port_ = port == 0 ? svr.bind_to_any_port(host) : (svr.bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpGateway::stop() {
  if (!thread_.joinable()) return;
  impl_->server.stop();
  thread_.join();
}

}  // namespace canhil::service
