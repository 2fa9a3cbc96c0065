#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "canhil/service/control.hpp"

namespace canhil::service {

/// Newline-delimited JSON over TCP: one command per line in, responses and
/// stream records out, each a whole line.
class NdjsonServer {
 public:
  explicit NdjsonServer(ControlService& service) : service_(service) {}
  ~NdjsonServer();

  /// Binds and starts accepting; port 0 picks a free port. Throws IoError.
  void start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void accept_loop();
  void serve(int fd);

  ControlService& service_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex clients_mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> clients_;
};

/// Browser-facing endpoint: POST /api/command (JSON in, JSON out) and
/// GET /api/stream?streams=monitor,bus_log as server-sent events. The token
/// goes in "Authorization: Bearer ..." or, for EventSource, ?token=.
/// Optionally serves static files (the console) from `static_dir`.
class HttpGateway {
 public:
  explicit HttpGateway(ControlService& service);
  ~HttpGateway();

  void start(const std::string& host, int port, const std::string& static_dir = {});
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  ControlService& service_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace canhil::service
