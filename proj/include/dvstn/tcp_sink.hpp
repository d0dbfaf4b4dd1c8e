#pragma once

#include <netdb.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cstring>
#include <iostream>
#include <string>

namespace dvstn {

// Optional newline-delimited detection sink. Connection or send failures
// degrade to a one-time warning; the pipeline itself never blocks on the
// network (short send timeout, then the sink goes quiet).
class TcpSink {
public:
  TcpSink(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string service = std::to_string(port);
    if (getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res) {
      warn(host, port, "address lookup failed");
      return;
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ >= 0) {
      timeval tv{0, 200000};  // 200 ms
      setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
      setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
      if (::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
        ::close(fd_);
        fd_ = -1;
      }
    }
    freeaddrinfo(res);
    if (fd_ < 0) warn(host, port, "connect failed");
  }

  TcpSink(const TcpSink&) = delete;
  TcpSink& operator=(const TcpSink&) = delete;

  ~TcpSink() {
    if (fd_ >= 0) ::close(fd_);
  }

  bool connected() const { return fd_ >= 0; }

  void send_line(const std::string& line) {
    if (fd_ < 0) return;
    std::string msg = line + "\n";
    if (::send(fd_, msg.data(), msg.size(), MSG_NOSIGNAL) < 0) {
      std::cerr << "warning: detection sink dropped the connection; continuing locally\n";
      ::close(fd_);
      fd_ = -1;
    }
  }

private:
  static void warn(const std::string& host, int port, const char* why) {
    std::cerr << "warning: cannot reach sink " << host << ":" << port << " (" << why
              << "); detections stay local\n";
  }

  int fd_ = -1;
};

}  // namespace dvstn
