#pragma once

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "boxrl/error.hpp"
#include "boxrl/similarity.hpp"

namespace boxrl {

// One duplex byte stream: a connected socket or a child process's stdio.
// Reads honor a deadline; hitting it raises TimeoutError.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  // Appends up to a chunk of available bytes; false on end of stream.
  virtual bool read_some(std::string& into,
                         std::chrono::steady_clock::time_point deadline) = 0;
  virtual void write_all(std::string_view data,
                         std::chrono::steady_clock::time_point deadline) = 0;
};

namespace wire_detail {

inline int remaining_ms(std::chrono::steady_clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                        deadline - std::chrono::steady_clock::now())
                        .count();
  return left > 0 ? static_cast<int>(left) : 0;
}

}  // namespace wire_detail

class FdStream final : public ByteStream {
 public:
  FdStream(int read_fd, int write_fd, bool is_socket, pid_t child = -1)
      : read_fd_(read_fd), write_fd_(write_fd), is_socket_(is_socket), child_(child) {}

  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;

  ~FdStream() override {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    reap_child();
  }

  bool read_some(std::string& into, std::chrono::steady_clock::time_point deadline) override {
    struct pollfd pfd{read_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, wire_detail::remaining_ms(deadline));
    if (rc == 0) throw TimeoutError("similarity endpoint: read deadline exceeded");
    if (rc < 0) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
    char buf[4096];
    const ssize_t n = ::read(read_fd_, buf, sizeof(buf));
    if (n < 0) throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
    if (n == 0) return false;
    into.append(buf, static_cast<std::size_t>(n));
    return true;
  }

  void write_all(std::string_view data, std::chrono::steady_clock::time_point deadline) override {
    std::size_t sent = 0;
    while (sent < data.size()) {
      struct pollfd pfd{write_fd_, POLLOUT, 0};
      const int rc = ::poll(&pfd, 1, wire_detail::remaining_ms(deadline));
      if (rc == 0) throw TimeoutError("similarity endpoint: write deadline exceeded");
      if (rc < 0) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      ssize_t n;
      if (is_socket_)
        n = ::send(write_fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      else
        n = ::write(write_fd_, data.data() + sent, data.size() - sent);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

 private:
  void reap_child() {
    if (child_ <= 0) return;
    for (int i = 0; i < 20; ++i) {
      if (::waitpid(child_, nullptr, WNOHANG) != 0) return;
      ::usleep(100'000);
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, nullptr, 0);
  }

  int read_fd_;
  int write_fd_;
  bool is_socket_;
  pid_t child_;
};

inline std::unique_ptr<ByteStream> connect_tcp(const std::string& host, int port,
                                               std::chrono::milliseconds timeout) {
  struct addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  struct addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0)
    throw ProviderError("cannot resolve " + host + ": " + gai_strerror(rc));

  int fd = -1;
  std::string last_error = "no addresses";
  for (struct addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    if (errno == EINPROGRESS) {
      struct pollfd pfd{fd, POLLOUT, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      int soerr = 0;
      socklen_t len = sizeof(soerr);
      if (ready > 0 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &soerr, &len) == 0 && soerr == 0)
        break;
      last_error = ready == 0 ? "connect timed out" : std::strerror(soerr ? soerr : errno);
    } else {
      last_error = std::strerror(errno);
    }
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    throw ProviderError("cannot connect to " + host + ":" + std::to_string(port) + ": " +
                        last_error);
  ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
  return std::make_unique<FdStream>(fd, fd, /*is_socket=*/true);
}

// Launches a scorer child process; its stdin/stdout become the stream.
inline std::unique_ptr<ByteStream> spawn_process(const std::vector<std::string>& argv) {
  if (argv.empty()) throw ConfigError("provider command must be non-empty");
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
    throw ProviderError(std::string("pipe failed: ") + std::strerror(errno));

  const pid_t pid = ::fork();
  if (pid < 0) throw ProviderError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    for (const int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<FdStream>(from_child[0], to_child[1], /*is_socket=*/false, pid);
}

// Line framing over a byte stream: one UTF-8 JSON object per '\n'-terminated
// line in each direction.
class LineChannel {
 public:
  explicit LineChannel(std::unique_ptr<ByteStream> stream) : stream_(std::move(stream)) {}

  void write_line(const std::string& line, std::chrono::steady_clock::time_point deadline) {
    stream_->write_all(line + "\n", deadline);
  }

  // Next full line without its terminator; ProtocolError if the stream ends
  // mid-conversation.
  std::string read_line(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      if (!stream_->read_some(buffer_, deadline))
        throw ProtocolError("similarity endpoint closed the connection");
    }
  }

 private:
  std::unique_ptr<ByteStream> stream_;
  std::string buffer_;
};

// One request/response exchange. Classification is exact: deadline overrun is
// TimeoutError; a malformed line, id mismatch, or out-of-range similarity is
// ProtocolError; a well-formed error response is RemoteError.
inline double external_similarity(LineChannel& channel, const SimilarityRequest& req,
                                  std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  channel.write_line(serialize_request(req), deadline);
  const SimilarityResponse resp = parse_response(channel.read_line(deadline));
  if (resp.id != req.id)
    throw ProtocolError("response id \"" + resp.id + "\" does not match request id \"" +
                        req.id + "\"");
  if (resp.error) throw RemoteError("similarity endpoint error: " + *resp.error);
  const double value = resp.similarity.value();
  if (!(value >= -1.0 && value <= 1.0))
    throw ProtocolError("similarity " + std::to_string(value) + " outside [-1,1]");
  return value;
}

// Provider adapter over a single connection. Transactions are serialized; ids
// are generated from a monotone counter.
class ExternalSimilarity final : public SimilarityProvider {
 public:
  ExternalSimilarity(std::unique_ptr<ByteStream> stream,
                     std::chrono::milliseconds timeout = std::chrono::seconds(10))
      : channel_(std::move(stream)), timeout_(timeout) {}

  double similarity(const ImageRef& image, const BBox& box,
                    const std::string& phrase) override {
    if (image.kind != ImageKind::FilePath || !image.path)
      throw ProviderError("external similarity requires file-path images");
    SimilarityRequest req;
    req.id = "q" + std::to_string(next_id_.fetch_add(1));
    req.image_path = *image.path;
    req.box = box;
    req.phrase = phrase;
    std::lock_guard<std::mutex> lock(mutex_);
    return external_similarity(channel_, req, timeout_);
  }

 private:
  LineChannel channel_;
  std::chrono::milliseconds timeout_;
  std::mutex mutex_;
  std::atomic<std::uint64_t> next_id_{0};
};

}  // namespace boxrl
