#include "pnpcm/protocol.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <thread>

#include "pnpcm/error.hpp"

namespace pnpcm {
namespace wire {
namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

}  // namespace

void Writer::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

void Writer::u32(std::uint32_t v) {
  v = to_little(v);
  bytes(&v, sizeof v);
}

void Writer::u64(std::uint64_t v) {
  v = to_little(v);
  bytes(&v, sizeof v);
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::tensor_header(const Tensor& t) {
  u8(static_cast<std::uint8_t>(t.dtype()));
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) u64(d);
}

void Writer::payload(const Tensor& t) {
  if constexpr (std::endian::native == std::endian::little) {
    bytes(t.buffer().data(), t.buffer_size() * sizeof(double));
  } else {
    for (double v : t.buffer()) f64(v);
  }
}

Reader Reader::over(std::span<const std::uint8_t> bytes) {
  auto offset = std::make_shared<std::size_t>(0);
  return Reader([bytes, offset](std::uint8_t* dst, std::size_t n) {
    if (*offset + n > bytes.size()) throw ProtocolError("truncated message");
    std::memcpy(dst, bytes.data() + *offset, n);
    *offset += n;
  });
}

std::uint8_t Reader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint32_t Reader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return to_little(v);
}

std::uint64_t Reader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return to_little(v);
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

void Reader::expect_magic(const char (&magic)[4]) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, magic, 4) != 0) {
    throw ProtocolError("bad magic: expected " + std::string(magic, 4) + ", got '" +
                        std::string(got, 4) + "'");
  }
}

TensorHeader Reader::tensor_header() {
  TensorHeader h;
  const std::uint8_t dtype = u8();
  if (dtype > 1) throw ProtocolError("unknown dtype code " + std::to_string(dtype));
  h.dtype = static_cast<DType>(dtype);
  const std::uint32_t ndim = u32();
  if (ndim > kMaxRank) throw ProtocolError("rank " + std::to_string(ndim) + " too large");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = u64();
    if (d != 0 && count > kMaxElements / d) throw ProtocolError("tensor too large");
    count *= d;
    h.shape.push_back(static_cast<std::size_t>(d));
  }
  return h;
}

Tensor Reader::payload(const TensorHeader& header) {
  Tensor t(header.shape, header.dtype);
  auto buf = t.buffer();
  bytes(buf.data(), buf.size() * sizeof(double));
  if constexpr (std::endian::native == std::endian::big) {
    for (double& v : buf) v = std::bit_cast<double>(to_little(std::bit_cast<std::uint64_t>(v)));
  }
  return t;
}

std::vector<std::uint8_t> encode_request(const Tensor& v, double t) {
  Writer w;
  w.bytes(kRequestMagic, 4);
  w.u32(kVersion);
  w.tensor_header(v);
  w.f64(t);
  w.payload(v);
  return w.data();
}

std::vector<std::uint8_t> encode_ok_response(const Tensor& v) {
  Writer w;
  w.bytes(kRequestMagic, 4);
  w.u32(kStatusOk);
  w.tensor_header(v);
  w.payload(v);
  return w.data();
}

std::vector<std::uint8_t> encode_error_response(const std::string& message) {
  Writer w;
  w.bytes(kRequestMagic, 4);
  w.u32(kStatusError);
  w.u32(static_cast<std::uint32_t>(message.size()));
  w.bytes(message.data(), message.size());
  return w.data();
}

}  // namespace wire

// --- FdStream ----------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

void ignore_sigpipe() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

// Milliseconds left until `deadline`, or -1 for no deadline.
int remaining_ms(const std::optional<Clock::time_point>& deadline) {
  if (!deadline) return -1;
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

std::optional<Clock::time_point> deadline_after(double timeout_s) {
  if (timeout_s < 0) return std::nullopt;
  return Clock::now() + std::chrono::microseconds(static_cast<long long>(timeout_s * 1e6));
}

void wait_fd(int fd, short events, const std::optional<Clock::time_point>& deadline,
             const char* what) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return;
    if (rc == 0) throw TimeoutError(std::string("timed out waiting to ") + what);
    if (errno != EINTR) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
  }
}

}  // namespace

FdStream::FdStream(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}

FdStream::~FdStream() {
  if (read_fd_ >= 0) ::close(read_fd_);
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
}

bool FdStream::wait_readable(double timeout_s) {
  wait_fd(read_fd_, POLLIN, deadline_after(timeout_s), "read");
  return true;
}

void FdStream::read_exact(std::uint8_t* dst, std::size_t n, double timeout_s) {
  const auto deadline = deadline_after(timeout_s);
  std::size_t got = 0;
  while (got < n) {
    wait_fd(read_fd_, POLLIN, deadline, "read");
    const ssize_t rc = ::read(read_fd_, dst + got, n - got);
    if (rc > 0) {
      got += static_cast<std::size_t>(rc);
    } else if (rc == 0) {
      throw ProtocolError("peer closed the stream after " + std::to_string(got) + " of " +
                          std::to_string(n) + " bytes");
    } else if (errno != EINTR && errno != EAGAIN) {
      throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
    }
  }
}

void FdStream::write_all(std::span<const std::uint8_t> bytes, double timeout_s) {
  const auto deadline = deadline_after(timeout_s);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    wait_fd(write_fd_, POLLOUT, deadline, "write");
    const ssize_t rc = ::write(write_fd_, bytes.data() + sent, bytes.size() - sent);
    if (rc > 0) {
      sent += static_cast<std::size_t>(rc);
    } else if (rc < 0 && errno != EINTR && errno != EAGAIN) {
      throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
    }
  }
}

// --- client --------------------------------------------------------------------

struct ExternalDenoiserClient::Connection {
  pid_t pid = -1;
  std::unique_ptr<FdStream> stream;

  ~Connection() {
    stream.reset();  // closes the child's stdin, which ends its serve loop
    if (pid <= 0) return;
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid, nullptr, WNOHANG) == pid) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
  }
};

ExternalDenoiserClient::ExternalDenoiserClient(ExternalDenoiserConfig config)
    : config_(std::move(config)) {
  if (config_.command.empty() == config_.socket_path.empty()) {
    throw std::invalid_argument("external denoiser needs exactly one of command or socket");
  }
  if (!(config_.timeout_s > 0.0)) throw std::invalid_argument("timeout must be positive");
  ignore_sigpipe();
}

ExternalDenoiserClient::~ExternalDenoiserClient() = default;

void ExternalDenoiserClient::connect() {
  auto conn = std::make_unique<Connection>();
  if (!config_.socket_path.empty()) {
    const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw ProtocolError("socket() failed");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (config_.socket_path.size() >= sizeof(addr.sun_path)) {
      ::close(fd);
      throw ProtocolError("socket path too long");
    }
    std::strcpy(addr.sun_path, config_.socket_path.c_str());
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string err = std::strerror(errno);
      ::close(fd);
      throw ProtocolError("cannot connect to " + config_.socket_path + ": " + err);
    }
    conn->stream = std::make_unique<FdStream>(fd, ::dup(fd));
  } else {
    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw ProtocolError("pipe failed");
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw ProtocolError("pipe failed");
    }
    std::vector<char*> argv;
    for (auto& a : config_.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw ProtocolError("fork failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    conn->pid = pid;
    conn->stream = std::make_unique<FdStream>(from_child[0], to_child[1]);
  }
  conn_ = std::move(conn);
}

void ExternalDenoiserClient::disconnect() { conn_.reset(); }

Tensor ExternalDenoiserClient::denoise(const Tensor& v, double t) {
  std::lock_guard lock(mutex_);
  if (!conn_) connect();
  const double timeout = config_.timeout_s;
  // One deadline for the whole exchange.
  const auto deadline = Clock::now() + std::chrono::microseconds(
                                           static_cast<long long>(timeout * 1e6));
  auto left = [&] {
    return std::max(0.0, std::chrono::duration<double>(deadline - Clock::now()).count());
  };
  try {
    conn_->stream->write_all(wire::encode_request(v, t), left());
    FdStream& stream = *conn_->stream;
    wire::Reader reader([&](std::uint8_t* dst, std::size_t n) { stream.read_exact(dst, n, left()); });
    reader.expect_magic(wire::kRequestMagic);
    const std::uint32_t status = reader.u32();
    if (status == wire::kStatusError) {
      const std::uint32_t len = reader.u32();
      if (len > (1u << 20)) throw ProtocolError("error message too long");
      std::string msg(len, '\0');
      reader.bytes(msg.data(), len);
      throw ProtocolError("external denoiser reported: " + msg);
    }
    if (status != wire::kStatusOk) {
      throw ProtocolError("unknown response status " + std::to_string(status));
    }
    const wire::TensorHeader header = reader.tensor_header();
    if (header.shape != v.shape() || header.dtype != v.dtype()) {
      throw ProtocolError("response shape mismatch: sent " + shape_to_string(v.shape()) + " " +
                          to_string(v.dtype()) + ", got " + shape_to_string(header.shape) + " " +
                          to_string(header.dtype));
    }
    return reader.payload(header);
  } catch (...) {
    disconnect();
    throw;
  }
}

// --- server --------------------------------------------------------------------

namespace {

struct BorrowedFds {
  int read_fd;
  int write_fd;

  void read_exact(std::uint8_t* dst, std::size_t n) const {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t rc = ::read(read_fd, dst + got, n - got);
      if (rc > 0) {
        got += static_cast<std::size_t>(rc);
      } else if (rc == 0) {
        throw ProtocolError("eof");
      } else if (errno != EINTR) {
        throw ProtocolError(std::strerror(errno));
      }
    }
  }

  void write_all(const std::vector<std::uint8_t>& bytes) const {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t rc = ::write(write_fd, bytes.data() + sent, bytes.size() - sent);
      if (rc > 0) {
        sent += static_cast<std::size_t>(rc);
      } else if (rc < 0 && errno != EINTR) {
        throw ProtocolError(std::strerror(errno));
      }
    }
  }

  // Returns false on EOF before any byte.
  bool peek_start(std::uint8_t* first) const {
    for (;;) {
      const ssize_t rc = ::read(read_fd, first, 1);
      if (rc == 1) return true;
      if (rc == 0) return false;
      if (errno != EINTR) return false;
    }
  }
};

}  // namespace

std::size_t serve_denoiser(int read_fd, int write_fd, const DenoiseHandler& handler) {
  ignore_sigpipe();
  const BorrowedFds io{read_fd, write_fd};
  std::size_t served = 0;
  for (;;) {
    std::uint8_t first = 0;
    if (!io.peek_start(&first)) return served;
    bool first_pending = true;
    wire::Reader reader([&](std::uint8_t* dst, std::size_t n) {
      if (n == 0) return;
      if (first_pending) {
        dst[0] = first;
        first_pending = false;
        io.read_exact(dst + 1, n - 1);
      } else {
        io.read_exact(dst, n);
      }
    });
    Tensor v;
    double t = 0.0;
    try {
      reader.expect_magic(wire::kRequestMagic);
      const std::uint32_t version = reader.u32();
      if (version != wire::kVersion) {
        throw ProtocolError("unsupported protocol version " + std::to_string(version));
      }
      const auto header = reader.tensor_header();
      t = reader.f64();
      v = reader.payload(header);
    } catch (const ProtocolError& e) {
      // The stream is out of sync; report and end the session.
      try {
        io.write_all(wire::encode_error_response(e.what()));
      } catch (const ProtocolError&) {
      }
      return served;
    }
    std::vector<std::uint8_t> response;
    try {
      response = wire::encode_ok_response(handler(v, t));
    } catch (const std::exception& e) {
      response = wire::encode_error_response(e.what());
    }
    try {
      io.write_all(response);
    } catch (const ProtocolError&) {
      return served;
    }
    ++served;
  }
}

void serve_denoiser_socket(const std::string& path, const DenoiseHandler& handler,
                           std::size_t max_connections) {
  ignore_sigpipe();
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw IoError("socket() failed");
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) {
    ::close(fd);
    throw IoError("socket path too long");
  }
  std::strcpy(addr.sun_path, path.c_str());
  ::unlink(path.c_str());
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 8) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd);
    throw IoError("cannot listen on " + path + ": " + err);
  }
  std::vector<std::thread> workers;
  for (std::size_t n = 0; max_connections == 0 || n < max_connections; ++n) {
    const int client = ::accept4(fd, nullptr, nullptr, SOCK_CLOEXEC);
    if (client < 0) {
      if (errno == EINTR) {
        --n;
        continue;
      }
      break;
    }
    workers.emplace_back([client, &handler] {
      serve_denoiser(client, client, handler);
      ::close(client);
    });
  }
  for (auto& w : workers) w.join();
  ::close(fd);
  ::unlink(path.c_str());
}

}  // namespace pnpcm
