#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "pnpcm/tensor.hpp"

namespace pnpcm {

// Little-endian framing shared by the denoiser wire protocol and tensor files.
//
//   tensor header := u8 dtype (0 real64, 1 complex128) | u32 ndim | u64 dims[ndim]
//   payload       := row-major f64 scalars, complex interleaved (re, im)
//
//   request  := "PNPD" | u32 version=1 | tensor header | f64 t | payload
//   response := "PNPD" | u32 status (0 ok, 1 error)
//               | ok:    tensor header | payload
//               | error: u32 message_len | utf-8 message
namespace wire {

inline constexpr char kRequestMagic[4] = {'P', 'N', 'P', 'D'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kStatusOk = 0;
inline constexpr std::uint32_t kStatusError = 1;
// Guards allocation on corrupt headers.
inline constexpr std::uint32_t kMaxRank = 16;
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

class Writer {
 public:
  void bytes(const void* data, std::size_t n);
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void tensor_header(const Tensor& t);
  void payload(const Tensor& t);

  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

struct TensorHeader {
  DType dtype = DType::kReal64;
  Shape shape;
};

// Pull-based reader; `fill(dst, n)` must deliver exactly n bytes or throw.
class Reader {
 public:
  explicit Reader(std::function<void(std::uint8_t*, std::size_t)> fill) : fill_(std::move(fill)) {}
  static Reader over(std::span<const std::uint8_t> bytes);

  void bytes(void* dst, std::size_t n) { fill_(static_cast<std::uint8_t*>(dst), n); }
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void expect_magic(const char (&magic)[4]);
  TensorHeader tensor_header();
  Tensor payload(const TensorHeader& header);

 private:
  std::function<void(std::uint8_t*, std::size_t)> fill_;
};

std::vector<std::uint8_t> encode_request(const Tensor& v, double t);
std::vector<std::uint8_t> encode_ok_response(const Tensor& v);
std::vector<std::uint8_t> encode_error_response(const std::string& message);

}  // namespace wire

// Blocking byte stream over a pair of file descriptors with a per-call
// deadline. Owns the descriptors it is given.
class FdStream {
 public:
  FdStream(int read_fd, int write_fd);
  ~FdStream();
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;

  // Throws TimeoutError when the deadline passes, ProtocolError on EOF or I/O error.
  void read_exact(std::uint8_t* dst, std::size_t n, double timeout_s);
  void write_all(std::span<const std::uint8_t> bytes, double timeout_s);
  // Returns false on clean EOF before the first byte.
  bool wait_readable(double timeout_s);

 private:
  int read_fd_;
  int write_fd_;
};

struct ExternalDenoiserConfig {
  // Either a command (argv) spawned with the protocol on its stdin/stdout,
  // or a unix domain socket path.
  std::vector<std::string> command;
  std::string socket_path;
  double timeout_s = 60.0;
};

// Client side of the protocol. One outstanding request at a time; the
// connection is opened lazily and dropped after any transport error so that
// the next call starts from a clean stream.
class ExternalDenoiserClient {
 public:
  explicit ExternalDenoiserClient(ExternalDenoiserConfig config);
  ~ExternalDenoiserClient();

  Tensor denoise(const Tensor& v, double t);
  const ExternalDenoiserConfig& config() const { return config_; }

 private:
  struct Connection;
  void connect();
  void disconnect();

  ExternalDenoiserConfig config_;
  std::unique_ptr<Connection> conn_;
  std::mutex mutex_;
};

using DenoiseHandler = std::function<Tensor(const Tensor& v, double t)>;

// Serves requests on the given descriptors until EOF. Handler exceptions
// become error responses; framing errors end the session. Returns the number
// of requests answered.
std::size_t serve_denoiser(int read_fd, int write_fd, const DenoiseHandler& handler);

// Listens on a unix socket and serves each connection on its own thread.
// Runs until `max_connections` sessions have finished (0 = forever).
void serve_denoiser_socket(const std::string& path, const DenoiseHandler& handler,
                           std::size_t max_connections = 0);

}  // namespace pnpcm
