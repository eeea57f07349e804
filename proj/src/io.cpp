#include "pnpcm/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "pnpcm/error.hpp"
#include "pnpcm/metrics.hpp"
#include "pnpcm/protocol.hpp"

namespace pnpcm {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

// --- tensor files --------------------------------------------------------------------

std::vector<std::uint8_t> encode_tensor_file(const Tensor& x) {
  wire::Writer w;
  w.bytes(kTensorFileMagic, 4);
  w.u32(kTensorFileVersion);
  w.tensor_header(x);
  w.payload(x);
  return w.data();
}

Tensor decode_tensor_file(std::span<const std::uint8_t> bytes) {
  try {
    auto reader = wire::Reader::over(bytes);
    reader.expect_magic(kTensorFileMagic);
    const std::uint32_t version = reader.u32();
    if (version != kTensorFileVersion) {
      throw IoError("unsupported tensor file version " + std::to_string(version));
    }
    const auto header = reader.tensor_header();
    // Size check precedes allocation so corrupt headers cannot force huge buffers.
    const std::size_t header_bytes = 4 + 4 + 1 + 4 + 8 * header.shape.size();
    const std::size_t payload_bytes = element_count(header.shape) *
                                      (header.dtype == DType::kComplex128 ? 2 : 1) * sizeof(double);
    if (header_bytes + payload_bytes < bytes.size()) throw IoError("tensor file has trailing bytes");
    if (header_bytes + payload_bytes > bytes.size()) throw IoError("tensor file truncated");
    return reader.payload(header);
  } catch (const ProtocolError& e) {
    throw IoError(std::string("malformed tensor file: ") + e.what());
  }
}

void save_tensor(const fs::path& path, const Tensor& x) { write_file(path, encode_tensor_file(x)); }

Tensor load_tensor(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_tensor_file(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// --- netpbm --------------------------------------------------------------------------

namespace {

class PnmParser {
 public:
  explicit PnmParser(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  // Next whitespace-separated unsigned integer, skipping '#' comments.
  std::size_t number() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw IoError("bad PNM header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (std::size_t{1} << 32)) throw IoError("PNM value out of range");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from binary data.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw IoError("bad PNM header");
    ++pos_;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::uint8_t byte() { return bytes_[pos_++]; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool is_pnm(std::span<const std::uint8_t> b) {
  return b.size() >= 2 && b[0] == 'P' && (b[1] == '2' || b[1] == '3' || b[1] == '5' || b[1] == '6');
}

Tensor parse_pnm(std::span<const std::uint8_t> bytes) {
  if (!is_pnm(bytes)) throw IoError("not a P2/P3/P5/P6 image");
  const char kind = static_cast<char>(bytes[1]);
  PnmParser p(bytes.subspan(2));
  const std::size_t w = p.number();
  const std::size_t h = p.number();
  const std::size_t maxval = p.number();
  if (w == 0 || h == 0) throw IoError("PNM image has zero size");
  if (w > 65536 || h > 65536) throw IoError("PNM image too large");
  if (maxval == 0 || maxval > 65535) throw IoError("PNM maxval must be in 1..65535");
  const std::size_t channels = (kind == '3' || kind == '6') ? 3 : 1;
  const std::size_t count = w * h * channels;
  const bool binary = kind == '5' || kind == '6';
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;

  Tensor out = channels == 1 ? Tensor({h, w}, DType::kReal64) : Tensor({h, w, 3}, DType::kReal64);
  auto dst = out.buffer();
  const double inv = 1.0 / static_cast<double>(maxval);
  if (binary) {
    p.end_header();
    if (p.remaining() < count * sample_bytes) throw IoError("PNM pixel data truncated");
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t v = p.byte();
      if (sample_bytes == 2) v = (v << 8) | p.byte();
      if (v > maxval) throw IoError("PNM sample exceeds maxval");
      dst[i] = static_cast<double>(v) * inv;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t v = p.number();
      if (v > maxval) throw IoError("PNM sample exceeds maxval");
      dst[i] = static_cast<double>(v) * inv;
    }
  }
  return out;
}

}  // namespace

Tensor load_pnm(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_pnm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_pnm(const fs::path& path, const Tensor& x, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("bit_depth must be 8 or 16");
  const Tensor img = x.is_complex() ? magnitude(x) : x;
  const auto& shape = img.shape();
  std::size_t channels = 1;
  if (shape.size() == 3) channels = shape[2];
  if (shape.size() < 2 || shape.size() > 3 || (channels != 1 && channels != 3)) {
    throw ShapeError("save_pnm expects [h, w], [h, w, 1] or [h, w, 3], got " +
                     shape_to_string(shape));
  }
  const std::size_t maxval = bit_depth == 8 ? 255 : 65535;
  std::string header = std::string(channels == 1 ? "P5" : "P6") + "\n" + std::to_string(shape[1]) +
                       " " + std::to_string(shape[0]) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (double v : img.buffer()) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    const auto q = static_cast<std::uint32_t>(std::lround(c * static_cast<double>(maxval)));
    if (bit_depth == 16) bytes.push_back(static_cast<std::uint8_t>(q >> 8));
    bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  write_file(path, bytes);
}

Tensor load_image(const fs::path& path, const std::optional<Shape>& expected) {
  const auto bytes = read_file(path);
  Tensor t;
  try {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kTensorFileMagic, 4) == 0) {
      t = decode_tensor_file(bytes);
    } else if (is_pnm(bytes)) {
      t = parse_pnm(bytes);
    } else {
      throw IoError("unsupported container (expected PGM/PPM or tensor file)");
    }
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (expected && t.shape() != *expected) {
    throw ShapeError(path.string() + ": image shape " + shape_to_string(t.shape()) +
                     " does not match configured " + shape_to_string(*expected));
  }
  return t;
}

}  // namespace pnpcm
