#include "pnpcm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "pnpcm/error.hpp"

namespace pnpcm {

std::string to_string(DType dtype) {
  return dtype == DType::kReal64 ? "real64" : "complex128";
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype), numel_(element_count(shape_)) {
  buffer_.assign(numel_ * components(), 0.0);
}

Tensor::Tensor(Shape shape, DType dtype, std::vector<double> buffer)
    : shape_(std::move(shape)),
      dtype_(dtype),
      numel_(element_count(shape_)),
      buffer_(std::move(buffer)) {
  if (buffer_.size() != numel_ * components()) {
    throw ShapeError("tensor buffer holds " + std::to_string(buffer_.size()) +
                     " scalars but shape " + shape_to_string(shape_) + " (" +
                     to_string(dtype_) + ") needs " +
                     std::to_string(numel_ * components()));
  }
}

Tensor Tensor::real(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), DType::kReal64, std::move(values));
}

Tensor Tensor::complex(Shape shape, const std::vector<cdouble>& values) {
  std::vector<double> buf(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    buf[2 * i] = values[i].real();
    buf[2 * i + 1] = values[i].imag();
  }
  return Tensor(std::move(shape), DType::kComplex128, std::move(buf));
}

void Tensor::set(std::size_t i, cdouble v) {
  if (is_complex()) {
    buffer_[2 * i] = v.real();
    buffer_[2 * i + 1] = v.imag();
  } else {
    buffer_[i] = v.real();
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != numel_) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                     shape_to_string(shape));
  }
  return Tensor(std::move(shape), dtype_, buffer_);
}

void require_same_layout(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_layout(b)) {
    throw ShapeError(std::string(what) + ": operand mismatch " +
                     shape_to_string(a.shape()) + " " + to_string(a.dtype()) +
                     " vs " + shape_to_string(b.shape()) + " " +
                     to_string(b.dtype()));
  }
}

Tensor zeros_like(const Tensor& x) { return Tensor(x.shape(), x.dtype()); }

Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
  Tensor out = y;
  axpy_inplace(alpha, x, out);
  return out;
}

void axpy_inplace(double alpha, const Tensor& x, Tensor& y) {
  require_same_layout(x, y, "axpy");
  auto xs = x.buffer();
  auto ys = y.buffer();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += alpha * xs[i];
}

Tensor add(const Tensor& a, const Tensor& b) { return axpy(1.0, b, a); }

Tensor sub(const Tensor& a, const Tensor& b) { return axpy(-1.0, b, a); }

Tensor scale(double alpha, const Tensor& x) {
  Tensor out = x;
  scale_inplace(alpha, out);
  return out;
}

void scale_inplace(double alpha, Tensor& x) {
  for (double& v : x.buffer()) v *= alpha;
}

cdouble inner(const Tensor& x, const Tensor& y) {
  require_same_layout(x, y, "inner");
  auto xs = x.buffer();
  auto ys = y.buffer();
  if (!x.is_complex()) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += xs[i] * ys[i];
    return {s, 0.0};
  }
  double re = 0.0;
  double im = 0.0;
  for (std::size_t i = 0; i < xs.size(); i += 2) {
    // conj(a + ib) (c + id) = (ac + bd) + i(ad - bc)
    re += xs[i] * ys[i] + xs[i + 1] * ys[i + 1];
    im += xs[i] * ys[i + 1] - xs[i + 1] * ys[i];
  }
  return {re, im};
}

double squared_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.buffer()) s += v * v;
  return s;
}

double norm2(const Tensor& x) { return std::sqrt(squared_norm(x)); }

double distance(const Tensor& a, const Tensor& b) {
  require_same_layout(a, b, "distance");
  auto as = a.buffer();
  auto bs = b.buffer();
  double s = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const double d = as[i] - bs[i];
    s += d * d;
  }
  return std::sqrt(s);
}

bool all_finite(const Tensor& x) {
  for (double v : x.buffer()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_layout(b)) return false;
  return std::memcmp(a.buffer().data(), b.buffer().data(),
                     a.buffer_size() * sizeof(double)) == 0;
}

Tensor to_complex(const Tensor& x) {
  if (x.is_complex()) return x;
  Tensor out(x.shape(), DType::kComplex128);
  auto src = x.buffer();
  auto dst = out.buffer();
  for (std::size_t i = 0; i < src.size(); ++i) dst[2 * i] = src[i];
  return out;
}

namespace {

Tensor component(const Tensor& x, std::size_t offset) {
  if (!x.is_complex()) throw ShapeError("expected a complex tensor");
  Tensor out(x.shape(), DType::kReal64);
  auto src = x.buffer();
  auto dst = out.buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[2 * i + offset];
  return out;
}

}  // namespace

Tensor real_part(const Tensor& x) { return component(x, 0); }

Tensor imag_part(const Tensor& x) { return component(x, 1); }

Tensor combine_complex(const Tensor& re, const Tensor& im) {
  require_same_layout(re, im, "combine_complex");
  if (re.is_complex()) throw ShapeError("combine_complex expects real parts");
  Tensor out(re.shape(), DType::kComplex128);
  auto dst = out.buffer();
  auto r = re.buffer();
  auto i = im.buffer();
  for (std::size_t k = 0; k < r.size(); ++k) {
    dst[2 * k] = r[k];
    dst[2 * k + 1] = i[k];
  }
  return out;
}

}  // namespace pnpcm
