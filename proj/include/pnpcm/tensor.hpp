#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pnpcm {

using cdouble = std::complex<double>;
using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { kReal64 = 0, kComplex128 = 1 };

std::string to_string(DType dtype);
std::string shape_to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

// Dense row-major tensor of float64 or complex128 values. Complex values are
// stored interleaved (re, im) in the flat buffer, so the buffer holds
// 2 * element_count doubles for complex tensors.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);
  Tensor(Shape shape, DType dtype, std::vector<double> buffer);

  static Tensor real(Shape shape, std::vector<double> values);
  static Tensor complex(Shape shape, const std::vector<cdouble>& values);

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  bool is_complex() const { return dtype_ == DType::kComplex128; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return numel_; }
  // Number of doubles in the flat buffer.
  std::size_t buffer_size() const { return buffer_.size(); }
  std::size_t components() const { return is_complex() ? 2 : 1; }

  std::span<const double> buffer() const { return buffer_; }
  std::span<double> buffer() { return buffer_; }

  cdouble at(std::size_t i) const {
    return is_complex() ? cdouble(buffer_[2 * i], buffer_[2 * i + 1])
                        : cdouble(buffer_[i], 0.0);
  }
  void set(std::size_t i, cdouble v);

  // Real part of element i, or the value itself for real tensors.
  double re(std::size_t i) const { return buffer_[i * components()]; }

  bool same_layout(const Tensor& other) const {
    return dtype_ == other.dtype_ && shape_ == other.shape_;
  }

  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  DType dtype_ = DType::kReal64;
  std::size_t numel_ = 0;
  std::vector<double> buffer_;
};

// Throws ShapeError with `what` in the message unless a and b share shape and dtype.
void require_same_layout(const Tensor& a, const Tensor& b, const char* what);

Tensor zeros_like(const Tensor& x);

// alpha * x + y
Tensor axpy(double alpha, const Tensor& x, const Tensor& y);
// y += alpha * x
void axpy_inplace(double alpha, const Tensor& x, Tensor& y);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(double alpha, const Tensor& x);
void scale_inplace(double alpha, Tensor& x);

// sum_i conj(x_i) * y_i
cdouble inner(const Tensor& x, const Tensor& y);
double squared_norm(const Tensor& x);
double norm2(const Tensor& x);
// norm2(a - b) without materializing the difference.
double distance(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& x);
bool bit_equal(const Tensor& a, const Tensor& b);

// Promote a real tensor to complex with zero imaginary part.
Tensor to_complex(const Tensor& x);
Tensor real_part(const Tensor& x);
Tensor imag_part(const Tensor& x);
// Inverse of real_part/imag_part splitting.
Tensor combine_complex(const Tensor& re, const Tensor& im);

}  // namespace pnpcm
