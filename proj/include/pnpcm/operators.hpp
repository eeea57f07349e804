#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pnpcm/random.hpp"
#include "pnpcm/tensor.hpp"

namespace pnpcm {

enum class OperatorKind { kMask, kBlur, kDownsample, kFourierSubsample, kComposite, kDense };

std::string to_string(OperatorKind kind);

// Spatial view of a signal shape: [n] -> n x 1, [h, w] -> h x w x 1,
// [h, w, c...] -> h x w x prod(c...). Channels are innermost in memory.
struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 1;

  static Grid of(const Shape& shape);
  std::size_t pixels() const { return h * w; }
};

// Linear forward map A with its (conjugate) adjoint. Implementations are
// immutable after construction and safe to share across threads.
class LinearOperator {
 public:
  LinearOperator(Shape input_shape, Shape output_shape)
      : input_shape_(std::move(input_shape)), output_shape_(std::move(output_shape)) {}
  virtual ~LinearOperator() = default;

  virtual OperatorKind kind() const = 0;
  virtual std::string describe() const { return to_string(kind()); }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }

  Tensor apply(const Tensor& x) const;
  Tensor adjoint(const Tensor& y) const;
  // A^H A x; fused where the kind allows it.
  Tensor gram(const Tensor& x) const;

 protected:
  virtual Tensor apply_impl(const Tensor& x) const = 0;
  virtual Tensor adjoint_impl(const Tensor& y) const = 0;
  virtual Tensor gram_impl(const Tensor& x) const { return adjoint_impl(apply_impl(x)); }

 private:
  Shape input_shape_;
  Shape output_shape_;
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

// ---------------------------------------------------------------------------
// Mask (inpainting). Measurements stay on the full grid with dropped pixels
// set to zero, so A^H A = A = diag(keep).

struct MaskSpec {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> keep;  // row-major over the pixel grid

  double keep_fraction() const;
  // Keeps round(keep_fraction * h * w) pixels chosen uniformly without replacement.
  static MaskSpec random(std::size_t h, std::size_t w, double keep_fraction, Rng& rng);
  static MaskSpec all(std::size_t h, std::size_t w);
};

class MaskOperator final : public LinearOperator {
 public:
  MaskOperator(Shape shape, MaskSpec spec);

  OperatorKind kind() const override { return OperatorKind::kMask; }
  const MaskSpec& spec() const { return spec_; }

 protected:
  Tensor apply_impl(const Tensor& x) const override;
  Tensor adjoint_impl(const Tensor& y) const override { return apply_impl(y); }
  Tensor gram_impl(const Tensor& x) const override { return apply_impl(x); }

 private:
  MaskSpec spec_;
};

// All-true mask; the identity operator on `shape`.
OperatorPtr make_identity(const Shape& shape);

// ---------------------------------------------------------------------------
// Separable spatial operators (blur, downsampling) share one engine: a sparse
// matrix along rows and one along columns, applied per channel as
// Y = Mh X Mw^T with exact adjoint X = Mh^T Y Mw.

struct AxisMap {
  std::size_t in = 0;
  std::size_t out = 0;
  // rows[o] lists (input index, weight) pairs contributing to output o.
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

enum class Boundary { kCircular, kReflect };

std::string to_string(Boundary b);

struct BlurSpec {
  std::vector<double> kernel_1d;  // odd length, sums to 1
  Boundary boundary = Boundary::kCircular;

  // Taps exp(-i^2 / (2 sigma^2)) at offsets -size/2..size/2, normalized.
  static BlurSpec gaussian(std::size_t size, double sigma,
                           Boundary boundary = Boundary::kCircular);
};

AxisMap convolution_axis(std::size_t n, const std::vector<double>& kernel, Boundary boundary);

class SeparableOperator : public LinearOperator {
 public:
  SeparableOperator(Shape input_shape, AxisMap rows, AxisMap cols);

 protected:
  Tensor apply_impl(const Tensor& x) const override;
  Tensor adjoint_impl(const Tensor& y) const override;

 private:
  AxisMap rows_;
  AxisMap cols_;
};

class BlurOperator final : public SeparableOperator {
 public:
  BlurOperator(Shape shape, BlurSpec spec);

  OperatorKind kind() const override { return OperatorKind::kBlur; }
  std::string describe() const override;
  const BlurSpec& spec() const { return spec_; }

 private:
  BlurSpec spec_;
};

enum class DownsampleMethod { kBlockAverage, kBicubic };

struct DownsampleSpec {
  std::size_t factor = 1;
  DownsampleMethod method = DownsampleMethod::kBlockAverage;
};

class DownsampleOperator final : public SeparableOperator {
 public:
  DownsampleOperator(Shape input_shape, DownsampleSpec spec);

  OperatorKind kind() const override { return OperatorKind::kDownsample; }
  std::string describe() const override;
  const DownsampleSpec& spec() const { return spec_; }

 private:
  DownsampleSpec spec_;
};

// ---------------------------------------------------------------------------
// Cartesian k-space subsampling: per-coil sensitivity weighting, centered
// unitary 2D FFT, then zeroing of unsampled phase-encode lines (rows).
// Input is a complex image [h, w] or [h, w, 1]; output is [coils, h, w].

struct FourierSubsampleSpec {
  std::vector<std::uint8_t> sample_mask;  // one entry per k-space row
  std::size_t acs_lines = 0;
  std::size_t acceleration = 1;
  // [coils, h, w] complex, or nullopt for a single uniform coil.
  std::optional<Tensor> coil_sensitivities;

  std::size_t sampled_lines() const;
  // Central `acs_lines` rows always kept; the remaining round(h/R) - acs rows
  // drawn uniformly without replacement from the non-central rows.
  static FourierSubsampleSpec random_lines(std::size_t h, std::size_t acceleration,
                                           std::size_t acs_lines, Rng& rng);
  static FourierSubsampleSpec full(std::size_t h);
};

// Index range [first, first + acs) of the central rows.
std::size_t acs_first_line(std::size_t h, std::size_t acs_lines);

// Smooth synthetic sensitivities: Gaussian magnitude bumps centered on a ring
// around the image center with a slow linear phase, normalized so that
// sum_c |S_c|^2 = 1 at every pixel.
Tensor make_coil_maps(std::size_t coils, std::size_t h, std::size_t w);

class FourierSubsampleOperator final : public LinearOperator {
 public:
  FourierSubsampleOperator(Shape input_shape, FourierSubsampleSpec spec);

  OperatorKind kind() const override { return OperatorKind::kFourierSubsample; }
  std::string describe() const override;
  const FourierSubsampleSpec& spec() const { return spec_; }
  std::size_t coils() const { return coils_; }
  bool single_uniform_coil() const { return !spec_.coil_sensitivities.has_value(); }

 protected:
  Tensor apply_impl(const Tensor& x) const override;
  Tensor adjoint_impl(const Tensor& y) const override;
  Tensor gram_impl(const Tensor& x) const override;

 private:
  FourierSubsampleSpec spec_;
  std::size_t h_;
  std::size_t w_;
  std::size_t coils_;
};

// ---------------------------------------------------------------------------

// A = ops.back() * ... * ops.front()
class CompositeOperator final : public LinearOperator {
 public:
  explicit CompositeOperator(std::vector<OperatorPtr> ops);

  OperatorKind kind() const override { return OperatorKind::kComposite; }
  std::string describe() const override;
  const std::vector<OperatorPtr>& parts() const { return ops_; }

 protected:
  Tensor apply_impl(const Tensor& x) const override;
  Tensor adjoint_impl(const Tensor& y) const override;

 private:
  std::vector<OperatorPtr> ops_;
};

// Row-major complex matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<cdouble> data;

  cdouble& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  cdouble operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  DenseMatrix conjugate_transpose() const;
};

// Explicit matrix operator. Real inputs require a real-valued matrix.
class DenseOperator final : public LinearOperator {
 public:
  DenseOperator(Shape input_shape, Shape output_shape, DenseMatrix matrix);

  OperatorKind kind() const override { return OperatorKind::kDense; }
  const DenseMatrix& matrix() const { return matrix_; }

 protected:
  Tensor apply_impl(const Tensor& x) const override;
  Tensor adjoint_impl(const Tensor& y) const override;

 private:
  Tensor multiply(const DenseMatrix& m, const Tensor& x, const Shape& out_shape) const;

  DenseMatrix matrix_;
  DenseMatrix adjoint_;
  bool real_valued_;
};

constexpr std::size_t kDenseSizeLimit = 4096;

// Columns are apply(e_j) for standard basis vectors of `dtype` on the input
// domain. Throws std::length_error when the input has more than 4096 elements.
DenseMatrix to_dense(const LinearOperator& op, DType dtype = DType::kReal64);
// Same, for the adjoint map (columns are adjoint(e_j) on the output domain).
DenseMatrix to_dense_adjoint(const LinearOperator& op, DType dtype = DType::kReal64);

// apply(op, x_true) + sigma_y * eps with eps standard normal per component.
Tensor synthesize_measurement(const LinearOperator& op, const Tensor& x_true,
                              double sigma_y, Rng& rng);

}  // namespace pnpcm
