#include "pnpcm/operators.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fft.hpp"
#include "pnpcm/error.hpp"

namespace pnpcm {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::kMask: return "mask";
    case OperatorKind::kBlur: return "blur";
    case OperatorKind::kDownsample: return "downsample";
    case OperatorKind::kFourierSubsample: return "fourier_subsample";
    case OperatorKind::kComposite: return "composite";
    case OperatorKind::kDense: return "dense";
  }
  return "unknown";
}

std::string to_string(Boundary b) { return b == Boundary::kCircular ? "circular" : "reflect"; }

Grid Grid::of(const Shape& shape) {
  if (shape.empty()) throw ShapeError("signal shape must have rank >= 1");
  Grid g;
  g.h = shape[0];
  g.w = shape.size() > 1 ? shape[1] : 1;
  g.c = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) g.c *= shape[i];
  return g;
}

Tensor LinearOperator::apply(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    throw ShapeError(describe() + " apply: expected input " + shape_to_string(input_shape_) +
                     ", got " + shape_to_string(x.shape()));
  }
  return apply_impl(x);
}

Tensor LinearOperator::adjoint(const Tensor& y) const {
  if (y.shape() != output_shape_) {
    throw ShapeError(describe() + " adjoint: expected input " +
                     shape_to_string(output_shape_) + ", got " + shape_to_string(y.shape()));
  }
  return adjoint_impl(y);
}

Tensor LinearOperator::gram(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    throw ShapeError(describe() + " gram: expected input " + shape_to_string(input_shape_) +
                     ", got " + shape_to_string(x.shape()));
  }
  return gram_impl(x);
}

// --- mask ------------------------------------------------------------------

double MaskSpec::keep_fraction() const {
  if (keep.empty()) return 0.0;
  const auto kept = std::count_if(keep.begin(), keep.end(), [](auto v) { return v != 0; });
  return static_cast<double>(kept) / static_cast<double>(keep.size());
}

MaskSpec MaskSpec::random(std::size_t h, std::size_t w, double keep_fraction, Rng& rng) {
  if (keep_fraction < 0.0 || keep_fraction > 1.0) {
    throw std::invalid_argument("keep_fraction must lie in [0, 1]");
  }
  const std::size_t n = h * w;
  const auto kept = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `kept` slots end up a uniform subset.
  for (std::size_t i = 0; i < kept; ++i) {
    std::swap(idx[i], idx[i + rng.index(n - i)]);
  }
  MaskSpec spec{h, w, std::vector<std::uint8_t>(n, 0)};
  for (std::size_t i = 0; i < kept; ++i) spec.keep[idx[i]] = 1;
  return spec;
}

MaskSpec MaskSpec::all(std::size_t h, std::size_t w) {
  return MaskSpec{h, w, std::vector<std::uint8_t>(h * w, 1)};
}

MaskOperator::MaskOperator(Shape shape, MaskSpec spec)
    : LinearOperator(shape, shape), spec_(std::move(spec)) {
  const Grid g = Grid::of(input_shape());
  if (spec_.h != g.h || spec_.w != g.w || spec_.keep.size() != g.pixels()) {
    throw ShapeError("mask grid " + std::to_string(spec_.h) + "x" + std::to_string(spec_.w) +
                     " does not match signal shape " + shape_to_string(input_shape()));
  }
}

Tensor MaskOperator::apply_impl(const Tensor& x) const {
  Tensor out = x;
  const std::size_t per_pixel = Grid::of(x.shape()).c * x.components();
  auto buf = out.buffer();
  for (std::size_t p = 0; p < spec_.keep.size(); ++p) {
    if (spec_.keep[p]) continue;
    std::fill_n(buf.begin() + static_cast<std::ptrdiff_t>(p * per_pixel), per_pixel, 0.0);
  }
  return out;
}

OperatorPtr make_identity(const Shape& shape) {
  const Grid g = Grid::of(shape);
  return std::make_shared<MaskOperator>(shape, MaskSpec::all(g.h, g.w));
}

// --- separable ---------------------------------------------------------------

namespace {

std::size_t reflect_index(long i, long n) {
  // Half-sample symmetric: ... c b a | a b c ... c | c b a ...
  if (n == 1) return 0;
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

std::size_t circular_index(long i, long n) {
  long m = i % n;
  if (m < 0) m += n;
  return static_cast<std::size_t>(m);
}

AxisMap identity_axis(std::size_t n) {
  AxisMap m{n, n, {}};
  m.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.rows[i] = {{i, 1.0}};
  return m;
}

AxisMap block_average_axis(std::size_t n, std::size_t factor) {
  AxisMap m{n, n / factor, {}};
  m.rows.resize(m.out);
  const double wgt = 1.0 / static_cast<double>(factor);
  for (std::size_t o = 0; o < m.out; ++o) {
    for (std::size_t k = 0; k < factor; ++k) m.rows[o].emplace_back(o * factor + k, wgt);
  }
  return m;
}

double keys_cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

// Antialiased bicubic decimation: the cubic kernel stretched by `factor`,
// centered on each output sample, normalized, reflect boundary.
AxisMap bicubic_axis(std::size_t n, std::size_t factor) {
  AxisMap m{n, n / factor, {}};
  m.rows.resize(m.out);
  const double f = static_cast<double>(factor);
  for (std::size_t o = 0; o < m.out; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * f - 0.5;
    const long lo = static_cast<long>(std::floor(center - 2.0 * f)) + 1;
    const long hi = static_cast<long>(std::floor(center + 2.0 * f));
    std::vector<std::pair<std::size_t, double>> taps;
    double total = 0.0;
    for (long j = lo; j <= hi; ++j) {
      const double wgt = keys_cubic((static_cast<double>(j) - center) / f);
      if (wgt == 0.0) continue;
      taps.emplace_back(reflect_index(j, static_cast<long>(n)), wgt);
      total += wgt;
    }
    for (auto& [idx, wgt] : taps) wgt /= total;
    m.rows[o] = std::move(taps);
  }
  return m;
}

// out[o] = sum over taps of wgt * in[i], applied along one axis of an
// (outer x n x inner) block of doubles.
void axis_apply(const AxisMap& m, std::span<const double> in, std::span<double> out,
                std::size_t outer, std::size_t inner) {
  for (std::size_t a = 0; a < outer; ++a) {
    const double* src = in.data() + a * m.in * inner;
    double* dst = out.data() + a * m.out * inner;
    for (std::size_t o = 0; o < m.out; ++o) {
      double* d = dst + o * inner;
      for (const auto& [i, wgt] : m.rows[o]) {
        const double* s = src + i * inner;
        for (std::size_t k = 0; k < inner; ++k) d[k] += wgt * s[k];
      }
    }
  }
}

void axis_adjoint(const AxisMap& m, std::span<const double> in, std::span<double> out,
                  std::size_t outer, std::size_t inner) {
  for (std::size_t a = 0; a < outer; ++a) {
    const double* src = in.data() + a * m.out * inner;
    double* dst = out.data() + a * m.in * inner;
    for (std::size_t o = 0; o < m.out; ++o) {
      const double* s = src + o * inner;
      for (const auto& [i, wgt] : m.rows[o]) {
        double* d = dst + i * inner;
        for (std::size_t k = 0; k < inner; ++k) d[k] += wgt * s[k];
      }
    }
  }
}

Shape resized(const Shape& shape, std::size_t h, std::size_t w) {
  Shape out = shape;
  out[0] = h;
  if (out.size() > 1) out[1] = w;
  return out;
}

}  // namespace

AxisMap convolution_axis(std::size_t n, const std::vector<double>& kernel, Boundary boundary) {
  AxisMap m{n, n, {}};
  m.rows.resize(n);
  const long r = static_cast<long>(kernel.size() / 2);
  for (std::size_t o = 0; o < n; ++o) {
    for (long k = -r; k <= r; ++k) {
      const long src = static_cast<long>(o) - k;
      const std::size_t i = boundary == Boundary::kCircular
                                ? circular_index(src, static_cast<long>(n))
                                : reflect_index(src, static_cast<long>(n));
      const double wgt = kernel[static_cast<std::size_t>(k + r)];
      // Merge taps that wrap onto the same input index.
      auto it = std::find_if(m.rows[o].begin(), m.rows[o].end(),
                             [i](const auto& p) { return p.first == i; });
      if (it != m.rows[o].end()) {
        it->second += wgt;
      } else {
        m.rows[o].emplace_back(i, wgt);
      }
    }
  }
  return m;
}

SeparableOperator::SeparableOperator(Shape input_shape, AxisMap rows, AxisMap cols)
    : LinearOperator(input_shape, resized(input_shape, rows.out, cols.out)),
      rows_(std::move(rows)),
      cols_(std::move(cols)) {
  const Grid g = Grid::of(this->input_shape());
  if (rows_.in != g.h || cols_.in != g.w) {
    throw ShapeError("separable operator axes do not match " +
                     shape_to_string(this->input_shape()));
  }
}

Tensor SeparableOperator::apply_impl(const Tensor& x) const {
  const Grid g = Grid::of(x.shape());
  const std::size_t inner = g.c * x.components();
  std::vector<double> tmp(g.h * cols_.out * inner, 0.0);
  axis_apply(cols_, x.buffer(), tmp, g.h, inner);
  Tensor out(output_shape(), x.dtype());
  axis_apply(rows_, tmp, out.buffer(), 1, cols_.out * inner);
  return out;
}

Tensor SeparableOperator::adjoint_impl(const Tensor& y) const {
  const Grid g = Grid::of(input_shape());
  const std::size_t inner = g.c * y.components();
  std::vector<double> tmp(g.h * cols_.out * inner, 0.0);
  axis_adjoint(rows_, y.buffer(), tmp, 1, cols_.out * inner);
  Tensor out(input_shape(), y.dtype());
  axis_adjoint(cols_, tmp, out.buffer(), g.h, inner);
  return out;
}

BlurSpec BlurSpec::gaussian(std::size_t size, double sigma, Boundary boundary) {
  if (size % 2 == 0) throw std::invalid_argument("blur kernel length must be odd");
  BlurSpec spec;
  spec.boundary = boundary;
  const long r = static_cast<long>(size / 2);
  double total = 0.0;
  for (long i = -r; i <= r; ++i) {
    const double v = sigma > 0.0 ? std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma))
                                 : (i == 0 ? 1.0 : 0.0);
    spec.kernel_1d.push_back(v);
    total += v;
  }
  for (double& v : spec.kernel_1d) v /= total;
  return spec;
}

namespace {

const BlurSpec& validated(const BlurSpec& spec) {
  if (spec.kernel_1d.empty() || spec.kernel_1d.size() % 2 == 0) {
    throw std::invalid_argument("blur kernel length must be odd");
  }
  const double sum = std::accumulate(spec.kernel_1d.begin(), spec.kernel_1d.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("blur kernel taps must sum to 1, got " + std::to_string(sum));
  }
  return spec;
}

}  // namespace

BlurOperator::BlurOperator(Shape shape, BlurSpec spec)
    : SeparableOperator(
          shape,
          convolution_axis(Grid::of(shape).h, validated(spec).kernel_1d, spec.boundary),
          convolution_axis(Grid::of(shape).w, spec.kernel_1d, spec.boundary)),
      spec_(std::move(spec)) {}

std::string BlurOperator::describe() const {
  return "blur(" + std::to_string(spec_.kernel_1d.size()) + " taps, " +
         to_string(spec_.boundary) + ")";
}

namespace {

AxisMap downsample_axis(std::size_t n, const DownsampleSpec& spec) {
  if (spec.factor == 0) throw std::invalid_argument("downsample factor must be positive");
  if (n % spec.factor != 0) {
    throw ShapeError("dimension " + std::to_string(n) + " not divisible by factor " +
                     std::to_string(spec.factor));
  }
  if (spec.factor == 1) return identity_axis(n);
  return spec.method == DownsampleMethod::kBlockAverage ? block_average_axis(n, spec.factor)
                                                        : bicubic_axis(n, spec.factor);
}

}  // namespace

DownsampleOperator::DownsampleOperator(Shape input_shape, DownsampleSpec spec)
    : SeparableOperator(input_shape, downsample_axis(Grid::of(input_shape).h, spec),
                        downsample_axis(Grid::of(input_shape).w, spec)),
      spec_(spec) {}

std::string DownsampleOperator::describe() const {
  return "downsample(x" + std::to_string(spec_.factor) + ", " +
         (spec_.method == DownsampleMethod::kBlockAverage ? "block_average" : "bicubic") + ")";
}

// --- fourier ---------------------------------------------------------------

std::size_t acs_first_line(std::size_t h, std::size_t acs_lines) {
  return h / 2 - acs_lines / 2;
}

std::size_t FourierSubsampleSpec::sampled_lines() const {
  return static_cast<std::size_t>(
      std::count_if(sample_mask.begin(), sample_mask.end(), [](auto v) { return v != 0; }));
}

FourierSubsampleSpec FourierSubsampleSpec::random_lines(std::size_t h, std::size_t acceleration,
                                                        std::size_t acs_lines, Rng& rng) {
  if (acceleration == 0) throw std::invalid_argument("acceleration must be positive");
  if (acs_lines > h) throw std::invalid_argument("more ACS lines than k-space rows");
  FourierSubsampleSpec spec;
  spec.acceleration = acceleration;
  spec.acs_lines = acs_lines;
  spec.sample_mask.assign(h, 0);
  const std::size_t first = acs_first_line(h, acs_lines);
  for (std::size_t r = first; r < first + acs_lines; ++r) spec.sample_mask[r] = 1;

  const auto target = static_cast<std::size_t>(
      std::llround(static_cast<double>(h) / static_cast<double>(acceleration)));
  std::vector<std::size_t> pool;
  for (std::size_t r = 0; r < h; ++r) {
    if (!spec.sample_mask[r]) pool.push_back(r);
  }
  const std::size_t extra = target > acs_lines ? std::min(target - acs_lines, pool.size()) : 0;
  for (std::size_t i = 0; i < extra; ++i) {
    std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    spec.sample_mask[pool[i]] = 1;
  }
  return spec;
}

FourierSubsampleSpec FourierSubsampleSpec::full(std::size_t h) {
  FourierSubsampleSpec spec;
  spec.sample_mask.assign(h, 1);
  spec.acs_lines = h;
  spec.acceleration = 1;
  return spec;
}

Tensor make_coil_maps(std::size_t coils, std::size_t h, std::size_t w) {
  Tensor maps({coils, h, w}, DType::kComplex128);
  constexpr double kPi = 3.14159265358979323846;
  const double cy = 0.5 * static_cast<double>(h);
  const double cx = 0.5 * static_cast<double>(w);
  const double radius = 0.5 * static_cast<double>(std::max(h, w));
  const double width = 0.6 * static_cast<double>(std::max(h, w));
  for (std::size_t c = 0; c < coils; ++c) {
    const double angle = 2.0 * kPi * static_cast<double>(c) / static_cast<double>(coils);
    const double py = cy + radius * std::sin(angle);
    const double px = cx + radius * std::cos(angle);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) {
        const double dy = static_cast<double>(r) - py;
        const double dx = static_cast<double>(q) - px;
        const double mag = std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
        const double phase = angle + 0.5 * kPi * (dx / static_cast<double>(w));
        maps.set((c * h + r) * w + q, std::polar(mag, phase));
      }
    }
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    double total = 0.0;
    for (std::size_t c = 0; c < coils; ++c) total += std::norm(maps.at(c * h * w + p));
    const double s = 1.0 / std::sqrt(total);
    for (std::size_t c = 0; c < coils; ++c) maps.set(c * h * w + p, maps.at(c * h * w + p) * s);
  }
  return maps;
}

namespace {

// Validates the spec against the image shape and returns [coils, h, w].
Shape fourier_output_shape(const Shape& input_shape, const FourierSubsampleSpec& spec) {
  const Grid g = Grid::of(input_shape);
  if (g.c != 1 || input_shape.size() < 2) {
    throw ShapeError("fourier_subsample expects a single-channel [h, w] image, got " +
                     shape_to_string(input_shape));
  }
  if (spec.sample_mask.size() != g.h) {
    throw ShapeError("k-space line mask has " + std::to_string(spec.sample_mask.size()) +
                     " entries for " + std::to_string(g.h) + " rows");
  }
  const std::size_t first = acs_first_line(g.h, spec.acs_lines);
  for (std::size_t r = first; r < first + spec.acs_lines && r < g.h; ++r) {
    if (!spec.sample_mask[r]) {
      throw std::invalid_argument("ACS line " + std::to_string(r) + " not sampled");
    }
  }
  std::size_t coils = 1;
  if (spec.coil_sensitivities) {
    const Tensor& s = *spec.coil_sensitivities;
    if (!s.is_complex() || s.rank() != 3 || s.shape()[1] != g.h || s.shape()[2] != g.w) {
      throw ShapeError("coil sensitivities must be complex [coils, h, w]");
    }
    coils = s.shape()[0];
    const std::size_t plane = g.pixels();
    for (std::size_t p = 0; p < plane; ++p) {
      double total = 0.0;
      for (std::size_t c = 0; c < coils; ++c) total += std::norm(s.at(c * plane + p));
      if (std::abs(total - 1.0) > 1e-6) {
        throw std::invalid_argument("coil sensitivities not normalized at pixel " +
                                    std::to_string(p));
      }
    }
  }
  return {coils, g.h, g.w};
}

}  // namespace

FourierSubsampleOperator::FourierSubsampleOperator(Shape input_shape, FourierSubsampleSpec spec)
    : LinearOperator(input_shape, fourier_output_shape(input_shape, spec)),
      spec_(std::move(spec)),
      h_(output_shape()[1]),
      w_(output_shape()[2]),
      coils_(output_shape()[0]) {}

std::string FourierSubsampleOperator::describe() const {
  std::ostringstream os;
  os << "fourier_subsample(R=" << spec_.acceleration << ", acs=" << spec_.acs_lines
     << ", coils=" << coils_ << ")";
  return os.str();
}

namespace {

void zero_unsampled(std::span<double> plane, const std::vector<std::uint8_t>& mask,
                    std::size_t w) {
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) continue;
    std::fill_n(plane.begin() + static_cast<std::ptrdiff_t>(2 * r * w), 2 * w, 0.0);
  }
}

void require_complex(const Tensor& t, const char* what) {
  if (!t.is_complex()) {
    throw ShapeError(std::string("fourier_subsample ") + what + " requires complex128 input");
  }
}

}  // namespace

Tensor FourierSubsampleOperator::apply_impl(const Tensor& x) const {
  require_complex(x, "apply");
  const std::size_t plane = h_ * w_;
  Tensor out(output_shape(), DType::kComplex128);
  auto dst = out.buffer();
  for (std::size_t c = 0; c < coils_; ++c) {
    auto slice = dst.subspan(2 * c * plane, 2 * plane);
    if (spec_.coil_sensitivities) {
      const Tensor& s = *spec_.coil_sensitivities;
      for (std::size_t p = 0; p < plane; ++p) {
        const cdouble v = s.at(c * plane + p) * x.at(p);
        slice[2 * p] = v.real();
        slice[2 * p + 1] = v.imag();
      }
    } else {
      std::copy(x.buffer().begin(), x.buffer().end(), slice.begin());
    }
    fft::fft2c(slice, h_, w_, false);
    zero_unsampled(slice, spec_.sample_mask, w_);
  }
  return out;
}

Tensor FourierSubsampleOperator::adjoint_impl(const Tensor& y) const {
  require_complex(y, "adjoint");
  const std::size_t plane = h_ * w_;
  Tensor out(input_shape(), DType::kComplex128);
  auto dst = out.buffer();
  std::vector<double> tmp(2 * plane);
  for (std::size_t c = 0; c < coils_; ++c) {
    auto src = y.buffer().subspan(2 * c * plane, 2 * plane);
    std::copy(src.begin(), src.end(), tmp.begin());
    zero_unsampled(tmp, spec_.sample_mask, w_);
    fft::fft2c(tmp, h_, w_, true);
    if (spec_.coil_sensitivities) {
      const Tensor& s = *spec_.coil_sensitivities;
      for (std::size_t p = 0; p < plane; ++p) {
        const cdouble v = std::conj(s.at(c * plane + p)) * cdouble(tmp[2 * p], tmp[2 * p + 1]);
        dst[2 * p] += v.real();
        dst[2 * p + 1] += v.imag();
      }
    } else {
      for (std::size_t i = 0; i < 2 * plane; ++i) dst[i] += tmp[i];
    }
  }
  return out;
}

Tensor FourierSubsampleOperator::gram_impl(const Tensor& x) const {
  if (!single_uniform_coil()) return adjoint_impl(apply_impl(x));
  require_complex(x, "gram");
  Tensor out = x;
  fft::fft2c(out.buffer(), h_, w_, false);
  zero_unsampled(out.buffer(), spec_.sample_mask, w_);
  fft::fft2c(out.buffer(), h_, w_, true);
  return out;
}

// --- composite / dense -------------------------------------------------------

namespace {

const std::vector<OperatorPtr>& checked_chain(const std::vector<OperatorPtr>& ops) {
  if (ops.empty()) throw std::invalid_argument("composite operator needs at least one part");
  for (std::size_t i = 1; i < ops.size(); ++i) {
    if (ops[i]->input_shape() != ops[i - 1]->output_shape()) {
      throw ShapeError("composite parts do not chain: " + ops[i - 1]->describe() + " -> " +
                       ops[i]->describe());
    }
  }
  return ops;
}

}  // namespace

CompositeOperator::CompositeOperator(std::vector<OperatorPtr> ops)
    : LinearOperator(checked_chain(ops).front()->input_shape(), ops.back()->output_shape()),
      ops_(std::move(ops)) {}

std::string CompositeOperator::describe() const {
  std::string s = "composite(";
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    if (i) s += " -> ";
    s += ops_[i]->describe();
  }
  return s + ")";
}

Tensor CompositeOperator::apply_impl(const Tensor& x) const {
  Tensor v = x;
  for (const auto& op : ops_) v = op->apply(v);
  return v;
}

Tensor CompositeOperator::adjoint_impl(const Tensor& y) const {
  Tensor v = y;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) v = (*it)->adjoint(v);
  return v;
}

DenseMatrix DenseMatrix::conjugate_transpose() const {
  DenseMatrix t{cols, rows, std::vector<cdouble>(data.size())};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t(c, r) = std::conj((*this)(r, c));
  }
  return t;
}

DenseOperator::DenseOperator(Shape input_shape, Shape output_shape, DenseMatrix matrix)
    : LinearOperator(std::move(input_shape), std::move(output_shape)),
      matrix_(std::move(matrix)),
      adjoint_(matrix_.conjugate_transpose()),
      real_valued_(std::all_of(matrix_.data.begin(), matrix_.data.end(),
                               [](cdouble v) { return v.imag() == 0.0; })) {
  if (matrix_.rows != element_count(this->output_shape()) ||
      matrix_.cols != element_count(this->input_shape()) ||
      matrix_.data.size() != matrix_.rows * matrix_.cols) {
    throw ShapeError("dense matrix dimensions do not match operator shapes");
  }
}

Tensor DenseOperator::multiply(const DenseMatrix& m, const Tensor& x, const Shape& out_shape) const {
  if (!x.is_complex() && !real_valued_) {
    throw ShapeError("complex-valued dense operator applied to a real tensor");
  }
  Tensor out(out_shape, x.dtype());
  for (std::size_t r = 0; r < m.rows; ++r) {
    cdouble acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += m(r, c) * x.at(c);
    out.set(r, acc);
  }
  return out;
}

Tensor DenseOperator::apply_impl(const Tensor& x) const {
  return multiply(matrix_, x, output_shape());
}

Tensor DenseOperator::adjoint_impl(const Tensor& y) const {
  return multiply(adjoint_, y, input_shape());
}

namespace {

DenseMatrix columns_of(const Shape& domain, const Shape& codomain, DType dtype,
                       const std::function<Tensor(const Tensor&)>& f) {
  const std::size_t n = element_count(domain);
  if (n > kDenseSizeLimit) {
    throw std::length_error("to_dense: input size " + std::to_string(n) + " exceeds " +
                            std::to_string(kDenseSizeLimit));
  }
  const std::size_t m = element_count(codomain);
  DenseMatrix out{m, n, std::vector<cdouble>(m * n)};
  Tensor e(domain, dtype);
  for (std::size_t j = 0; j < n; ++j) {
    e.set(j, 1.0);
    const Tensor col = f(e);
    for (std::size_t i = 0; i < m; ++i) out(i, j) = col.at(i);
    e.set(j, 0.0);
  }
  return out;
}

}  // namespace

DenseMatrix to_dense(const LinearOperator& op, DType dtype) {
  return columns_of(op.input_shape(), op.output_shape(), dtype,
                    [&](const Tensor& e) { return op.apply(e); });
}

DenseMatrix to_dense_adjoint(const LinearOperator& op, DType dtype) {
  return columns_of(op.output_shape(), op.input_shape(), dtype,
                    [&](const Tensor& e) { return op.adjoint(e); });
}

Tensor synthesize_measurement(const LinearOperator& op, const Tensor& x_true, double sigma_y,
                              Rng& rng) {
  if (!(sigma_y >= 0.0)) throw std::invalid_argument("sigma_y must be >= 0");
  return gaussian_sample(op.apply(x_true), sigma_y, rng);
}

}  // namespace pnpcm
