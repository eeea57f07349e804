#include "pnpcm/linsolve.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fft.hpp"
#include "pnpcm/error.hpp"

namespace pnpcm {

void CgConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("cg max_iters must be >= 1");
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
    throw std::invalid_argument("cg tolerances must be positive");
  }
}

namespace {

void require_positive_rho(double rho) {
  if (!(rho > 0.0)) {
    throw std::invalid_argument("penalty rho must be > 0, got " + std::to_string(rho));
  }
}

Tensor normal_apply(const LinearOperator& op, double rho, const Tensor& x) {
  Tensor out = op.gram(x);
  axpy_inplace(rho, x, out);
  return out;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string("cg_solve: non-finite ") + what +
                          " (operator or right-hand side is broken)");
  }
}

}  // namespace

std::pair<Tensor, CgReport> cg_solve(const LinearOperator& op, double rho, const Tensor& rhs,
                                     const Tensor& x0, const CgConfig& cfg) {
  require_positive_rho(rho);
  cfg.validate();
  require_same_layout(rhs, x0, "cg_solve");
  if (rhs.shape() != op.input_shape()) {
    throw ShapeError("cg_solve: rhs shape " + shape_to_string(rhs.shape()) +
                     " does not match operator input " + shape_to_string(op.input_shape()));
  }

  CgReport report;
  Tensor z = x0;
  Tensor r = sub(rhs, normal_apply(op, rho, z));
  double rr = squared_norm(r);
  require_finite(rr, "initial residual");
  report.initial_residual_norm = std::sqrt(rr);
  report.residual_history.push_back(report.initial_residual_norm);
  const double threshold =
      std::max(cfg.rel_tol * std::min(report.initial_residual_norm, norm2(rhs)), cfg.abs_tol);

  // Conjugate-residual recurrences: same Krylov space as CG but each iterate
  // minimises ||r||, so the residual history never increases.
  Tensor p = r;
  Tensor mr = normal_apply(op, rho, r);
  Tensor mp = mr;
  // r^H M r is real for Hermitian M.
  double rmr = inner(r, mr).real();
  int it = 0;
  while (std::sqrt(rr) > threshold && it < cfg.max_iters) {
    const double mpmp = squared_norm(mp);
    require_finite(mpmp, "curvature");
    if (!(rmr > 0.0) || !(mpmp > 0.0)) break;
    const double alpha = rmr / mpmp;
    axpy_inplace(alpha, p, z);
    axpy_inplace(-alpha, mp, r);
    const double rr_next = squared_norm(r);
    require_finite(rr_next, "residual");
    ++it;
    report.residual_history.push_back(std::sqrt(rr_next));
    rr = rr_next;
    mr = normal_apply(op, rho, r);
    const double rmr_next = inner(r, mr).real();
    const double beta = rmr_next / rmr;
    rmr = rmr_next;
    scale_inplace(beta, p);
    axpy_inplace(1.0, r, p);
    scale_inplace(beta, mp);
    axpy_inplace(1.0, mr, mp);
  }

  report.iterations_used = it;
  report.final_residual_norm = norm2(sub(rhs, normal_apply(op, rho, z)));
  require_finite(report.final_residual_norm, "final residual");
  report.converged = report.final_residual_norm <= threshold;
  return {std::move(z), std::move(report)};
}

bool is_diagonalizable(const LinearOperator& op) {
  if (dynamic_cast<const MaskOperator*>(&op)) return true;
  if (const auto* blur = dynamic_cast<const BlurOperator*>(&op)) {
    return blur->spec().boundary == Boundary::kCircular;
  }
  if (const auto* f = dynamic_cast<const FourierSubsampleOperator*>(&op)) {
    return f->single_uniform_coil();
  }
  return false;
}

namespace {

// Eigenvalues of the n x n circulant matrix implementing circular convolution
// with the centered odd-length kernel.
std::vector<cdouble> circulant_spectrum(std::size_t n, const std::vector<double>& kernel) {
  std::vector<double> column(n, 0.0);
  const long r = static_cast<long>(kernel.size() / 2);
  for (long k = -r; k <= r; ++k) {
    long m = k % static_cast<long>(n);
    if (m < 0) m += static_cast<long>(n);
    column[static_cast<std::size_t>(m)] += kernel[static_cast<std::size_t>(k + r)];
  }
  constexpr double kTwoPi = 6.28318530717958647692;
  std::vector<cdouble> spectrum(n);
  for (std::size_t j = 0; j < n; ++j) {
    cdouble acc = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const double phase = -kTwoPi * static_cast<double>((j * m) % n) / static_cast<double>(n);
      acc += column[m] * std::polar(1.0, phase);
    }
    spectrum[j] = acc;
  }
  return spectrum;
}

Tensor solve_mask(const MaskOperator& op, double rho, const Tensor& rhs) {
  Tensor z = rhs;
  const Grid g = Grid::of(rhs.shape());
  const std::size_t per_pixel = g.c * rhs.components();
  auto buf = z.buffer();
  const auto& keep = op.spec().keep;
  for (std::size_t p = 0; p < keep.size(); ++p) {
    const double d = (keep[p] ? 1.0 : 0.0) + rho;
    for (std::size_t k = 0; k < per_pixel; ++k) buf[p * per_pixel + k] /= d;
  }
  return z;
}

Tensor solve_circular_blur(const BlurOperator& op, double rho, const Tensor& rhs) {
  const Grid g = Grid::of(rhs.shape());
  const auto row_spec = circulant_spectrum(g.h, op.spec().kernel_1d);
  const auto col_spec = circulant_spectrum(g.w, op.spec().kernel_1d);
  const Tensor crhs = to_complex(rhs);
  Tensor out(rhs.shape(), DType::kComplex128);
  std::vector<double> plane(2 * g.pixels());
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      const cdouble v = crhs.at(p * g.c + ch);
      plane[2 * p] = v.real();
      plane[2 * p + 1] = v.imag();
    }
    fft::fft2(plane, g.h, g.w, false);
    for (std::size_t a = 0; a < g.h; ++a) {
      for (std::size_t b = 0; b < g.w; ++b) {
        const double denom = std::norm(row_spec[a] * col_spec[b]) + rho;
        const std::size_t p = a * g.w + b;
        plane[2 * p] /= denom;
        plane[2 * p + 1] /= denom;
      }
    }
    fft::fft2(plane, g.h, g.w, true);
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      out.set(p * g.c + ch, cdouble(plane[2 * p], plane[2 * p + 1]));
    }
  }
  return rhs.is_complex() ? out : real_part(out);
}

Tensor solve_fourier(const FourierSubsampleOperator& op, double rho, const Tensor& rhs) {
  if (!rhs.is_complex()) throw ShapeError("fourier_subsample solve requires complex128 input");
  const Grid g = Grid::of(rhs.shape());
  Tensor z = rhs;
  auto buf = z.buffer();
  fft::fft2c(buf, g.h, g.w, false);
  const auto& mask = op.spec().sample_mask;
  for (std::size_t r = 0; r < g.h; ++r) {
    const double d = (mask[r] ? 1.0 : 0.0) + rho;
    for (std::size_t k = 0; k < 2 * g.w; ++k) buf[2 * r * g.w + k] /= d;
  }
  fft::fft2c(buf, g.h, g.w, true);
  return z;
}

}  // namespace

Tensor direct_solve_diagonalizable(const LinearOperator& op, double rho, const Tensor& rhs) {
  require_positive_rho(rho);
  if (rhs.shape() != op.input_shape()) {
    throw ShapeError("direct solve: rhs shape does not match operator input");
  }
  if (const auto* mask = dynamic_cast<const MaskOperator*>(&op)) {
    return solve_mask(*mask, rho, rhs);
  }
  if (const auto* blur = dynamic_cast<const BlurOperator*>(&op);
      blur && blur->spec().boundary == Boundary::kCircular) {
    return solve_circular_blur(*blur, rho, rhs);
  }
  if (const auto* f = dynamic_cast<const FourierSubsampleOperator*>(&op);
      f && f->single_uniform_coil()) {
    return solve_fourier(*f, rho, rhs);
  }
  throw std::invalid_argument("direct solve unsupported for operator " + op.describe());
}

Tensor build_zupdate_rhs(const LinearOperator& op, const Tensor& y, double rho,
                         const Tensor& xhat, const Tensor& uhat) {
  require_positive_rho(rho);
  return build_zupdate_rhs_from_backprojection(op.adjoint(y), rho, xhat, uhat);
}

Tensor build_zupdate_rhs_from_backprojection(const Tensor& aty, double rho, const Tensor& xhat,
                                             const Tensor& uhat) {
  require_positive_rho(rho);
  require_same_layout(xhat, uhat, "build_zupdate_rhs");
  require_same_layout(aty, xhat, "build_zupdate_rhs");
  Tensor out = aty;
  auto dst = out.buffer();
  auto xs = xhat.buffer();
  auto us = uhat.buffer();
  // Difference first so that xhat == uhat leaves A^H y untouched bit for bit.
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += rho * (xs[i] - us[i]);
  return out;
}

}  // namespace pnpcm
