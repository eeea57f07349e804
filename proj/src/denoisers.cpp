#include "pnpcm/denoisers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pnpcm/error.hpp"

namespace pnpcm {

Tensor Denoiser::denoise(const Tensor& v, double t) const {
  if (!(t >= 0.0)) {
    throw std::invalid_argument(kind() + " denoiser: t must be >= 0, got " + std::to_string(t));
  }
  Tensor out = denoise_impl(v, t);
  if (!out.same_layout(v)) {
    throw ShapeError(kind() + " denoiser changed the tensor layout");
  }
  return out;
}

namespace {

// Applies `fn(plane, h, w)` to every (channel, component) plane of v.
template <typename Fn>
Tensor map_planes(const Tensor& v, Fn&& fn) {
  const Grid g = Grid::of(v.shape());
  const std::size_t stride = g.c * v.components();
  Tensor out(v.shape(), v.dtype());
  std::vector<double> plane(g.pixels());
  auto src = v.buffer();
  auto dst = out.buffer();
  for (std::size_t k = 0; k < stride; ++k) {
    for (std::size_t p = 0; p < g.pixels(); ++p) plane[p] = src[p * stride + k];
    fn(plane, g.h, g.w);
    for (std::size_t p = 0; p < g.pixels(); ++p) dst[p * stride + k] = plane[p];
  }
  return out;
}

std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

OperatorPtr IdentityDenoiser::as_linear(const Shape& shape, double) const {
  return make_identity(shape);
}

// --- gaussian ------------------------------------------------------------------

OperatorPtr GaussianSmoothDenoiser::as_linear(const Shape& shape, double t) const {
  const double sigma = sigma_.strength(t);
  if (sigma <= 0.0) return make_identity(shape);
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  return std::make_shared<BlurOperator>(shape, BlurSpec::gaussian(2 * radius + 1, sigma, boundary_));
}

Tensor GaussianSmoothDenoiser::denoise_impl(const Tensor& v, double t) const {
  if (sigma_.strength(t) <= 0.0) return v;
  return as_linear(v.shape(), t)->apply(v);
}

// --- median --------------------------------------------------------------------

Tensor MedianDenoiser::denoise_impl(const Tensor& v, double t) const {
  if (sigma_.strength(t) <= 0.0) return v;
  return map_planes(v, [](std::vector<double>& plane, std::size_t h, std::size_t w) {
    const std::vector<double> src = plane;
    std::array<double, 9> window;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        std::size_t k = 0;
        for (long dr = -1; dr <= 1; ++dr) {
          for (long dc = -1; dc <= 1; ++dc) {
            const std::size_t rr = reflect(static_cast<long>(r) + dr, static_cast<long>(h));
            const std::size_t cc = reflect(static_cast<long>(c) + dc, static_cast<long>(w));
            window[k++] = src[rr * w + cc];
          }
        }
        std::nth_element(window.begin(), window.begin() + 4, window.end());
        plane[r * w + c] = window[4];
      }
    }
  });
}

// --- tv prox -------------------------------------------------------------------

namespace {

// Forward differences, zero on the last row/column.
void gradient(const std::vector<double>& x, std::size_t h, std::size_t w, std::vector<double>& gx,
              std::vector<double>& gy) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      gx[i] = c + 1 < w ? x[i + 1] - x[i] : 0.0;
      gy[i] = r + 1 < h ? x[i + w] - x[i] : 0.0;
    }
  }
}

// div = -gradient^T
void divergence(const std::vector<double>& px, const std::vector<double>& py, std::size_t h,
                std::size_t w, std::vector<double>& out) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      double d = 0.0;
      if (c + 1 < w) d += px[i];
      if (c > 0) d -= px[i - 1];
      if (r + 1 < h) d += py[i];
      if (r > 0) d -= py[i - w];
      out[i] = d;
    }
  }
}

void tv_prox_plane(std::vector<double>& f, std::size_t h, std::size_t w, double lambda,
                   const TvProxOptions& opt) {
  const std::size_t n = h * w;
  std::vector<double> px(n, 0.0), py(n, 0.0);      // dual iterate
  std::vector<double> qx(n, 0.0), qy(n, 0.0);      // extrapolated point
  std::vector<double> gx(n), gy(n), div(n), x(n), x_prev = f;
  double tk = 1.0;
  const double step = 1.0 / (8.0 * lambda);

  for (int it = 0; it < opt.max_iters; ++it) {
    // Primal point at the extrapolated dual: x = f - lambda grad^T q = f + lambda div q.
    divergence(qx, qy, h, w, div);
    for (std::size_t i = 0; i < n; ++i) x[i] = f[i] + lambda * div[i];
    gradient(x, h, w, gx, gy);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    const double momentum = (tk - 1.0) / t_next;
    for (std::size_t i = 0; i < n; ++i) {
      double ax = qx[i] + step * gx[i];
      double ay = qy[i] + step * gy[i];
      const double mag = std::max(1.0, std::hypot(ax, ay));
      ax /= mag;
      ay /= mag;
      qx[i] = ax + momentum * (ax - px[i]);
      qy[i] = ay + momentum * (ay - py[i]);
      px[i] = ax;
      py[i] = ay;
    }
    tk = t_next;

    divergence(px, py, h, w, div);
    double change = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = f[i] + lambda * div[i];
      change += (x[i] - x_prev[i]) * (x[i] - x_prev[i]);
      norm += x[i] * x[i];
    }
    x_prev = x;
    if (std::sqrt(change) <= opt.rel_tol * std::sqrt(norm)) break;
  }
  f = x_prev;
}

}  // namespace

Tensor TvProxDenoiser::denoise_impl(const Tensor& v, double t) const {
  const double lambda = sigma_.strength(t);
  if (lambda <= 0.0) return v;
  return map_planes(v, [&](std::vector<double>& plane, std::size_t h, std::size_t w) {
    tv_prox_plane(plane, h, w, lambda, options_);
  });
}

double total_variation(const Tensor& x) {
  double tv = 0.0;
  map_planes(x, [&](std::vector<double>& plane, std::size_t h, std::size_t w) {
    std::vector<double> gx(plane.size()), gy(plane.size());
    gradient(plane, h, w, gx, gy);
    for (std::size_t i = 0; i < plane.size(); ++i) tv += std::hypot(gx[i], gy[i]);
  });
  return tv;
}

// --- dct -----------------------------------------------------------------------

namespace {

std::vector<double> dct_matrix(std::size_t n) {
  constexpr double kPi = 3.14159265358979323846;
  std::vector<double> m(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    const double alpha = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
      m[k * n + j] = alpha * std::cos(kPi * (2.0 * static_cast<double>(j) + 1.0) *
                                      static_cast<double>(k) / (2.0 * static_cast<double>(n)));
    }
  }
  return m;
}

// Forward: x <- Ch x Cw^T. Inverse: x <- Ch^T x Cw.
void separable_transform(const std::vector<double>& ch, const std::vector<double>& cw,
                         std::vector<double>& x, std::size_t h, std::size_t w, bool inverse) {
  std::vector<double> tmp(h * w, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t a = 0; a < w; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < w; ++b) {
        s += x[r * w + b] * (inverse ? cw[b * w + a] : cw[a * w + b]);
      }
      tmp[r * w + a] = s;
    }
  }
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t a = 0; a < h; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < h; ++b) {
        s += tmp[b * w + c] * (inverse ? ch[b * h + a] : ch[a * h + b]);
      }
      x[a * w + c] = s;
    }
  }
}

}  // namespace

Tensor SoftThresholdDctDenoiser::denoise_impl(const Tensor& v, double t) const {
  const double thresh = sigma_.strength(t);
  if (thresh <= 0.0) return v;
  const Grid g = Grid::of(v.shape());
  const auto ch = dct_matrix(g.h);
  const auto cw = dct_matrix(g.w);
  return map_planes(v, [&](std::vector<double>& plane, std::size_t h, std::size_t w) {
    separable_transform(ch, cw, plane, h, w, false);
    for (std::size_t i = 1; i < plane.size(); ++i) {
      const double mag = std::abs(plane[i]) - thresh;
      plane[i] = mag > 0.0 ? std::copysign(mag, plane[i]) : 0.0;
    }
    separable_transform(ch, cw, plane, h, w, true);
  });
}

Tensor external_denoise(const ExternalDenoiserConfig& endpoint, const Tensor& v, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("external denoiser: t must be >= 0");
  ExternalDenoiserClient client(endpoint);
  return client.denoise(v, t);
}

// --- lipschitz -----------------------------------------------------------------

LipschitzEstimate estimate_lipschitz(const Denoiser& d, const Shape& shape, DType dtype, double t,
                                     int num_pairs, double perturbation_scale, Rng& rng,
                                     int steps_per_restart) {
  if (num_pairs < 1) throw std::invalid_argument("num_pairs must be >= 1");
  if (!(perturbation_scale > 0.0)) throw std::invalid_argument("perturbation_scale must be > 0");
  steps_per_restart = std::max(1, steps_per_restart);

  LipschitzEstimate est;
  auto random_direction = [&] {
    Tensor dir = gaussian_noise(shape, dtype, 1.0, rng);
    const double n = norm2(dir);
    scale_inplace(n > 0.0 ? perturbation_scale / n : 0.0, dir);
    return dir;
  };

  int sampled = 0;
  while (sampled < num_pairs) {
    Tensor anchor(shape, dtype);
    for (double& v : anchor.buffer()) v = rng.uniform();
    const Tensor base = d.denoise(anchor, t);
    Tensor delta = random_direction();
    for (int s = 0; s < steps_per_restart && sampled < num_pairs; ++s, ++sampled) {
      const Tensor moved = add(anchor, delta);
      const double realized = distance(moved, anchor);
      if (realized == 0.0) {
        delta = random_direction();
        continue;
      }
      const Tensor response = sub(d.denoise(moved, t), base);
      const double change = norm2(response);
      const double ratio = change / realized;
      if (ratio > est.l_hat || est.anchor.numel() == 0) {
        est.l_hat = ratio;
        est.anchor = anchor;
        est.perturbed = moved;
      }
      if (change > 0.0) {
        delta = scale(perturbation_scale / change, response);
      } else {
        delta = random_direction();
      }
    }
  }
  est.num_pairs_sampled = sampled;
  return est;
}

}  // namespace pnpcm
