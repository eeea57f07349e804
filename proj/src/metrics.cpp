#include "pnpcm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pnpcm/error.hpp"
#include "pnpcm/operators.hpp"

namespace pnpcm {

Tensor magnitude(const Tensor& x) {
  if (!x.is_complex()) {
    throw std::invalid_argument("magnitude expects a complex tensor; got real input");
  }
  Tensor out(x.shape(), DType::kReal64);
  auto dst = out.buffer();
  auto src = x.buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::hypot(src[2 * i], src[2 * i + 1]);
  return out;
}

namespace {

std::pair<Tensor, Tensor> real_pair(const Tensor& x, const Tensor& ref, const char* what) {
  require_same_layout(x, ref, what);
  if (x.is_complex()) return {magnitude(x), magnitude(ref)};
  return {x, ref};
}

}  // namespace

double mse(const Tensor& x, const Tensor& ref) {
  const auto [a, b] = real_pair(x, ref, "mse");
  if (a.numel() == 0) return 0.0;
  const double d = distance(a, b);
  return d * d / static_cast<double>(a.numel());
}

double psnr(const Tensor& x, const Tensor& ref, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("psnr peak must be > 0");
  const double e = mse(x, ref);
  if (e == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / e));
}

double ssim(const Tensor& x, const Tensor& ref, const SsimParams& params) {
  const auto [a, b] = real_pair(x, ref, "ssim");
  const Grid g = Grid::of(a.shape());
  const auto win = static_cast<std::size_t>(params.window);
  if (g.h < win || g.w < win) {
    throw ShapeError("ssim: image " + shape_to_string(a.shape()) + " smaller than " +
                     std::to_string(win) + "x" + std::to_string(win) + " window");
  }
  // Separable normalized Gaussian window.
  std::vector<double> w1(win);
  const double half = 0.5 * static_cast<double>(win - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - half;
    w1[i] = std::exp(-d * d / (2.0 * params.sigma * params.sigma));
    total += w1[i];
  }
  for (double& v : w1) v /= total;

  const double c1 = std::pow(params.k1 * params.peak, 2);
  const double c2 = std::pow(params.k2 * params.peak, 2);
  const std::size_t oh = g.h - win + 1;
  const std::size_t ow = g.w - win + 1;

  // Valid-mode separable filtering of a plane.
  auto filter = [&](const std::vector<double>& p) {
    std::vector<double> rows(g.h * ow, 0.0);
    for (std::size_t r = 0; r < g.h; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < win; ++k) s += w1[k] * p[r * g.w + c + k];
        rows[r * ow + c] = s;
      }
    }
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < win; ++k) s += w1[k] * rows[(r + k) * ow + c];
        out[r * ow + c] = s;
      }
    }
    return out;
  };

  double acc = 0.0;
  const std::size_t n = g.pixels();
  std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t p = 0; p < n; ++p) {
      pa[p] = a.re(p * g.c + ch);
      pb[p] = b.re(p * g.c + ch);
      paa[p] = pa[p] * pa[p];
      pbb[p] = pb[p] * pb[p];
      pab[p] = pa[p] * pb[p];
    }
    const auto mu_a = filter(pa), mu_b = filter(pb);
    const auto e_aa = filter(paa), e_bb = filter(pbb), e_ab = filter(pab);
    double sum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    acc += sum / static_cast<double>(oh * ow);
  }
  return acc / static_cast<double>(g.c);
}

double default_peak(const Tensor& ref) {
  if (!ref.is_complex()) return 1.0;
  const Tensor m = magnitude(ref);
  const auto buf = m.buffer();
  const double mx = buf.empty() ? 0.0 : *std::max_element(buf.begin(), buf.end());
  return mx > 0.0 ? mx : 1.0;
}

MetricReport evaluate(const Tensor& x, const Tensor& ref, double peak) {
  MetricReport r;
  r.mse = mse(x, ref);
  r.psnr_db = psnr(x, ref, peak);
  SsimParams params;
  params.peak = peak;
  const Grid g = Grid::of(ref.shape());
  if (g.h >= static_cast<std::size_t>(params.window) &&
      g.w >= static_cast<std::size_t>(params.window)) {
    r.ssim = ssim(x, ref, params);
  } else {
    r.ssim = std::nan("");
  }
  return r;
}

}  // namespace pnpcm
