#include "fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace pnpcm::fft {
namespace {

// Planning is not thread-safe in FFTW; execution with new-array calls is.
std::mutex plan_mutex;

fftw_plan plan_for(std::size_t h, std::size_t w, int sign) {
  static std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> cache;
  std::lock_guard lock(plan_mutex);
  auto key = std::make_tuple(h, w, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto* tmp = fftw_alloc_complex(h * w);
  fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), tmp,
                                 tmp, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(tmp);
  cache.emplace(key, p);
  return p;
}

}  // namespace

void fft2(std::span<double> plane, std::size_t h, std::size_t w, bool inverse) {
  const int sign = inverse ? FFTW_BACKWARD : FFTW_FORWARD;
  auto* data = reinterpret_cast<fftw_complex*>(plane.data());
  fftw_execute_dft(plan_for(h, w, sign), data, data);
  const double s = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (double& v : plane.subspan(0, 2 * h * w)) v *= s;
}

void roll2(std::span<double> plane, std::size_t h, std::size_t w,
           std::size_t dy, std::size_t dx) {
  if ((dy % h) == 0 && (dx % w) == 0) return;
  std::vector<double> tmp(plane.begin(), plane.begin() + 2 * h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t rr = (r + dy) % h;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t cc = (c + dx) % w;
      plane[2 * (rr * w + cc)] = tmp[2 * (r * w + c)];
      plane[2 * (rr * w + cc) + 1] = tmp[2 * (r * w + c) + 1];
    }
  }
}

void fft2c(std::span<double> plane, std::size_t h, std::size_t w, bool inverse) {
  // ifftshift rolls by -(n/2), fftshift by +(n/2).
  roll2(plane, h, w, h - h / 2, w - w / 2);
  fft2(plane, h, w, inverse);
  roll2(plane, h, w, h / 2, w / 2);
}

}  // namespace pnpcm::fft
