#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "pnpcm/operators.hpp"
#include "pnpcm/random.hpp"
#include "pnpcm/tensor.hpp"

namespace testing {

struct NamedOperator {
  std::string name;
  pnpcm::OperatorPtr op;
  pnpcm::DType dtype;  // domain dtype the operator is exercised with
};

inline pnpcm::Tensor random_tensor(const pnpcm::Shape& shape, pnpcm::DType dtype,
                                   pnpcm::Rng& rng) {
  return pnpcm::gaussian_noise(shape, dtype, 1.0, rng);
}

// Every operator kind on an h x w grid: mask, blur (circular and reflect),
// block-average and bicubic downsampling, single- and 3-coil Fourier
// subsampling.
inline std::vector<NamedOperator> operator_zoo(std::size_t h, std::size_t w, pnpcm::Rng& rng) {
  using namespace pnpcm;
  std::vector<NamedOperator> out;
  const Shape shape{h, w};
  out.push_back({"mask", std::make_shared<MaskOperator>(shape, MaskSpec::random(h, w, 0.3, rng)),
                 DType::kReal64});
  out.push_back({"blur circular",
                 std::make_shared<BlurOperator>(shape, BlurSpec::gaussian(5, 1.2, Boundary::kCircular)),
                 DType::kReal64});
  out.push_back({"blur reflect",
                 std::make_shared<BlurOperator>(shape, BlurSpec::gaussian(5, 1.2, Boundary::kReflect)),
                 DType::kReal64});
  out.push_back({"downsample block",
                 std::make_shared<DownsampleOperator>(shape,
                                                      DownsampleSpec{4, DownsampleMethod::kBlockAverage}),
                 DType::kReal64});
  out.push_back({"downsample bicubic",
                 std::make_shared<DownsampleOperator>(shape,
                                                      DownsampleSpec{4, DownsampleMethod::kBicubic}),
                 DType::kReal64});
  const std::size_t acs = std::max<std::size_t>(2, h / 8);
  out.push_back({"fourier 1 coil",
                 std::make_shared<FourierSubsampleOperator>(
                     shape, FourierSubsampleSpec::random_lines(h, 4, acs, rng)),
                 DType::kComplex128});
  auto multi = FourierSubsampleSpec::random_lines(h, 4, acs, rng);
  multi.coil_sensitivities = make_coil_maps(3, h, w);
  out.push_back({"fourier 3 coils", std::make_shared<FourierSubsampleOperator>(shape, multi),
                 DType::kComplex128});
  return out;
}

// Smooth piecewise-constant test image in [0, 1]: background ramp, an
// ellipse and a rectangle whose placement depends on `variant`.
inline pnpcm::Tensor phantom(std::size_t h, std::size_t w, int variant) {
  pnpcm::Tensor img({h, w}, pnpcm::DType::kReal64);
  auto buf = img.buffer();
  const double cx = 0.35 + 0.07 * (variant % 4), cy = 0.4 + 0.05 * (variant % 3);
  const double rx = 0.22 + 0.03 * (variant % 2), ry = 0.18 + 0.02 * (variant % 5);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double u = (c + 0.5) / w, v = (r + 0.5) / h;
      double val = 0.1 + 0.15 * u;
      const double ex = (u - cx) / rx, ey = (v - cy) / ry;
      if (ex * ex + ey * ey <= 1.0) val = 0.75 - 0.05 * (variant % 3);
      if (u > 0.62 && u < 0.9 && v > 0.15 + 0.04 * variant && v < 0.5 + 0.05 * variant) val = 0.45;
      if (u > 0.2 && u < 0.5 && v > 0.72 && v < 0.85) val = 0.95;
      buf[r * w + c] = val;
    }
  }
  return img;
}

inline double max_abs_diff(const pnpcm::Tensor& a, const pnpcm::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.buffer_size(); ++i) {
    m = std::max(m, std::abs(a.buffer()[i] - b.buffer()[i]));
  }
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pnpcm-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
