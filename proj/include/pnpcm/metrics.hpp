#pragma once

#include "pnpcm/tensor.hpp"

namespace pnpcm {

inline constexpr double kPsnrCapDb = 99.0;

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

// Elementwise modulus of a complex tensor; real input is rejected.
Tensor magnitude(const Tensor& x);

// Mean squared error; complex inputs are reduced to magnitude first.
double mse(const Tensor& x, const Tensor& ref);

// 10 log10(peak^2 / mse), capped at 99 dB (returned for mse == 0).
double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0);

struct SsimParams {
  double peak = 1.0;
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean local SSIM over every full window position ("valid" placement) with a
// normalized Gaussian window, averaged over channels. Complex inputs are
// reduced to magnitude.
double ssim(const Tensor& x, const Tensor& ref, const SsimParams& params = {});

// Peak convention: 1.0 for real images in [0, 1], max |ref| for complex data.
double default_peak(const Tensor& ref);

MetricReport evaluate(const Tensor& x, const Tensor& ref, double peak);

}  // namespace pnpcm
