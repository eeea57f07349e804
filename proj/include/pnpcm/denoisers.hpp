#pragma once

#include <memory>
#include <string>

#include "pnpcm/operators.hpp"
#include "pnpcm/protocol.hpp"
#include "pnpcm/random.hpp"
#include "pnpcm/tensor.hpp"

namespace pnpcm {

// Maps the solver's time point t to a denoiser strength: strength = scale * t.
struct SigmaBehavior {
  double scale = 1.0;

  double strength(double t) const { return scale * t; }
};

// Proximal-operator stand-in D(v; t). Classical kinds treat complex tensors
// channelwise on their real and imaginary parts.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual std::string kind() const = 0;
  virtual bool deterministic() const { return true; }
  // Linear kinds expose their matrix-free form for operator-norm checks.
  virtual OperatorPtr as_linear(const Shape& /*shape*/, double /*t*/) const { return nullptr; }

  // Throws std::invalid_argument for negative t.
  Tensor denoise(const Tensor& v, double t) const;

 protected:
  virtual Tensor denoise_impl(const Tensor& v, double t) const = 0;
};

using DenoiserPtr = std::shared_ptr<const Denoiser>;

class IdentityDenoiser final : public Denoiser {
 public:
  std::string kind() const override { return "identity"; }
  OperatorPtr as_linear(const Shape& shape, double t) const override;

 protected:
  Tensor denoise_impl(const Tensor& v, double) const override { return v; }
};

// Separable Gaussian smoothing with std = scale * t and radius ceil(3 std).
class GaussianSmoothDenoiser final : public Denoiser {
 public:
  explicit GaussianSmoothDenoiser(SigmaBehavior sigma = {},
                                  Boundary boundary = Boundary::kCircular)
      : sigma_(sigma), boundary_(boundary) {}

  std::string kind() const override { return "gaussian_smooth"; }
  OperatorPtr as_linear(const Shape& shape, double t) const override;

 protected:
  Tensor denoise_impl(const Tensor& v, double t) const override;

 private:
  SigmaBehavior sigma_;
  Boundary boundary_;
};

// 3x3 median with reflect boundary; strength 0 leaves the input unchanged.
class MedianDenoiser final : public Denoiser {
 public:
  explicit MedianDenoiser(SigmaBehavior sigma = {}) : sigma_(sigma) {}
  std::string kind() const override { return "median"; }

 protected:
  Tensor denoise_impl(const Tensor& v, double t) const override;

 private:
  SigmaBehavior sigma_;
};

struct TvProxOptions {
  int max_iters = 50;
  double rel_tol = 1e-6;
};

// argmin_x 1/2 ||x - v||^2 + lambda TV(x), lambda = scale * t, isotropic TV
// per channel. Solved on the dual with accelerated projected gradient
// starting from a zero dual field.
class TvProxDenoiser final : public Denoiser {
 public:
  explicit TvProxDenoiser(SigmaBehavior sigma = {}, TvProxOptions options = {})
      : sigma_(sigma), options_(options) {}

  std::string kind() const override { return "tv_prox"; }
  const TvProxOptions& options() const { return options_; }

 protected:
  Tensor denoise_impl(const Tensor& v, double t) const override;

 private:
  SigmaBehavior sigma_;
  TvProxOptions options_;
};

// Orthonormal 2D DCT-II per channel, soft-thresholding of every non-DC
// coefficient at scale * t, inverse transform.
class SoftThresholdDctDenoiser final : public Denoiser {
 public:
  explicit SoftThresholdDctDenoiser(SigmaBehavior sigma = {}) : sigma_(sigma) {}
  std::string kind() const override { return "soft_threshold_dct"; }

 protected:
  Tensor denoise_impl(const Tensor& v, double t) const override;

 private:
  SigmaBehavior sigma_;
};

// Forwards (v, t) to an external process over the PNPD wire protocol.
class ExternalDenoiser final : public Denoiser {
 public:
  explicit ExternalDenoiser(ExternalDenoiserConfig config)
      : client_(std::make_unique<ExternalDenoiserClient>(std::move(config))) {}

  std::string kind() const override { return "external"; }
  // The remote model may be stochastic; the protocol carries no seed.
  bool deterministic() const override { return false; }

 protected:
  Tensor denoise_impl(const Tensor& v, double t) const override { return client_->denoise(v, t); }

 private:
  std::unique_ptr<ExternalDenoiserClient> client_;
};

Tensor external_denoise(const ExternalDenoiserConfig& endpoint, const Tensor& v, double t);

// Total variation sum of sqrt(dx^2 + dy^2) with forward differences, summed
// over channels and complex components.
double total_variation(const Tensor& x);

struct LipschitzEstimate {
  double l_hat = 0.0;
  int num_pairs_sampled = 0;
  Tensor anchor;     // a
  Tensor perturbed;  // a + delta achieving l_hat
};

// Empirical lower bound max ||D(a + d) - D(a)|| / ||d|| over num_pairs pairs.
// Anchors are uniform in [0, 1]; each restart begins with a random direction
// and then follows d <- D(a + d) - D(a) rescaled to perturbation_scale, which
// for linear denoisers is power iteration. The ratio uses the realized
// perturbation (a + d) - a.
LipschitzEstimate estimate_lipschitz(const Denoiser& d, const Shape& shape, DType dtype, double t,
                                     int num_pairs, double perturbation_scale, Rng& rng,
                                     int steps_per_restart = 25);

}  // namespace pnpcm
