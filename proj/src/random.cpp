#include "pnpcm/random.hpp"

#include "pnpcm/error.hpp"

namespace pnpcm {

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor gaussian_sample(const Tensor& mean, double std, Rng& rng) {
  if (!(std >= 0.0)) {
    throw std::invalid_argument("gaussian_sample: std must be >= 0, got " +
                                std::to_string(std));
  }
  Tensor out = mean;
  if (std == 0.0) return out;
  for (double& v : out.buffer()) v += std * rng.normal();
  return out;
}

Tensor gaussian_noise(const Shape& shape, DType dtype, double std, Rng& rng) {
  return gaussian_sample(Tensor(shape, dtype), std, rng);
}

}  // namespace pnpcm
