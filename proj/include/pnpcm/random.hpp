#pragma once

#include <cstdint>
#include <random>

#include "pnpcm/tensor.hpp"

namespace pnpcm {

struct RngSeed {
  std::uint64_t value = 0;
};

// Seeded generator owned by a single run. Identical seed and identical call
// sequence yield bit-identical draws.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  // Derive an independent child seed; used to give sub-tasks their own streams.
  RngSeed fork() { return RngSeed{engine_()}; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// mean + std * eps, eps i.i.d. standard normal per scalar component (real and
// imaginary parts drawn independently for complex tensors).
Tensor gaussian_sample(const Tensor& mean, double std, Rng& rng);
Tensor gaussian_noise(const Shape& shape, DType dtype, double std, Rng& rng);

}  // namespace pnpcm
