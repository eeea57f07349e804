#include <doctest.h>

#include <cmath>
#include <complex>

#include "pnpcm/error.hpp"
#include "pnpcm/random.hpp"
#include "pnpcm/tensor.hpp"

using namespace pnpcm;

namespace {

Tensor random_tensor(const Shape& shape, DType dtype, Rng& rng) {
  return gaussian_noise(shape, dtype, 1.0, rng);
}

}  // namespace

TEST_CASE("axpy examples") {
  const Tensor y = Tensor::real({2}, {1, 2});
  const Tensor x = Tensor::real({2}, {7, -3});
  CHECK(bit_equal(axpy(0.0, x, y), y));
  CHECK(bit_equal(axpy(1.0, Tensor::real({2}, {1, 1}), Tensor::real({2}, {2, 3})),
                  Tensor::real({2}, {3, 4})));
  const Tensor zero = axpy(-1.0, x, x);
  CHECK(norm2(zero) == 0.0);
}

TEST_CASE("arithmetic rejects mismatched layouts") {
  const Tensor a = Tensor::real({2}, {1, 2});
  CHECK_THROWS_AS(axpy(1.0, a, Tensor::real({3}, {1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor::real({2, 1}, {1, 2})), ShapeError);
  CHECK_THROWS_AS(inner(a, to_complex(a)), ShapeError);
  CHECK_THROWS_AS(sub(a, to_complex(a)), ShapeError);
}

TEST_CASE("inner examples") {
  CHECK(inner(Tensor::real({2}, {1, 0}), Tensor::real({2}, {0, 1})) == cdouble(0.0));
  const Tensor x = Tensor::real({2}, {3, 4});
  CHECK(inner(x, x) == cdouble(25.0));
  const Tensor i = Tensor::complex({1}, {cdouble(0, 1)});
  CHECK(inner(i, i) == cdouble(1.0));
}

TEST_CASE("norm2 examples") {
  CHECK(norm2(Tensor({4, 4}, DType::kReal64)) == 0.0);
  CHECK(norm2(Tensor::real({2}, {3, 4})) == 5.0);
  CHECK(norm2(Tensor::complex({1}, {cdouble(3, 4)})) == 5.0);
}

TEST_CASE("inner is conjugate symmetric and norms obey the triangle inequality") {
  Rng rng(RngSeed{11});
  for (int k = 0; k < 100; ++k) {
    const DType dt = k % 2 ? DType::kComplex128 : DType::kReal64;
    const Tensor x = random_tensor({5, 3}, dt, rng);
    const Tensor y = random_tensor({5, 3}, dt, rng);
    CHECK(std::abs(inner(x, y) - std::conj(inner(y, x))) <= 1e-12);
    CHECK(norm2(add(x, y)) <= norm2(x) + norm2(y) + 1e-12);
    CHECK(inner(x, x).imag() == doctest::Approx(0.0));
    CHECK(inner(x, x).real() >= 0.0);
    CHECK(distance(x, y) == doctest::Approx(norm2(sub(x, y))).epsilon(1e-14));
  }
}

TEST_CASE("norm2 vanishes only on the zero tensor") {
  Tensor x({3, 3}, DType::kComplex128);
  CHECK(norm2(x) == 0.0);
  x.set(4, cdouble(0.0, 1e-100));
  CHECK(norm2(x) > 0.0);
}

TEST_CASE("complex layout is interleaved") {
  const Tensor c = Tensor::complex({2}, {cdouble(1, 2), cdouble(3, 4)});
  REQUIRE(c.buffer_size() == 4);
  CHECK(c.buffer()[0] == 1);
  CHECK(c.buffer()[1] == 2);
  CHECK(c.buffer()[3] == 4);
  CHECK(bit_equal(combine_complex(real_part(c), imag_part(c)), c));
  CHECK(bit_equal(real_part(to_complex(Tensor::real({2}, {5, 6}))), Tensor::real({2}, {5, 6})));
}

TEST_CASE("tensor construction validates the buffer length") {
  CHECK_THROWS(Tensor({2, 2}, DType::kReal64, std::vector<double>(3)));
  CHECK_THROWS(Tensor({2}, DType::kComplex128, std::vector<double>(2)));
  CHECK(Tensor({2, 3, 4}, DType::kReal64).numel() == 24);
}

TEST_CASE("gaussian_sample with zero std returns the mean exactly") {
  Rng rng(RngSeed{1});
  const Tensor m = Tensor::real({3}, {0.1, -2, 7});
  CHECK(bit_equal(gaussian_sample(m, 0.0, rng), m));
  CHECK_THROWS_AS(gaussian_sample(m, -1.0, rng), std::invalid_argument);
}

TEST_CASE("gaussian_sample statistics over 10^6 draws") {
  Rng rng(RngSeed{2024});
  const Tensor s = gaussian_noise({1000000}, DType::kReal64, 1.0, rng);
  double mean = 0.0;
  for (double v : s.buffer()) mean += v;
  mean /= 1e6;
  double var = 0.0;
  for (double v : s.buffer()) var += (v - mean) * (v - mean);
  var /= 1e6 - 1;
  CHECK(std::abs(mean) < 4e-3);
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("complex gaussian components each have the requested std") {
  Rng rng(RngSeed{5});
  const Tensor s = gaussian_noise({200000}, DType::kComplex128, 0.5, rng);
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    re += s.at(i).real() * s.at(i).real();
    im += s.at(i).imag() * s.at(i).imag();
  }
  CHECK(std::sqrt(re / 200000) == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::sqrt(im / 200000) == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("identical seeds give identical draws") {
  Rng a(RngSeed{77}), b(RngSeed{77}), c(RngSeed{78});
  const Tensor m({8, 8}, DType::kComplex128);
  const Tensor sa = gaussian_sample(m, 1.0, a);
  CHECK(bit_equal(sa, gaussian_sample(m, 1.0, b)));
  CHECK_FALSE(bit_equal(sa, gaussian_sample(m, 1.0, c)));
}

TEST_CASE("all_finite detects nan and inf") {
  Tensor x = Tensor::real({3}, {1, 2, 3});
  CHECK(all_finite(x));
  x.buffer()[1] = std::nan("");
  CHECK_FALSE(all_finite(x));
  x.buffer()[1] = INFINITY;
  CHECK_FALSE(all_finite(x));
}
