#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "pnpcm/error.hpp"
#include "pnpcm/linsolve.hpp"

using namespace pnpcm;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

double rel_err(const Tensor& got, const oracle::cvec& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    num += std::norm(got.at(i) - want[i]);
    den += std::norm(want[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("identity operator z-update example") {
  const auto op = make_identity({1});
  const Tensor rhs = build_zupdate_rhs(*op, Tensor::real({1}, {3}), 2.0, Tensor::real({1}, {2}),
                                       Tensor::real({1}, {1}));
  CHECK(rhs.buffer()[0] == 5.0);
  const auto [z, report] = cg_solve(*op, 2.0, rhs, Tensor({1}, DType::kReal64));
  CHECK(z.buffer()[0] == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
  CHECK(report.converged);
}

TEST_CASE("CG examples with identity Gram operators") {
  Rng rng(RngSeed{20});
  const Tensor v = random_tensor({3, 3}, DType::kReal64, rng);
  const auto id = make_identity({3, 3});
  const auto [z1, r1] = cg_solve(*id, 1.0, scale(2.0, v), zeros_like(v));
  CHECK(max_abs_diff(z1, v) <= 1e-14);
  const MaskOperator all({3, 3}, MaskSpec::all(3, 3));
  const auto [z2, r2] = cg_solve(all, 3.0, scale(4.0, v), zeros_like(v));
  CHECK(max_abs_diff(z2, v) <= 1e-14);
}

TEST_CASE("direct solve examples") {
  const auto op = make_identity({2});
  const Tensor z = direct_solve_diagonalizable(*op, 1.0, Tensor::real({2}, {4, 2}));
  CHECK(bit_equal(z, Tensor::real({2}, {2, 1})));
  const MaskOperator all({2, 2}, MaskSpec::all(2, 2));
  const Tensor rhs = Tensor::real({2, 2}, {1, 2, 3, 4});
  CHECK(max_abs_diff(direct_solve_diagonalizable(all, 1.0, rhs), scale(0.5, rhs)) == 0.0);
  const MaskOperator none({1, 2}, MaskSpec{1, 2, {1, 0}});
  const Tensor mixed = direct_solve_diagonalizable(none, 1.0, Tensor::real({1, 2}, {4, 2}));
  CHECK(bit_equal(mixed, Tensor::real({1, 2}, {2, 2})));
}

TEST_CASE("CG matches the dense oracle on a 16x16 mask") {
  Rng rng(RngSeed{21});
  const MaskOperator op({16, 16}, MaskSpec::random(16, 16, 0.3, rng));
  const DenseMatrix a = to_dense(op);
  for (double rho : {0.1, 0.5, 1.0, 10.0}) {
    const Tensor rhs = random_tensor({16, 16}, DType::kReal64, rng);
    const auto [z, report] = cg_solve(op, rho, rhs, zeros_like(rhs));
    CHECK(rel_err(z, oracle::dense_zupdate(a, rho, oracle::to_cvec(rhs))) <= 1e-8);
    CHECK(report.converged);
  }
}

TEST_CASE("CG matches direct solves where both apply") {
  Rng rng(RngSeed{22});
  const BlurOperator blur({32, 32}, BlurSpec::gaussian(5, 1.5, Boundary::kCircular));
  REQUIRE(is_diagonalizable(blur));
  const FourierSubsampleOperator fourier({32, 32},
                                         FourierSubsampleSpec::random_lines(32, 4, 6, rng));
  REQUIRE(is_diagonalizable(fourier));
  const CgConfig cfg{500, 1e-12, 1e-300};
  for (double rho : {0.05, 1.0}) {
    const Tensor rb = random_tensor({32, 32}, DType::kReal64, rng);
    const auto [zb, rep_b] = cg_solve(blur, rho, rb, zeros_like(rb), cfg);
    const Tensor db = direct_solve_diagonalizable(blur, rho, rb);
    CHECK(distance(zb, db) <= 1e-7 * norm2(db));

    const Tensor rf = random_tensor({32, 32}, DType::kComplex128, rng);
    const auto [zf, rep_f] = cg_solve(fourier, rho, rf, zeros_like(rf), cfg);
    const Tensor df = direct_solve_diagonalizable(fourier, rho, rf);
    CHECK(distance(zf, df) <= 1e-7 * norm2(df));
  }
}

TEST_CASE("reflect blur and multi-coil Fourier are not diagonalizable") {
  CHECK_FALSE(is_diagonalizable(BlurOperator({8, 8}, BlurSpec::gaussian(3, 1.0, Boundary::kReflect))));
  auto spec = FourierSubsampleSpec::full(8);
  spec.coil_sensitivities = make_coil_maps(2, 8, 8);
  const FourierSubsampleOperator op({8, 8}, spec);
  CHECK_FALSE(is_diagonalizable(op));
  CHECK_THROWS(direct_solve_diagonalizable(op, 1.0, Tensor({8, 8}, DType::kComplex128)));
}

TEST_CASE("CG residuals decrease monotonically") {
  Rng rng(RngSeed{23});
  const BlurOperator op({24, 24}, BlurSpec::gaussian(7, 2.0, Boundary::kReflect));
  const Tensor rhs = random_tensor({24, 24}, DType::kReal64, rng);
  const auto [z, report] = cg_solve(op, 0.01, rhs, zeros_like(rhs), CgConfig{200, 1e-10, 1e-300});
  REQUIRE(report.residual_history.size() >= 2);
  for (std::size_t i = 1; i < report.residual_history.size(); ++i) {
    CHECK(report.residual_history[i] <= report.residual_history[i - 1]);
  }
  CHECK(report.converged);
}

TEST_CASE("capped CG reports non-convergence honestly") {
  Rng rng(RngSeed{24});
  const BlurOperator op({32, 32}, BlurSpec::gaussian(9, 3.0, Boundary::kReflect));
  const Tensor rhs = random_tensor({32, 32}, DType::kReal64, rng);
  const auto [z, report] = cg_solve(op, 1e-4, rhs, zeros_like(rhs), CgConfig{2, 1e-14, 1e-300});
  CHECK(report.iterations_used == 2);
  CHECK_FALSE(report.converged);
  const Tensor resid = sub(rhs, axpy(1e-4, z, op.gram(z)));
  CHECK(report.final_residual_norm == doctest::Approx(norm2(resid)).epsilon(1e-10));
}

TEST_CASE("CG warm start at the solution returns immediately") {
  const auto op = make_identity({4});
  const Tensor rhs = Tensor::real({4}, {2, 4, 6, 8});
  const Tensor sol = Tensor::real({4}, {1, 2, 3, 4});
  const auto [z, report] = cg_solve(*op, 1.0, rhs, sol);
  CHECK(report.iterations_used == 0);
  CHECK(bit_equal(z, sol));
}

TEST_CASE("CG rejects bad inputs") {
  const auto op = make_identity({4});
  const Tensor rhs({4}, DType::kReal64);
  CHECK_THROWS(cg_solve(*op, 0.0, rhs, rhs));
  CHECK_THROWS(cg_solve(*op, -1.0, rhs, rhs));
  CHECK_THROWS_AS(cg_solve(*op, 1.0, rhs, Tensor({5}, DType::kReal64)), ShapeError);
  CHECK_THROWS(CgConfig{0, 1e-8, 1e-300}.validate());
}

TEST_CASE("z-update right-hand side") {
  Rng rng(RngSeed{25});
  const MaskOperator op({6, 6}, MaskSpec::random(6, 6, 0.5, rng));
  const Tensor y = random_tensor({6, 6}, DType::kReal64, rng);
  const Tensor v = random_tensor({6, 6}, DType::kReal64, rng);
  CHECK(bit_equal(build_zupdate_rhs(op, y, 3.0, v, v), op.adjoint(y)));
  CHECK_THROWS(build_zupdate_rhs(op, y, 0.0, v, v));
  const Tensor w = random_tensor({6, 6}, DType::kReal64, rng);
  const Tensor r = build_zupdate_rhs(op, y, 2.0, v, w);
  CHECK(max_abs_diff(r, add(op.adjoint(y), scale(2.0, sub(v, w)))) <= 1e-15);
  CHECK(bit_equal(r, build_zupdate_rhs_from_backprojection(op.adjoint(y), 2.0, v, w)));
}
