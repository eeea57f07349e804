#pragma once

#include <utility>
#include <vector>

#include "pnpcm/operators.hpp"
#include "pnpcm/tensor.hpp"

namespace pnpcm {

struct CgConfig {
  int max_iters = 30;
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;

  void validate() const;
};

struct CgReport {
  int iterations_used = 0;
  double initial_residual_norm = 0.0;
  // True residual ||rhs - (A^H A + rho I) z|| of the returned z.
  double final_residual_norm = 0.0;
  bool converged = false;
  // Recurrence residual norms, starting with the initial residual.
  std::vector<double> residual_history;
};

// Solves (A^H A + rho I) z = rhs by Krylov iteration (conjugate-residual
// form of conjugate gradients, Hermitian inner product), warm-started from x0.
// The residual norm is non-increasing. Stops once the residual drops below
// max(rel_tol * min(||r0||, ||rhs||), abs_tol) or after max_iters steps.
std::pair<Tensor, CgReport> cg_solve(const LinearOperator& op, double rho, const Tensor& rhs,
                                     const Tensor& x0, const CgConfig& cfg = {});

// True when direct_solve_diagonalizable supports `op`: masks, circular blurs,
// and single-coil Fourier subsampling.
bool is_diagonalizable(const LinearOperator& op);

// Exact solve of (A^H A + rho I) z = rhs by elementwise division in the domain
// where the Gram operator is diagonal.
Tensor direct_solve_diagonalizable(const LinearOperator& op, double rho, const Tensor& rhs);

// A^H y + rho (xhat - uhat)
Tensor build_zupdate_rhs(const LinearOperator& op, const Tensor& y, double rho,
                         const Tensor& xhat, const Tensor& uhat);
// Same with A^H y precomputed.
Tensor build_zupdate_rhs_from_backprojection(const Tensor& aty, double rho, const Tensor& xhat,
                                             const Tensor& uhat);

}  // namespace pnpcm
