#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pnpcm/denoisers.hpp"
#include "pnpcm/linsolve.hpp"
#include "pnpcm/metrics.hpp"
#include "pnpcm/operators.hpp"
#include "pnpcm/random.hpp"
#include "pnpcm/tensor.hpp"

namespace pnpcm {

// Per-iteration parameters of the reverse-indexed loop. Sequences indexed
// 1..N are stored at [n - 1]; time points t_0..t_N at [n].
struct Schedule {
  std::vector<double> time_points;  // t_0 .. t_N
  std::vector<double> rho;          // rho_1 .. rho_N, all > 0
  std::vector<double> beta;         // beta_1 .. beta_N, >= 0
  std::vector<double> noise_std;    // s_1 .. s_N; empty means s_n = t_n

  int n_steps() const { return static_cast<int>(rho.size()); }
  double t(int n) const { return time_points.at(static_cast<std::size_t>(n)); }
  double rho_at(int n) const { return rho.at(static_cast<std::size_t>(n - 1)); }
  double beta_at(int n) const { return beta.at(static_cast<std::size_t>(n - 1)); }
  double noise_std_at(int n) const;

  // Throws ConfigError on length mismatches, rho <= 0, negative beta or s.
  void validate() const;
  // s in execution order (s_N first) never increases.
  bool noise_diminishing() const;

  // value_n = start * decay^(N - n) for n = first..N.
  static std::vector<double> geometric(int n_steps, double start, double decay, int first = 1);
  static std::vector<double> constant(int n_steps, double value, int first = 1);
};

enum class HistoryMode {
  kNone,   // nothing recorded
  kNorms,  // scalar norms per iteration
  kFull,   // norms plus every iterate
};

struct RunConfig {
  OperatorPtr op;
  DenoiserPtr denoiser;
  Schedule schedule;
  CgConfig cg;
  RngSeed seed;
  bool noise_injection = true;
  bool momentum = true;
  // Zero the next momentum step when Delta_k > 10 Delta_{k-1}.
  bool divergence_guard = false;
  HistoryMode history = HistoryMode::kNorms;
};

struct IterationRecord {
  int n = 0;
  double dz = 0.0;  // ||z_n - z_{n+1}||
  double dx = 0.0;  // ||x_n - x_{n+1}||
  double du = 0.0;  // ||u_n - u_{n+1}||
  double eta_norm = 0.0;
  double objective = 0.0;  // 1/2 ||y - A x_n||^2
  int cg_iterations = 0;
  double cg_residual = 0.0;
  bool cg_converged = false;
  double beta_used = 0.0;
  double noise_std_used = 0.0;
};

struct IterateSnapshot {
  Tensor z, nu, x, u, x_hat, u_hat;
};

struct SolverState {
  Tensor x, z, u, x_hat, u_hat;
  // Iterates of the previous outer step, used by the momentum differences.
  Tensor x_prev, u_prev;
  int n = 0;
  std::size_t signal_size = 0;  // P: real scalars in the signal domain
  int denoiser_calls = 0;
  int linear_solves = 0;
  HistoryMode history_mode = HistoryMode::kNorms;
  std::vector<IterationRecord> history;
  std::vector<IterateSnapshot> iterates;  // kFull only, execution order

  // Echo of the configuration that produced this state.
  Schedule schedule;
  bool noise_injection = false;
  bool momentum = false;
};

struct RunResult {
  Tensor output;
  SolverState state;
};

// Runs the PnP-ADMM loop for n = N-1 down to 0 from all-zero state:
//   z_n   = (A^H A + rho_{n+1} I)^{-1} (A^H y + rho_{n+1} (xhat_{n+1} - uhat_{n+1}))
//   nu_n  ~ N(z_n + uhat_{n+1}, s_{n+1}^2 I)
//   x_n   = D(nu_n, t_{n+1})
//   u_n   = uhat_{n+1} + z_n - x_n
//   xhat_n = x_n + beta_{n+1} (x_n - x_{n+1})
//   uhat_n = u_n + beta_{n+1} (u_n - u_{n+1})
// and returns x_0. Throws DivergenceError naming the step on non-finite iterates.
RunResult run(const RunConfig& cfg, const Tensor& y);

// Delta_k = (dz + dx + du) / sqrt(P) per iteration, in execution order.
std::vector<double> residual_trace(const SolverState& state);

// Theorem bound with the noise-free step evaluated along the noisy
// trajectory: Delta^0_k uses x'_n = D(z_n + uhat_{n+1}, t) from the same
// previous iterates, which is the coupling the proof relies on.
struct StrictBoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  bool satisfied = false;
  // Per-step x/u bounds ||.|| <= L ||eta_k|| + (noise-free counterpart).
  int step_bounds_checked = 0;
  int step_bounds_violated = 0;
};

struct BoundReport {
  // Verdict: strict mode when it was evaluated, otherwise the paired runs.
  double lhs = 0.0;  // sum Delta^eta - sum Delta^0
  double rhs = 0.0;  // 2 L / sqrt(P) * sum ||eta_k||
  bool satisfied = false;
  bool strict_mode = false;

  double sum_eta = 0.0;
  double lipschitz = 0.0;  // l_hat times the inflation factor
  bool diminishing = false;
  bool eta_finite = false;

  // Same quantities from two independent trajectories (with and without
  // injection). Noise shifts both endpoints of every difference here, so
  // this form is reported but does not decide the verdict.
  double paired_lhs = 0.0;
  double paired_rhs = 0.0;
  bool paired_satisfied = false;
  int paired_step_bounds_checked = 0;
  int paired_step_bounds_violated = 0;

  std::optional<StrictBoundReport> strict;
};

struct BoundCheckOptions {
  double tolerance = 1e-12;
  // Multiplier on l_hat, which is only an empirical lower bound.
  double lipschitz_inflation = 1.0;
  // When set and the noisy run kept full history, also evaluate the strict mode.
  const Denoiser* denoiser = nullptr;
};

// Compares a noise-injected run against the same configuration without
// injection. Throws ConfigError when the runs differ in anything but the
// injection flag and noise levels. Strict mode needs options.denoiser and a
// noisy run recorded with full history.
BoundReport theorem1_check(const SolverState& run_with_noise, const SolverState& run_without_noise,
                           double l_hat, const BoundCheckOptions& options = {});

struct AblationRow {
  bool noise_injection = false;
  bool momentum = false;
  MetricReport metrics;
  int denoiser_calls = 0;
  int linear_solves = 0;
  Tensor output;
  SolverState state;
};

// Runs the four (noise, momentum) variants in the order
// (off, off), (on, off), (off, on), (on, on) with identical seeds.
std::vector<AblationRow> ablation_grid(const RunConfig& base_cfg, const Tensor& y,
                                       const Tensor& x_true, double peak);

}  // namespace pnpcm
