#include "pnpcm/engine.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pnpcm/error.hpp"

namespace pnpcm {

// --- schedule ------------------------------------------------------------------

double Schedule::noise_std_at(int n) const {
  if (noise_std.empty()) return t(n);
  return noise_std.at(static_cast<std::size_t>(n - 1));
}

void Schedule::validate() const {
  const int n = n_steps();
  if (n < 1) throw ConfigError("schedule needs at least one step (rho has no entries)");
  auto size_error = [&](const char* name, std::size_t got, std::size_t want) {
    std::ostringstream os;
    os << "schedule." << name << " has " << got << " entries, expected " << want;
    throw ConfigError(os.str());
  };
  if (time_points.size() != static_cast<std::size_t>(n + 1)) {
    size_error("t", time_points.size(), static_cast<std::size_t>(n + 1));
  }
  if (beta.size() != static_cast<std::size_t>(n)) size_error("beta", beta.size(), n);
  if (!noise_std.empty() && noise_std.size() != static_cast<std::size_t>(n)) {
    size_error("noise_std", noise_std.size(), n);
  }
  for (double v : rho) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("schedule.rho entries must be > 0");
  }
  for (double v : beta) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("schedule.beta entries must be >= 0");
  }
  for (double v : time_points) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("schedule.t entries must be >= 0");
  }
  for (double v : noise_std) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("schedule.noise_std entries must be >= 0");
    }
  }
}

bool Schedule::noise_diminishing() const {
  const int n = n_steps();
  if (n < 1) return true;
  // Execution order visits s_N first.
  for (int k = n; k > 1; --k) {
    if (noise_std_at(k - 1) > noise_std_at(k)) return false;
  }
  const double first = noise_std_at(n);
  const double last = noise_std_at(1);
  return first == 0.0 || last < first;
}

std::vector<double> Schedule::geometric(int n_steps, double start, double decay, int first) {
  std::vector<double> out;
  for (int n = first; n <= n_steps; ++n) out.push_back(start * std::pow(decay, n_steps - n));
  return out;
}

std::vector<double> Schedule::constant(int n_steps, double value, int first) {
  return std::vector<double>(static_cast<std::size_t>(n_steps - first + 1), value);
}

// --- run -------------------------------------------------------------------------

namespace {

void require_finite(const Tensor& t, const char* step, int n) {
  if (!all_finite(t)) {
    std::ostringstream os;
    os << "non-finite iterate after " << step << " at n=" << n;
    throw DivergenceError(os.str());
  }
}

}  // namespace

RunResult run(const RunConfig& cfg, const Tensor& y) {
  if (!cfg.op) throw ConfigError("run: no forward operator configured");
  if (!cfg.denoiser) throw ConfigError("run: no denoiser configured");
  cfg.schedule.validate();
  cfg.cg.validate();
  const LinearOperator& op = *cfg.op;
  const Denoiser& denoiser = *cfg.denoiser;
  if (y.shape() != op.output_shape()) {
    throw ShapeError("measurement shape " + shape_to_string(y.shape()) +
                     " does not match operator output " + shape_to_string(op.output_shape()));
  }

  const Schedule& sched = cfg.schedule;
  const int N = sched.n_steps();
  Rng rng(cfg.seed);

  SolverState st;
  st.history_mode = cfg.history;
  st.schedule = sched;
  st.noise_injection = cfg.noise_injection;
  st.momentum = cfg.momentum;

  const Tensor aty = op.adjoint(y);
  const Tensor zero(op.input_shape(), y.dtype());
  st.signal_size = zero.buffer_size();
  st.x = st.u = st.x_hat = st.u_hat = zero;
  st.z = zero;
  st.n = N;

  bool suppress_momentum = false;
  double previous_delta = -1.0;
  const double sqrt_p = std::sqrt(static_cast<double>(st.signal_size));

  for (int n = N - 1; n >= 0; --n) {
    const double rho = sched.rho_at(n + 1);
    const double beta = (cfg.momentum && !suppress_momentum) ? sched.beta_at(n + 1) : 0.0;
    const double s = cfg.noise_injection ? sched.noise_std_at(n + 1) : 0.0;
    const double t = sched.t(n + 1);

    // Data-fidelity update, warm-started from the previous z.
    const Tensor rhs = build_zupdate_rhs_from_backprojection(aty, rho, st.x_hat, st.u_hat);
    auto [z, report] = cg_solve(op, rho, rhs, st.z, cfg.cg);
    ++st.linear_solves;
    require_finite(z, "data-fidelity update", n);

    // Noise injection.
    const Tensor mean = add(z, st.u_hat);
    Tensor nu = cfg.noise_injection ? gaussian_sample(mean, s, rng) : mean;
    const double eta_norm = distance(nu, mean);
    require_finite(nu, "noise injection", n);

    // Proximal (denoiser) step.
    Tensor x = denoiser.denoise(nu, t);
    ++st.denoiser_calls;
    require_finite(x, "denoiser", n);

    // Dual update u_n = uhat_{n+1} + z_n - x_n.
    Tensor u = sub(mean, x);

    // Primal and dual momentum.
    Tensor x_hat = x;
    Tensor u_hat = u;
    if (beta != 0.0) {
      x_hat = axpy(beta, sub(x, st.x), x);
      u_hat = axpy(beta, sub(u, st.u), u);
    }
    require_finite(u_hat, "momentum update", n);

    IterationRecord rec;
    rec.n = n;
    rec.dz = distance(z, st.z);
    rec.dx = distance(x, st.x);
    rec.du = distance(u, st.u);
    rec.eta_norm = eta_norm;
    const double misfit = distance(y, op.apply(x));
    rec.objective = 0.5 * misfit * misfit;
    rec.cg_iterations = report.iterations_used;
    rec.cg_residual = report.final_residual_norm;
    rec.cg_converged = report.converged;
    rec.beta_used = beta;
    rec.noise_std_used = s;

    const double delta = (rec.dz + rec.dx + rec.du) / sqrt_p;
    suppress_momentum = cfg.divergence_guard && previous_delta >= 0.0 && delta > 10.0 * previous_delta;
    previous_delta = delta;

    if (cfg.history != HistoryMode::kNone) st.history.push_back(rec);
    if (cfg.history == HistoryMode::kFull) {
      st.iterates.push_back(IterateSnapshot{z, nu, x, u, x_hat, u_hat});
    }

    st.x_prev = std::move(st.x);
    st.u_prev = std::move(st.u);
    st.z = std::move(z);
    st.x = std::move(x);
    st.u = std::move(u);
    st.x_hat = std::move(x_hat);
    st.u_hat = std::move(u_hat);
    st.n = n;
  }
  return RunResult{st.x, std::move(st)};
}

std::vector<double> residual_trace(const SolverState& state) {
  if (state.history_mode == HistoryMode::kNone) {
    throw std::logic_error("residual_trace: run was executed without history");
  }
  const double sqrt_p = std::sqrt(static_cast<double>(state.signal_size));
  std::vector<double> out;
  out.reserve(state.history.size());
  for (const auto& r : state.history) out.push_back((r.dz + r.dx + r.du) / sqrt_p);
  return out;
}

// --- theorem check -----------------------------------------------------------------

namespace {

void require_paired(const SolverState& noisy, const SolverState& clean) {
  auto fail = [](const std::string& what) {
    throw ConfigError("theorem1_check: runs differ in " + what);
  };
  if (noisy.history_mode == HistoryMode::kNone || clean.history_mode == HistoryMode::kNone) {
    fail("history availability (both need history)");
  }
  if (noisy.signal_size != clean.signal_size) fail("signal size");
  if (noisy.history.size() != clean.history.size()) fail("iteration count");
  if (noisy.schedule.time_points != clean.schedule.time_points) fail("time points");
  if (noisy.schedule.rho != clean.schedule.rho) fail("rho");
  if (noisy.momentum != clean.momentum || noisy.schedule.beta != clean.schedule.beta) {
    fail("momentum");
  }
  for (const auto& r : clean.history) {
    if (r.eta_norm != 0.0) fail("noise: the reference run injected noise");
  }
}

StrictBoundReport strict_check(const SolverState& noisy, const Denoiser& denoiser, double lip,
                               double tolerance) {
  StrictBoundReport rep;
  const double sqrt_p = std::sqrt(static_cast<double>(noisy.signal_size));
  const Tensor zero = zeros_like(noisy.iterates.front().x);
  double sum_noisy = 0.0;
  double sum_clean = 0.0;
  double sum_eta = 0.0;
  for (std::size_t k = 0; k < noisy.iterates.size(); ++k) {
    const IterateSnapshot& cur = noisy.iterates[k];
    const Tensor& x_prev = k == 0 ? zero : noisy.iterates[k - 1].x;
    const Tensor& u_prev = k == 0 ? zero : noisy.iterates[k - 1].u;
    const Tensor& u_hat_prev = k == 0 ? zero : noisy.iterates[k - 1].u_hat;
    const IterationRecord& rec = noisy.history[k];
    const int n = rec.n;
    // Noise-free denoiser evaluation at the same point of the noisy trajectory.
    const Tensor mean = add(cur.z, u_hat_prev);
    const Tensor clean_x = denoiser.denoise(mean, noisy.schedule.t(n + 1));
    const double dx0 = distance(clean_x, x_prev);
    const double du0 = distance(sub(mean, clean_x), u_prev);
    const double slack = lip * rec.eta_norm + tolerance;
    rep.step_bounds_checked += 2;
    if (rec.dx > dx0 + slack) ++rep.step_bounds_violated;
    if (rec.du > du0 + slack) ++rep.step_bounds_violated;
    sum_noisy += (rec.dz + rec.dx + rec.du) / sqrt_p;
    sum_clean += (rec.dz + dx0 + du0) / sqrt_p;
    sum_eta += rec.eta_norm;
  }
  rep.lhs = sum_noisy - sum_clean;
  rep.rhs = 2.0 * lip / sqrt_p * sum_eta;
  rep.satisfied = rep.lhs <= rep.rhs + tolerance;
  return rep;
}

}  // namespace

BoundReport theorem1_check(const SolverState& run_with_noise, const SolverState& run_without_noise,
                           double l_hat, const BoundCheckOptions& options) {
  require_paired(run_with_noise, run_without_noise);
  BoundReport rep;
  rep.lipschitz = l_hat * options.lipschitz_inflation;
  const double sqrt_p = std::sqrt(static_cast<double>(run_with_noise.signal_size));

  const auto noisy = residual_trace(run_with_noise);
  const auto clean = residual_trace(run_without_noise);
  double sum_noisy = 0.0;
  double sum_clean = 0.0;
  for (std::size_t k = 0; k < noisy.size(); ++k) {
    sum_noisy += noisy[k];
    sum_clean += clean[k];
    const auto& a = run_with_noise.history[k];
    const auto& b = run_without_noise.history[k];
    rep.sum_eta += a.eta_norm;
    const double slack = rep.lipschitz * a.eta_norm + options.tolerance;
    rep.paired_step_bounds_checked += 2;
    if (a.dx > b.dx + slack) ++rep.paired_step_bounds_violated;
    if (a.du > b.du + slack) ++rep.paired_step_bounds_violated;
  }
  rep.paired_lhs = sum_noisy - sum_clean;
  rep.paired_rhs = 2.0 * rep.lipschitz / sqrt_p * rep.sum_eta;
  rep.paired_satisfied = rep.paired_lhs <= rep.paired_rhs + options.tolerance;
  rep.eta_finite = std::isfinite(rep.sum_eta);

  // The effective schedule of the noisy run (zero when injection was off).
  Schedule effective = run_with_noise.schedule;
  if (!run_with_noise.noise_injection) {
    effective.noise_std.assign(static_cast<std::size_t>(effective.n_steps()), 0.0);
  }
  rep.diminishing = effective.noise_diminishing();

  if (options.denoiser && run_with_noise.history_mode == HistoryMode::kFull &&
      !run_with_noise.iterates.empty()) {
    rep.strict = strict_check(run_with_noise, *options.denoiser, rep.lipschitz, options.tolerance);
  }
  if (rep.strict) {
    rep.strict_mode = true;
    rep.lhs = rep.strict->lhs;
    rep.rhs = rep.strict->rhs;
    rep.satisfied = rep.strict->satisfied;
  } else {
    rep.lhs = rep.paired_lhs;
    rep.rhs = rep.paired_rhs;
    rep.satisfied = rep.paired_satisfied;
  }
  return rep;
}

// --- ablation ------------------------------------------------------------------------

std::vector<AblationRow> ablation_grid(const RunConfig& base_cfg, const Tensor& y,
                                       const Tensor& x_true, double peak) {
  if (x_true.shape() != base_cfg.op->input_shape()) {
    throw ShapeError("ablation_grid: ground truth shape does not match operator input");
  }
  std::vector<AblationRow> rows;
  for (const auto& [noise, momentum] : {std::pair{false, false}, std::pair{true, false},
                                        std::pair{false, true}, std::pair{true, true}}) {
    RunConfig cfg = base_cfg;
    cfg.noise_injection = noise;
    cfg.momentum = momentum;
    RunResult result = run(cfg, y);
    AblationRow row;
    row.noise_injection = noise;
    row.momentum = momentum;
    const Tensor& truth = x_true.is_complex() == result.output.is_complex()
                              ? x_true
                              : (result.output.is_complex() ? to_complex(x_true) : x_true);
    row.metrics = evaluate(result.output, truth, peak);
    row.denoiser_calls = result.state.denoiser_calls;
    row.linear_solves = result.state.linear_solves;
    row.output = std::move(result.output);
    row.state = std::move(result.state);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pnpcm
