#include "pnpcm/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pnpcm/error.hpp"
#include "pnpcm/io.hpp"
#include "pnpcm/protocol.hpp"

namespace pnpcm {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string utc_timestamp(bool compact) {
  const auto now = std::chrono::system_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, compact ? "%Y%m%dT%H%M%S" : "%Y-%m-%dT%H:%M:%S");
  os << (compact ? "" : ".") << std::setw(3) << std::setfill('0') << ms << "Z";
  return os.str();
}

json metrics_json(const MetricReport& m, double peak) {
  json j;
  j["psnr_db"] = m.psnr_db;
  j["ssim"] = std::isfinite(m.ssim) ? json(m.ssim) : json(nullptr);
  j["mse"] = m.mse;
  j["peak"] = peak;
  return j;
}

json iterations_json(const SolverState& st) {
  json rows = json::array();
  const double sqrt_p = std::sqrt(static_cast<double>(st.signal_size));
  for (const auto& r : st.history) {
    json j;
    j["n"] = r.n;
    j["dz"] = r.dz;
    j["dx"] = r.dx;
    j["du"] = r.du;
    j["delta"] = (r.dz + r.dx + r.du) / sqrt_p;
    j["eta_norm"] = r.eta_norm;
    j["objective"] = r.objective;
    j["cg_iterations"] = r.cg_iterations;
    j["cg_residual"] = r.cg_residual;
    j["cg_converged"] = r.cg_converged;
    j["beta"] = r.beta_used;
    j["noise_std"] = r.noise_std_used;
    rows.push_back(j);
  }
  return rows;
}

json metadata_json(const std::string& command, double wall_time_s) {
  json j;
  j["command"] = command;
  j["timestamp"] = utc_timestamp(false);
  j["wall_time_s"] = wall_time_s;
  return j;
}

void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

bool writable_as_image(const Tensor& x) {
  const auto& s = x.shape();
  return s.size() == 2 || (s.size() == 3 && (s[2] == 1 || s[2] == 3));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path output_base(const ExperimentConfig& cfg, const fs::path& base_dir) {
  return resolve(base_dir, cfg.output.dir);
}

}  // namespace

// --- problem setup -------------------------------------------------------------------

Problem prepare_problem(const ExperimentConfig& cfg, const fs::path& base_dir,
                        const std::optional<fs::path>& image_override,
                        std::optional<std::uint64_t> seed_override) {
  Rng master(RngSeed{seed_override.value_or(cfg.task.seed)});
  Rng op_rng(master.fork());
  Rng noise_rng(master.fork());

  Problem p;
  p.run_seed = master.fork();
  const bool complex_signal = operator_needs_complex(cfg.task.op);

  std::optional<fs::path> image_path = image_override;
  if (!image_path && !cfg.task.image.empty()) image_path = resolve(base_dir, cfg.task.image);
  if (image_path) {
    Tensor x = load_image(*image_path);
    if (complex_signal && !x.is_complex()) x = to_complex(x);
    if (!cfg.task.shape.empty() && x.shape() != cfg.task.shape) {
      throw ShapeError(image_path->string() + ": image shape " + shape_to_string(x.shape()) +
                       " does not match task.shape " + shape_to_string(cfg.task.shape));
    }
    p.x_true = std::move(x);
    p.source = image_path->string();
  } else {
    p.source = "shape " + shape_to_string(cfg.task.shape);
  }
  const Shape shape = p.x_true ? p.x_true->shape() : Shape(cfg.task.shape);
  if (shape.empty()) throw ConfigError("missing required key 'task.image' (or 'task.shape')");

  p.op = build_operator(cfg.task.op, shape, op_rng, base_dir);

  if (!cfg.task.measurement.empty()) {
    p.y = load_tensor(resolve(base_dir, cfg.task.measurement));
    if (p.y.shape() != p.op->output_shape()) {
      throw ShapeError("measurement shape " + shape_to_string(p.y.shape()) +
                       " does not match operator output " +
                       shape_to_string(p.op->output_shape()));
    }
    if (complex_signal && !p.y.is_complex()) p.y = to_complex(p.y);
  } else if (p.x_true) {
    p.y = synthesize_measurement(*p.op, *p.x_true, cfg.task.sigma_y, noise_rng);
  } else {
    throw ConfigError("missing required key 'task.measurement' (no ground-truth image given)");
  }
  return p;
}

RunConfig make_run_config(const ExperimentConfig& cfg, const Problem& problem,
                          DenoiserPtr denoiser) {
  RunConfig rc;
  rc.op = problem.op;
  rc.denoiser = std::move(denoiser);
  rc.schedule = build_schedule(cfg.schedule);
  rc.cg = cfg.solver.cg;
  rc.seed = problem.run_seed;
  rc.noise_injection = cfg.solver.noise_injection;
  rc.momentum = cfg.solver.momentum;
  rc.divergence_guard = cfg.solver.divergence_guard;
  rc.history = parse_history_mode(cfg.solver.history);
  return rc;
}

fs::path make_run_directory(const fs::path& base, const std::string& name) {
  std::error_code ec;
  fs::create_directories(base, ec);
  if (ec) throw IoError("cannot create output directory " + base.string() + ": " + ec.message());
  const std::string stem = name + "-" + utc_timestamp(true);
  for (int k = 0; k < 10000; ++k) {
    const fs::path dir = base / (k == 0 ? stem : stem + "-" + std::to_string(k));
    // create_directory reports false when the directory already existed.
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  }
  throw IoError("could not find a free run directory under " + base.string());
}

// --- reconstruct ---------------------------------------------------------------------

ReconstructOutcome reconstruct(const ExperimentConfig& cfg, const fs::path& base_dir) {
  const auto start = std::chrono::steady_clock::now();
  const Problem problem = prepare_problem(cfg, base_dir);
  const RunConfig rc = make_run_config(cfg, problem, build_denoiser(cfg.denoiser));

  ReconstructOutcome out;
  out.result = run(rc, problem.y);
  double peak = 1.0;
  if (problem.x_true) {
    peak = default_peak(*problem.x_true);
    out.metrics = evaluate(out.result.output, *problem.x_true, peak);
  }

  out.run_dir = make_run_directory(output_base(cfg, base_dir), cfg.output.name);
  save_tensor(out.run_dir / "output.pnpt", out.result.output);
  if (cfg.output.save_image && writable_as_image(out.result.output)) {
    const bool rgb = out.result.output.rank() == 3 && out.result.output.shape()[2] == 3;
    save_pnm(out.run_dir / (rgb ? "output.ppm" : "output.pgm"), out.result.output);
  }

  json record;
  record["config"] = json::parse(to_json_text(cfg));
  record["result"] = {{"source", problem.source},
                      {"output", "output.pnpt"},
                      {"n_steps", rc.schedule.n_steps()},
                      {"denoiser_calls", out.result.state.denoiser_calls},
                      {"linear_solves", out.result.state.linear_solves}};
  record["metrics"] = out.metrics ? metrics_json(*out.metrics, peak) : json(nullptr);
  if (cfg.output.record_iterations) record["iterations"] = iterations_json(out.result.state);
  record["metadata"] = metadata_json("reconstruct", seconds_since(start));
  write_json(out.run_dir / "record.json", record);

  if (out.metrics) {
    std::ostringstream row;
    row << std::setprecision(17) << "source,psnr_db,ssim,mse\n"
        << problem.source << "," << out.metrics->psnr_db << "," << out.metrics->ssim << ","
        << out.metrics->mse << "\n";
    write_text(out.run_dir / "metrics.csv", row.str());
  }
  return out;
}

// --- ablation ------------------------------------------------------------------------

unsigned ablation_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PNP_CM_NUM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = static_cast<unsigned>(v);
  }
  return n;
}

namespace {

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm" || ext == ".pnpt") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .pgm/.ppm/.pnm/.pnpt images in " + dir.string());
  return out;
}

}  // namespace

AblationTable ablate(const ExperimentConfig& cfg, const fs::path& base_dir, unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<fs::path> images;
  if (!cfg.task.images_dir.empty()) {
    images = list_images(resolve(base_dir, cfg.task.images_dir));
  } else if (!cfg.task.image.empty()) {
    images.push_back(resolve(base_dir, cfg.task.image));
  } else {
    throw ConfigError("missing required key 'task.images_dir'");
  }
  if (!cfg.task.measurement.empty()) {
    throw ConfigError("'task.measurement' cannot be used with ablate (ground truth required)");
  }

  const DenoiserPtr denoiser = build_denoiser(cfg.denoiser);
  std::vector<std::vector<AblationRow>> per_image(images.size());
  std::vector<std::exception_ptr> errors(images.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        const Problem problem = prepare_problem(cfg, base_dir, images[i], cfg.task.seed + i);
        const RunConfig rc = make_run_config(cfg, problem, denoiser);
        per_image[i] = ablation_grid(rc, problem.y, *problem.x_true, default_peak(*problem.x_true));
        for (auto& row : per_image[i]) {
          // Only the scalar summaries are kept.
          row.output = Tensor();
          row.state.iterates.clear();
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::clamp<unsigned>(threads, 1u, static_cast<unsigned>(images.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < workers; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  AblationTable table;
  for (const auto& p : images) table.images.push_back(p.filename().string());
  for (std::size_t v = 0; v < 4; ++v) {
    AblationSummaryRow row;
    row.noise_injection = per_image[0][v].noise_injection;
    row.momentum = per_image[0][v].momentum;
    row.denoiser_calls = per_image[0][v].denoiser_calls;
    row.linear_solves = per_image[0][v].linear_solves;
    for (const auto& img : per_image) {
      row.psnr.push_back(img[v].metrics.psnr_db);
      row.ssim.push_back(img[v].metrics.ssim);
      row.mean_psnr += img[v].metrics.psnr_db;
      row.mean_ssim += img[v].metrics.ssim;
      ++row.runs;
    }
    row.mean_psnr /= row.runs;
    row.mean_ssim /= row.runs;
    table.rows.push_back(std::move(row));
  }

  table.run_dir = make_run_directory(output_base(cfg, base_dir), cfg.output.name);
  write_text(table.run_dir / "ablation.json", ablation_table_json(table));
  write_text(table.run_dir / "ablation.txt", format_ablation_table(table));
  json record;
  record["config"] = json::parse(to_json_text(cfg));
  record["table"] = "ablation.json";
  record["metadata"] = metadata_json("ablate", seconds_since(start));
  write_json(table.run_dir / "record.json", record);
  return table;
}

std::string format_ablation_table(const AblationTable& table) {
  std::ostringstream os;
  os << "noise  momentum  psnr_db   ssim     runs  nfe\n";
  for (const auto& r : table.rows) {
    os << std::left << std::setw(7) << (r.noise_injection ? "on" : "off") << std::setw(10)
       << (r.momentum ? "on" : "off") << std::right << std::fixed << std::setprecision(3)
       << std::setw(7) << r.mean_psnr << "  " << std::setprecision(4) << std::setw(7)
       << r.mean_ssim << "  " << std::setw(4) << r.runs << "  " << std::setw(3)
       << r.denoiser_calls << "\n";
  }
  return os.str();
}

std::string ablation_table_json(const AblationTable& table) {
  json j;
  j["images"] = table.images;
  j["rows"] = json::array();
  for (const auto& r : table.rows) {
    json row;
    row["noise_injection"] = r.noise_injection;
    row["momentum"] = r.momentum;
    row["mean_psnr_db"] = r.mean_psnr;
    row["mean_ssim"] = std::isfinite(r.mean_ssim) ? json(r.mean_ssim) : json(nullptr);
    row["runs"] = r.runs;
    row["denoiser_calls"] = r.denoiser_calls;
    row["linear_solves"] = r.linear_solves;
    row["psnr_db"] = r.psnr;
    json ssim = json::array();
    for (double s : r.ssim) ssim.push_back(std::isfinite(s) ? json(s) : json(nullptr));
    row["ssim"] = ssim;
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

// --- theorem check -------------------------------------------------------------------

TheoremOutcome check_theorem(const ExperimentConfig& cfg, const fs::path& base_dir) {
  const auto start = std::chrono::steady_clock::now();
  const DenoiserPtr denoiser = build_denoiser(cfg.denoiser);
  TheoremOutcome out;
  out.satisfied = true;
  json trials = json::array();

  for (int k = 0; k < cfg.theorem.trials; ++k) {
    const std::uint64_t seed = cfg.task.seed + static_cast<std::uint64_t>(k);
    const Problem problem = prepare_problem(cfg, base_dir, std::nullopt, seed);
    RunConfig noisy = make_run_config(cfg, problem, denoiser);
    noisy.noise_injection = true;
    noisy.history = HistoryMode::kFull;
    RunConfig clean = noisy;
    clean.noise_injection = false;
    clean.history = HistoryMode::kNorms;
    const RunResult with_noise = run(noisy, problem.y);
    const RunResult without_noise = run(clean, problem.y);

    // Largest ratio over every time point the loop evaluates the denoiser at.
    Rng lip_rng(RngSeed{seed ^ 0x9e3779b97f4a7c15ULL});
    std::vector<double> times(noisy.schedule.time_points.begin() + 1,
                              noisy.schedule.time_points.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    double l_hat = 0.0;
    for (double t : times) {
      const auto est = estimate_lipschitz(*denoiser, problem.op->input_shape(), problem.y.dtype(), t,
                                          cfg.theorem.lipschitz_pairs, cfg.theorem.perturbation,
                                          lip_rng);
      l_hat = std::max(l_hat, est.l_hat);
    }
    out.l_hat = std::max(out.l_hat, l_hat);

    BoundCheckOptions opts;
    opts.lipschitz_inflation = cfg.theorem.inflation;
    opts.denoiser = denoiser.get();
    TheoremTrial trial{seed, theorem1_check(with_noise.state, without_noise.state, l_hat, opts)};
    out.satisfied = out.satisfied && trial.report.satisfied;

    json tj;
    tj["seed"] = seed;
    tj["lhs"] = trial.report.lhs;
    tj["rhs"] = trial.report.rhs;
    tj["sum_eta"] = trial.report.sum_eta;
    tj["l_hat"] = l_hat;
    tj["lipschitz_used"] = trial.report.lipschitz;
    tj["satisfied"] = trial.report.satisfied;
    tj["mode"] = trial.report.strict_mode ? "strict" : "paired";
    tj["diminishing"] = trial.report.diminishing;
    tj["eta_finite"] = trial.report.eta_finite;
    tj["paired_lhs"] = trial.report.paired_lhs;
    tj["paired_rhs"] = trial.report.paired_rhs;
    tj["paired_satisfied"] = trial.report.paired_satisfied;
    tj["paired_step_bounds_checked"] = trial.report.paired_step_bounds_checked;
    tj["paired_step_bounds_violated"] = trial.report.paired_step_bounds_violated;
    if (trial.report.strict) {
      tj["strict"] = {{"lhs", trial.report.strict->lhs},
                      {"rhs", trial.report.strict->rhs},
                      {"satisfied", trial.report.strict->satisfied},
                      {"step_bounds_checked", trial.report.strict->step_bounds_checked},
                      {"step_bounds_violated", trial.report.strict->step_bounds_violated}};
    }
    trials.push_back(tj);
    out.trials.push_back(std::move(trial));
  }

  out.run_dir = make_run_directory(output_base(cfg, base_dir), cfg.output.name);
  json record;
  record["config"] = json::parse(to_json_text(cfg));
  record["satisfied"] = out.satisfied;
  record["trials"] = trials;
  record["metadata"] = metadata_json("check-theorem", seconds_since(start));
  write_json(out.run_dir / "record.json", record);
  return out;
}

// --- command wrappers ----------------------------------------------------------------

namespace {

std::ostream& out_of(const CommandOptions& o) { return o.out_stream ? *o.out_stream : std::cout; }
std::ostream& err_of(const CommandOptions& o) { return o.err_stream ? *o.err_stream : std::cerr; }

ExperimentConfig load_with_overrides(const CommandOptions& o) {
  ExperimentConfig cfg = load_config(o.config_path);
  if (o.seed) cfg.task.seed = *o.seed;
  if (o.out) cfg.output.dir = fs::absolute(*o.out).string();
  return cfg;
}

template <typename Fn>
int guarded(const CommandOptions& o, const char* command, Fn&& fn) {
  auto fail = [&](int code, const char* kind, const std::exception& e) {
    err_of(o) << command << ": " << kind << ": " << e.what() << "\n";
    return code;
  };
  try {
    return fn();
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config error", e);
  } catch (const ShapeError& e) {
    return fail(kExitConfig, "config error", e);
  } catch (const DivergenceError& e) {
    return fail(kExitDivergence, "divergence", e);
  } catch (const IoError& e) {
    return fail(kExitIo, "i/o error", e);
  } catch (const ProtocolError& e) {
    return fail(kExitIo, "external denoiser", e);
  } catch (const fs::filesystem_error& e) {
    return fail(kExitIo, "i/o error", e);
  } catch (const std::exception& e) {
    return fail(kExitConfig, "error", e);
  }
}

fs::path base_dir_of(const CommandOptions& o) { return o.config_path.parent_path(); }

}  // namespace

int cmd_reconstruct(const CommandOptions& o) {
  return guarded(o, "reconstruct", [&] {
    const ExperimentConfig cfg = load_with_overrides(o);
    const auto outcome = reconstruct(cfg, base_dir_of(o));
    if (!o.quiet) {
      auto& os = out_of(o);
      os << "run directory: " << outcome.run_dir.string() << "\n";
      os << "denoiser calls: " << outcome.result.state.denoiser_calls
         << ", linear solves: " << outcome.result.state.linear_solves << "\n";
      if (outcome.metrics) {
        os << std::fixed << std::setprecision(4) << "psnr_db: " << outcome.metrics->psnr_db
           << "  ssim: " << outcome.metrics->ssim << "\n";
        os.unsetf(std::ios::floatfield);
      }
    }
    return kExitOk;
  });
}

int cmd_ablate(const CommandOptions& o) {
  return guarded(o, "ablate", [&] {
    const ExperimentConfig cfg = load_with_overrides(o);
    const auto table = ablate(cfg, base_dir_of(o), ablation_threads());
    if (!o.quiet) {
      out_of(o) << format_ablation_table(table) << "run directory: " << table.run_dir.string()
                << "\n";
    }
    return kExitOk;
  });
}

int cmd_check_theorem(const CommandOptions& o) {
  return guarded(o, "check-theorem", [&] {
    const ExperimentConfig cfg = load_with_overrides(o);
    const auto outcome = check_theorem(cfg, base_dir_of(o));
    if (!o.quiet) {
      auto& os = out_of(o);
      os << std::setprecision(10);
      for (const auto& t : outcome.trials) {
        const auto& r = t.report;
        os << "seed " << t.seed << ": lhs=" << r.lhs << " rhs=" << r.rhs
           << " sum_eta=" << r.sum_eta << " l_hat=" << r.lipschitz / cfg.theorem.inflation
           << " satisfied=" << (r.satisfied ? "yes" : "no") << " ("
           << (r.strict_mode ? "strict" : "paired") << ")\n";
        os << "  paired runs: lhs=" << r.paired_lhs << " rhs=" << r.paired_rhs
           << " satisfied=" << (r.paired_satisfied ? "yes" : "no") << "\n";
      }
      const auto& last = outcome.trials.back().report;
      os << "eta summable: " << (last.eta_finite ? "yes" : "no") << "\n";
      os << "noise schedule diminishing: " << (last.diminishing ? "yes" : "no") << "\n";
      os << "bound " << (outcome.satisfied ? "holds" : "VIOLATED") << "\n";
      os << "run directory: " << outcome.run_dir.string() << "\n";
    }
    return outcome.satisfied ? kExitOk : kExitBoundViolated;
  });
}

int cmd_synthesize(const CommandOptions& o) {
  return guarded(o, "synthesize", [&] {
    const auto start = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = load_with_overrides(o);
    const Problem problem = prepare_problem(cfg, base_dir_of(o));
    const fs::path dir = make_run_directory(output_base(cfg, base_dir_of(o)), cfg.output.name);
    save_tensor(dir / "measurement.pnpt", problem.y);
    if (problem.x_true) save_tensor(dir / "ground_truth.pnpt", *problem.x_true);
    json record;
    record["config"] = json::parse(to_json_text(cfg));
    record["measurement"] = "measurement.pnpt";
    record["metadata"] = metadata_json("synthesize", seconds_since(start));
    write_json(dir / "record.json", record);
    if (!o.quiet) out_of(o) << "run directory: " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_denoise_serve_echo(const std::string& socket_path, std::size_t max_connections,
                           bool quiet) {
  CommandOptions o;
  o.quiet = quiet;
  return guarded(o, "denoise-serve-echo", [&] {
    const DenoiseHandler echo = [](const Tensor& v, double) { return v; };
    if (socket_path.empty()) {
      serve_denoiser(0, 1, echo);
    } else {
      if (!quiet) std::cerr << "serving on " << socket_path << "\n";
      serve_denoiser_socket(socket_path, echo, max_connections);
    }
    return kExitOk;
  });
}

}  // namespace pnpcm
