#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pnpcm/denoisers.hpp"
#include "pnpcm/engine.hpp"
#include "pnpcm/linsolve.hpp"
#include "pnpcm/operators.hpp"

namespace pnpcm {

// Experiment description read from a JSON document with the sections
// task, denoiser, schedule, solver, output and (optionally) theorem.
// Unknown keys anywhere are errors.

struct OperatorConfig {
  std::string kind;  // identity | mask | blur | downsample | fourier

  // mask: either a random pattern or a tensor file (nonzero = kept)
  double keep_fraction = 0.0;
  std::string mask_file;

  // blur: explicit odd-length kernel or a Gaussian
  std::vector<double> kernel;
  std::size_t kernel_size = 0;
  double blur_sigma = 0.0;
  std::string boundary = "circular";

  // downsample
  std::size_t factor = 0;
  std::string method = "block_average";

  // fourier
  std::size_t acceleration = 0;
  std::size_t acs_lines = 0;
  std::size_t coils = 1;
  std::string sampling_file;  // per-row sampling pattern, overrides the random draw

  bool operator==(const OperatorConfig&) const = default;
};

struct TaskConfig {
  OperatorConfig op;
  std::string image;        // ground truth (PNM or tensor file)
  std::string images_dir;   // ablate: directory of ground-truth images
  std::string measurement;  // preacquired y (tensor file); skips synthesis
  std::vector<std::size_t> shape;  // signal shape when no image is given
  double sigma_y = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const TaskConfig&) const = default;
};

struct DenoiserConfig {
  std::string kind;  // identity | gaussian_smooth | median | tv_prox | soft_threshold_dct | external
  double scale = 1.0;
  std::string boundary = "circular";  // gaussian_smooth
  int max_iters = 50;                 // tv_prox
  double rel_tol = 1e-6;              // tv_prox
  std::vector<std::string> command;   // external
  std::string socket;                 // external
  double timeout_s = 60.0;            // external

  bool operator==(const DenoiserConfig&) const = default;
};

// A per-iteration sequence: explicit values, a generator rule, or both (the
// explicit values win).
struct SequenceConfig {
  std::vector<double> values;
  std::string rule;  // "" | geometric | constant
  double start = 0.0;
  double decay = 1.0;
  double value = 0.0;

  bool specified() const { return !values.empty() || !rule.empty(); }
  bool operator==(const SequenceConfig&) const = default;
};

struct ScheduleConfig {
  int n_steps = 0;
  SequenceConfig t;          // t_0 .. t_N
  SequenceConfig rho;        // rho_1 .. rho_N
  SequenceConfig beta;       // beta_1 .. beta_N
  SequenceConfig noise_std;  // s_1 .. s_N; unspecified means s_n = t_n

  bool operator==(const ScheduleConfig&) const = default;
};

struct SolverConfig {
  CgConfig cg;
  bool noise_injection = true;
  bool momentum = true;
  bool divergence_guard = false;
  std::string history = "norms";  // none | norms | full

  bool operator==(const SolverConfig& o) const {
    return cg.max_iters == o.cg.max_iters && cg.rel_tol == o.cg.rel_tol &&
           cg.abs_tol == o.cg.abs_tol && noise_injection == o.noise_injection &&
           momentum == o.momentum && divergence_guard == o.divergence_guard &&
           history == o.history;
  }
};

struct OutputConfig {
  std::string dir = "runs";
  std::string name = "run";
  bool save_image = true;
  bool record_iterations = true;

  bool operator==(const OutputConfig&) const = default;
};

struct TheoremConfig {
  int lipschitz_pairs = 50;
  double perturbation = 1e-3;
  double inflation = 1.1;
  int trials = 1;

  bool operator==(const TheoremConfig&) const = default;
};

struct ExperimentConfig {
  TaskConfig task;
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  SolverConfig solver;
  OutputConfig output;
  TheoremConfig theorem;

  bool operator==(const ExperimentConfig&) const = default;
};

// Throws ConfigError naming the offending key on missing, unknown or
// ill-typed entries. Relative paths are kept as written.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON document; parse_config(to_json_text(c)) == c.
std::string to_json_text(const ExperimentConfig& config, int indent = 2);

// Resolves generator rules into explicit arrays and validates lengths.
Schedule build_schedule(const ScheduleConfig& config);

// Builds the forward operator on `signal_shape`, drawing random patterns
// from `rng`. Paths are resolved against `base_dir`.
OperatorPtr build_operator(const OperatorConfig& config, const Shape& signal_shape, Rng& rng,
                           const std::filesystem::path& base_dir = {});

DenoiserPtr build_denoiser(const DenoiserConfig& config);

HistoryMode parse_history_mode(const std::string& name);

// Operators that act on complex images need complex signals.
bool operator_needs_complex(const OperatorConfig& config);

}  // namespace pnpcm
