#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pnpcm/config.hpp"
#include "pnpcm/engine.hpp"
#include "pnpcm/metrics.hpp"

namespace pnpcm {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitDivergence = 2,
  kExitIo = 3,
  kExitBoundViolated = 4,
};

struct CommandOptions {
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed;          // overrides task.seed
  std::optional<std::filesystem::path> out;   // overrides output.dir
  bool quiet = false;
  std::ostream* out_stream = nullptr;  // defaults to std::cout
  std::ostream* err_stream = nullptr;  // defaults to std::cerr
};

// One inverse problem instance: forward operator, measurement and, when
// available, the ground truth.
struct Problem {
  OperatorPtr op;
  Tensor y;
  std::optional<Tensor> x_true;
  RngSeed run_seed;
  std::string source;  // image path or "shape"
};

// Seeds are derived in a fixed order from task.seed: operator pattern,
// measurement noise, then the solver stream.
Problem prepare_problem(const ExperimentConfig& cfg, const std::filesystem::path& base_dir,
                        const std::optional<std::filesystem::path>& image_override = std::nullopt,
                        std::optional<std::uint64_t> seed_override = std::nullopt);

RunConfig make_run_config(const ExperimentConfig& cfg, const Problem& problem,
                          DenoiserPtr denoiser);

// Creates <base>/<name>-<UTC timestamp>, adding a numeric suffix when the
// directory already exists. Never reuses a directory.
std::filesystem::path make_run_directory(const std::filesystem::path& base, const std::string& name);

struct ReconstructOutcome {
  std::filesystem::path run_dir;
  RunResult result;
  std::optional<MetricReport> metrics;
};

ReconstructOutcome reconstruct(const ExperimentConfig& cfg, const std::filesystem::path& base_dir);

struct AblationSummaryRow {
  bool noise_injection = false;
  bool momentum = false;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  int runs = 0;
  int denoiser_calls = 0;  // per run
  int linear_solves = 0;   // per run
  std::vector<double> psnr;  // per image, in image order
  std::vector<double> ssim;
};

struct AblationTable {
  std::vector<std::string> images;
  std::vector<AblationSummaryRow> rows;  // (off, off), (on, off), (off, on), (on, on)
  std::filesystem::path run_dir;
};

// Image i of the sorted directory listing runs with seed task.seed + i.
// Images are processed on up to `threads` workers.
AblationTable ablate(const ExperimentConfig& cfg, const std::filesystem::path& base_dir,
                     unsigned threads);

// Worker cap from PNP_CM_NUM_THREADS, defaulting to the hardware concurrency.
unsigned ablation_threads();

std::string format_ablation_table(const AblationTable& table);
std::string ablation_table_json(const AblationTable& table);

struct TheoremTrial {
  std::uint64_t seed = 0;
  BoundReport report;
};

struct TheoremOutcome {
  std::vector<TheoremTrial> trials;
  double l_hat = 0.0;
  bool satisfied = false;
  std::filesystem::path run_dir;
};

TheoremOutcome check_theorem(const ExperimentConfig& cfg, const std::filesystem::path& base_dir);

int cmd_reconstruct(const CommandOptions& options);
int cmd_ablate(const CommandOptions& options);
int cmd_check_theorem(const CommandOptions& options);
int cmd_synthesize(const CommandOptions& options);
// Echo server for protocol testing: stdio when `socket_path` is empty.
int cmd_denoise_serve_echo(const std::string& socket_path, std::size_t max_connections,
                           bool quiet);

}  // namespace pnpcm
