// pnp_cm: plug-and-play ADMM reconstructions, ablations and bound checks.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pnpcm/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Plug-and-play ADMM solver with noise injection and momentum"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "Experiment config (JSON)")->required();
    cmd->add_option("--seed", seed, "Override task.seed");
    cmd->add_option("--out", out, "Override output.dir");
    cmd->add_flag("--quiet", quiet, "Suppress progress output");
  };
  auto* reconstruct = app.add_subcommand("reconstruct", "Run one reconstruction");
  auto* ablate = app.add_subcommand("ablate", "Noise-injection x momentum grid over a directory");
  auto* check = app.add_subcommand("check-theorem", "Paired runs and the residual bound");
  auto* synthesize = app.add_subcommand("synthesize", "Write the synthesized measurement only");
  for (auto* cmd : {reconstruct, ablate, check, synthesize}) add_common(cmd);

  auto* serve = app.add_subcommand("denoise-serve-echo", "Echo server for the denoiser protocol");
  std::string socket_path;
  std::size_t max_connections = 0;
  serve->add_option("--socket", socket_path, "Listen on a unix socket instead of stdio");
  serve->add_option("--max-connections", max_connections, "Exit after this many sessions");
  serve->add_flag("--quiet", quiet, "Suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pnpcm::kExitConfig;
  }

  pnpcm::CommandOptions options;
  options.config_path = config;
  options.seed = seed;
  if (out) options.out = *out;
  options.quiet = quiet;

  if (*reconstruct) return pnpcm::cmd_reconstruct(options);
  if (*ablate) return pnpcm::cmd_ablate(options);
  if (*check) return pnpcm::cmd_check_theorem(options);
  if (*synthesize) return pnpcm::cmd_synthesize(options);
  return pnpcm::cmd_denoise_serve_echo(socket_path, max_connections, quiet);
}
