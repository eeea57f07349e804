#include "pnpcm/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pnpcm/error.hpp"
#include "pnpcm/io.hpp"

namespace pnpcm {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object that remembers which keys were consumed,
// so that leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string key_path(const std::string& key) const { return path_ + "." + key; }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required key '" + key_path(key) + "'");
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number()) type_error(key, "a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_integer()) type_error(key, "an integer");
    return v.get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) type_error(key, "a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) type_error(key, "true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) type_error(key, "a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    if (!has(key)) return {};
    const json& v = raw(key);
    if (!v.is_array()) type_error(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) type_error(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key) {
    if (!has(key)) return {};
    const json& v = raw(key);
    if (!v.is_array()) type_error(key, "an array of non-negative integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) type_error(key, "an array of non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key) {
    if (!has(key)) return {};
    const json& v = raw(key);
    if (!v.is_array()) type_error(key, "an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) type_error(key, "an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  Section child(const std::string& key) { return Section(raw(key), key_path(key)); }

  // Every key present must have been consumed.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key_path(key) + "'");
    }
  }

 private:
  [[noreturn]] void type_error(const std::string& key, const char* want) const {
    throw ConfigError("'" + key_path(key) + "' must be " + want);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check_choice(const std::string& value, const std::vector<std::string>& allowed,
                  const std::string& key) {
  for (const auto& a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
  throw ConfigError("'" + key + "' must be one of {" + list + "}, got '" + value + "'");
}

OperatorConfig parse_operator(Section s) {
  OperatorConfig c;
  s.require("kind");
  c.kind = s.string("kind", "");
  check_choice(c.kind, {"identity", "mask", "blur", "downsample", "fourier"}, s.key_path("kind"));
  if (c.kind == "mask") {
    c.mask_file = s.string("mask_file", "");
    if (c.mask_file.empty()) {
      s.require("keep_fraction");
      c.keep_fraction = s.number("keep_fraction", 0.0);
      if (!(c.keep_fraction > 0.0 && c.keep_fraction <= 1.0)) {
        throw ConfigError("'" + s.key_path("keep_fraction") + "' must be in (0, 1]");
      }
    }
  } else if (c.kind == "blur") {
    c.kernel = s.numbers("kernel");
    if (c.kernel.empty()) {
      s.require("sigma");
      c.blur_sigma = s.number("sigma", 0.0);
      c.kernel_size = s.unsigned_integer("kernel_size", 0);
      if (!(c.blur_sigma > 0.0)) throw ConfigError("'" + s.key_path("sigma") + "' must be > 0");
      if (c.kernel_size == 0) {
        c.kernel_size = 2 * static_cast<std::size_t>(std::ceil(3.0 * c.blur_sigma)) + 1;
      }
    }
    c.boundary = s.string("boundary", "circular");
    check_choice(c.boundary, {"circular", "reflect"}, s.key_path("boundary"));
  } else if (c.kind == "downsample") {
    s.require("factor");
    c.factor = s.unsigned_integer("factor", 0);
    if (c.factor == 0) throw ConfigError("'" + s.key_path("factor") + "' must be >= 1");
    c.method = s.string("method", "block_average");
    check_choice(c.method, {"block_average", "bicubic"}, s.key_path("method"));
  } else if (c.kind == "fourier") {
    s.require("acceleration");
    s.require("acs_lines");
    c.acceleration = s.unsigned_integer("acceleration", 0);
    c.acs_lines = s.unsigned_integer("acs_lines", 0);
    c.coils = s.unsigned_integer("coils", 1);
    c.sampling_file = s.string("sampling_file", "");
    if (c.acceleration == 0) throw ConfigError("'" + s.key_path("acceleration") + "' must be >= 1");
    if (c.coils == 0) throw ConfigError("'" + s.key_path("coils") + "' must be >= 1");
  }
  s.finish();
  return c;
}

TaskConfig parse_task(Section s) {
  TaskConfig c;
  s.require("operator");
  c.op = parse_operator(s.child("operator"));
  c.image = s.string("image", "");
  c.images_dir = s.string("images_dir", "");
  c.measurement = s.string("measurement", "");
  c.shape = s.sizes("shape");
  c.sigma_y = s.number("sigma_y", 0.0);
  c.seed = s.unsigned_integer("seed", 0);
  if (!(c.sigma_y >= 0.0)) throw ConfigError("'" + s.key_path("sigma_y") + "' must be >= 0");
  if (c.image.empty() && c.images_dir.empty() && c.shape.empty()) {
    throw ConfigError("missing required key 'task.image' (or 'task.images_dir' / 'task.shape')");
  }
  s.finish();
  return c;
}

DenoiserConfig parse_denoiser(Section s) {
  DenoiserConfig c;
  s.require("kind");
  c.kind = s.string("kind", "");
  check_choice(c.kind,
               {"identity", "gaussian_smooth", "median", "tv_prox", "soft_threshold_dct", "external"},
               s.key_path("kind"));
  if (c.kind != "identity" && c.kind != "external") {
    c.scale = s.number("scale", 1.0);
    if (!(c.scale >= 0.0)) throw ConfigError("'" + s.key_path("scale") + "' must be >= 0");
  }
  if (c.kind == "gaussian_smooth") {
    c.boundary = s.string("boundary", "circular");
    check_choice(c.boundary, {"circular", "reflect"}, s.key_path("boundary"));
  } else if (c.kind == "tv_prox") {
    c.max_iters = static_cast<int>(s.integer("max_iters", 50));
    c.rel_tol = s.number("rel_tol", 1e-6);
    if (c.max_iters < 1) throw ConfigError("'" + s.key_path("max_iters") + "' must be >= 1");
  } else if (c.kind == "external") {
    c.command = s.strings("command");
    c.socket = s.string("socket", "");
    c.timeout_s = s.number("timeout_s", 60.0);
    if (c.command.empty() == c.socket.empty()) {
      throw ConfigError("'" + s.key_path("command") + "' or '" + s.key_path("socket") +
                        "' must be given (exactly one)");
    }
    if (!(c.timeout_s > 0.0)) throw ConfigError("'" + s.key_path("timeout_s") + "' must be > 0");
  }
  s.finish();
  return c;
}

SequenceConfig parse_sequence(Section& s, const std::string& key, SequenceConfig fallback) {
  SequenceConfig c;
  c.values = s.numbers(key);
  const std::string rule_key = key + "_rule";
  if (s.has(rule_key)) {
    Section r = s.child(rule_key);
    r.require("kind");
    c.rule = r.string("kind", "");
    check_choice(c.rule, {"geometric", "constant"}, r.key_path("kind"));
    if (c.rule == "geometric") {
      r.require("start");
      r.require("decay");
      c.start = r.number("start", 0.0);
      c.decay = r.number("decay", 1.0);
    } else {
      r.require("value");
      c.value = r.number("value", 0.0);
    }
    r.finish();
  }
  return c.specified() ? c : fallback;
}

ScheduleConfig parse_schedule(Section s) {
  ScheduleConfig c;
  s.require("n_steps");
  c.n_steps = static_cast<int>(s.integer("n_steps", 0));
  if (c.n_steps < 1) throw ConfigError("'schedule.n_steps' must be >= 1");
  SequenceConfig t_default;
  t_default.rule = "geometric";
  t_default.start = 1.0;
  t_default.decay = 0.6;
  SequenceConfig rho_default;
  rho_default.rule = "constant";
  rho_default.value = 1.0;
  SequenceConfig beta_default;
  beta_default.rule = "constant";
  beta_default.value = 0.0;
  c.t = parse_sequence(s, "t", t_default);
  c.rho = parse_sequence(s, "rho", rho_default);
  c.beta = parse_sequence(s, "beta", beta_default);
  c.noise_std = parse_sequence(s, "noise_std", {});
  s.finish();
  return c;
}

SolverConfig parse_solver(Section s) {
  SolverConfig c;
  if (s.has("cg")) {
    Section cg = s.child("cg");
    c.cg.max_iters = static_cast<int>(cg.integer("max_iters", c.cg.max_iters));
    c.cg.rel_tol = cg.number("rel_tol", c.cg.rel_tol);
    c.cg.abs_tol = cg.number("abs_tol", c.cg.abs_tol);
    cg.finish();
  }
  c.noise_injection = s.boolean("noise_injection", true);
  c.momentum = s.boolean("momentum", true);
  c.divergence_guard = s.boolean("divergence_guard", false);
  c.history = s.string("history", "norms");
  check_choice(c.history, {"none", "norms", "full"}, s.key_path("history"));
  try {
    c.cg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("solver.cg: ") + e.what());
  }
  s.finish();
  return c;
}

OutputConfig parse_output(Section s) {
  OutputConfig c;
  c.dir = s.string("dir", c.dir);
  c.name = s.string("name", c.name);
  c.save_image = s.boolean("save_image", c.save_image);
  c.record_iterations = s.boolean("record_iterations", c.record_iterations);
  if (c.name.empty() || c.name.find('/') != std::string::npos) {
    throw ConfigError("'output.name' must be a non-empty file name");
  }
  s.finish();
  return c;
}

TheoremConfig parse_theorem(Section s) {
  TheoremConfig c;
  c.lipschitz_pairs = static_cast<int>(s.integer("lipschitz_pairs", c.lipschitz_pairs));
  c.perturbation = s.number("perturbation", c.perturbation);
  c.inflation = s.number("inflation", c.inflation);
  c.trials = static_cast<int>(s.integer("trials", c.trials));
  if (c.lipschitz_pairs < 1) throw ConfigError("'theorem.lipschitz_pairs' must be >= 1");
  if (!(c.perturbation > 0.0)) throw ConfigError("'theorem.perturbation' must be > 0");
  if (!(c.inflation >= 1.0)) throw ConfigError("'theorem.inflation' must be >= 1");
  if (c.trials < 1) throw ConfigError("'theorem.trials' must be >= 1");
  s.finish();
  return c;
}

// --- echo ----------------------------------------------------------------------------

json operator_json(const OperatorConfig& c) {
  json j;
  j["kind"] = c.kind;
  if (c.kind == "mask") {
    if (!c.mask_file.empty()) {
      j["mask_file"] = c.mask_file;
    } else {
      j["keep_fraction"] = c.keep_fraction;
    }
  } else if (c.kind == "blur") {
    if (!c.kernel.empty()) {
      j["kernel"] = c.kernel;
    } else {
      j["sigma"] = c.blur_sigma;
      j["kernel_size"] = c.kernel_size;
    }
    j["boundary"] = c.boundary;
  } else if (c.kind == "downsample") {
    j["factor"] = c.factor;
    j["method"] = c.method;
  } else if (c.kind == "fourier") {
    j["acceleration"] = c.acceleration;
    j["acs_lines"] = c.acs_lines;
    j["coils"] = c.coils;
    if (!c.sampling_file.empty()) j["sampling_file"] = c.sampling_file;
  }
  return j;
}

void sequence_json(json& j, const std::string& key, const SequenceConfig& c) {
  if (!c.values.empty()) j[key] = c.values;
  if (c.rule == "geometric") {
    j[key + "_rule"] = {{"kind", "geometric"}, {"start", c.start}, {"decay", c.decay}};
  } else if (c.rule == "constant") {
    j[key + "_rule"] = {{"kind", "constant"}, {"value", c.value}};
  }
}

json config_json(const ExperimentConfig& c) {
  json task;
  task["operator"] = operator_json(c.task.op);
  if (!c.task.image.empty()) task["image"] = c.task.image;
  if (!c.task.images_dir.empty()) task["images_dir"] = c.task.images_dir;
  if (!c.task.measurement.empty()) task["measurement"] = c.task.measurement;
  if (!c.task.shape.empty()) task["shape"] = c.task.shape;
  task["sigma_y"] = c.task.sigma_y;
  task["seed"] = c.task.seed;

  json den;
  den["kind"] = c.denoiser.kind;
  if (c.denoiser.kind != "identity" && c.denoiser.kind != "external") {
    den["scale"] = c.denoiser.scale;
  }
  if (c.denoiser.kind == "gaussian_smooth") den["boundary"] = c.denoiser.boundary;
  if (c.denoiser.kind == "tv_prox") {
    den["max_iters"] = c.denoiser.max_iters;
    den["rel_tol"] = c.denoiser.rel_tol;
  }
  if (c.denoiser.kind == "external") {
    if (!c.denoiser.command.empty()) den["command"] = c.denoiser.command;
    if (!c.denoiser.socket.empty()) den["socket"] = c.denoiser.socket;
    den["timeout_s"] = c.denoiser.timeout_s;
  }

  json sched;
  sched["n_steps"] = c.schedule.n_steps;
  sequence_json(sched, "t", c.schedule.t);
  sequence_json(sched, "rho", c.schedule.rho);
  sequence_json(sched, "beta", c.schedule.beta);
  sequence_json(sched, "noise_std", c.schedule.noise_std);

  json solver;
  solver["cg"] = {{"max_iters", c.solver.cg.max_iters},
                  {"rel_tol", c.solver.cg.rel_tol},
                  {"abs_tol", c.solver.cg.abs_tol}};
  solver["noise_injection"] = c.solver.noise_injection;
  solver["momentum"] = c.solver.momentum;
  solver["divergence_guard"] = c.solver.divergence_guard;
  solver["history"] = c.solver.history;

  json out;
  out["dir"] = c.output.dir;
  out["name"] = c.output.name;
  out["save_image"] = c.output.save_image;
  out["record_iterations"] = c.output.record_iterations;

  json thm;
  thm["lipschitz_pairs"] = c.theorem.lipschitz_pairs;
  thm["perturbation"] = c.theorem.perturbation;
  thm["inflation"] = c.theorem.inflation;
  thm["trials"] = c.theorem.trials;

  json j;
  j["task"] = task;
  j["denoiser"] = den;
  j["schedule"] = sched;
  j["solver"] = solver;
  j["output"] = out;
  j["theorem"] = thm;
  return j;
}

std::vector<double> resolve_sequence(const SequenceConfig& c, int n_steps, int first,
                                     const std::string& name) {
  const std::size_t want = static_cast<std::size_t>(n_steps - first + 1);
  if (!c.values.empty()) {
    if (c.values.size() != want) {
      throw ConfigError("'schedule." + name + "' has " + std::to_string(c.values.size()) +
                        " entries, expected " + std::to_string(want));
    }
    return c.values;
  }
  if (c.rule == "geometric") return Schedule::geometric(n_steps, c.start, c.decay, first);
  if (c.rule == "constant") return Schedule::constant(n_steps, c.value, first);
  return {};
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(j, "config");
  ExperimentConfig c;
  root.require("task");
  root.require("denoiser");
  root.require("schedule");
  c.task = parse_task(root.child("task"));
  c.denoiser = parse_denoiser(root.child("denoiser"));
  c.schedule = parse_schedule(root.child("schedule"));
  if (root.has("solver")) c.solver = parse_solver(root.child("solver"));
  if (root.has("output")) c.output = parse_output(root.child("output"));
  if (root.has("theorem")) c.theorem = parse_theorem(root.child("theorem"));
  root.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string to_json_text(const ExperimentConfig& config, int indent) {
  return config_json(config).dump(indent);
}

Schedule build_schedule(const ScheduleConfig& c) {
  Schedule s;
  s.time_points = resolve_sequence(c.t, c.n_steps, 0, "t");
  s.rho = resolve_sequence(c.rho, c.n_steps, 1, "rho");
  s.beta = resolve_sequence(c.beta, c.n_steps, 1, "beta");
  s.noise_std = resolve_sequence(c.noise_std, c.n_steps, 1, "noise_std");
  s.validate();
  return s;
}

bool operator_needs_complex(const OperatorConfig& config) { return config.kind == "fourier"; }

OperatorPtr build_operator(const OperatorConfig& c, const Shape& shape, Rng& rng,
                           const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  const Grid g = Grid::of(shape);
  const Boundary boundary = c.boundary == "reflect" ? Boundary::kReflect : Boundary::kCircular;
  try {
    if (c.kind == "identity") return make_identity(shape);
    if (c.kind == "mask") {
      MaskSpec spec;
      if (!c.mask_file.empty()) {
        const Tensor m = load_tensor(resolve(c.mask_file));
        if (m.numel() != g.h * g.w) {
          throw ShapeError("mask file " + c.mask_file + " has " + std::to_string(m.numel()) +
                           " entries, signal grid is " + std::to_string(g.h) + "x" +
                           std::to_string(g.w));
        }
        spec.h = g.h;
        spec.w = g.w;
        for (std::size_t i = 0; i < m.numel(); ++i) spec.keep.push_back(m.at(i) != 0.0 ? 1 : 0);
      } else {
        spec = MaskSpec::random(g.h, g.w, c.keep_fraction, rng);
      }
      return std::make_shared<MaskOperator>(shape, std::move(spec));
    }
    if (c.kind == "blur") {
      BlurSpec spec = c.kernel.empty() ? BlurSpec::gaussian(c.kernel_size, c.blur_sigma, boundary)
                                       : BlurSpec{c.kernel, boundary};
      return std::make_shared<BlurOperator>(shape, std::move(spec));
    }
    if (c.kind == "downsample") {
      DownsampleSpec spec{c.factor, c.method == "bicubic" ? DownsampleMethod::kBicubic
                                                          : DownsampleMethod::kBlockAverage};
      return std::make_shared<DownsampleOperator>(shape, spec);
    }
    if (c.kind == "fourier") {
      FourierSubsampleSpec spec;
      if (!c.sampling_file.empty()) {
        const Tensor m = load_tensor(resolve(c.sampling_file));
        for (std::size_t i = 0; i < m.numel(); ++i) {
          spec.sample_mask.push_back(m.at(i) != 0.0 ? 1 : 0);
        }
        spec.acs_lines = c.acs_lines;
        spec.acceleration = c.acceleration;
      } else {
        spec = FourierSubsampleSpec::random_lines(g.h, c.acceleration, c.acs_lines, rng);
      }
      if (c.coils > 1) spec.coil_sensitivities = make_coil_maps(c.coils, g.h, g.w);
      return std::make_shared<FourierSubsampleOperator>(shape, std::move(spec));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError("task.operator (" + c.kind + "): " + e.what());
  }
  throw ConfigError("unknown operator kind '" + c.kind + "'");
}

DenoiserPtr build_denoiser(const DenoiserConfig& c) {
  const SigmaBehavior sigma{c.scale};
  if (c.kind == "identity") return std::make_shared<IdentityDenoiser>();
  if (c.kind == "gaussian_smooth") {
    return std::make_shared<GaussianSmoothDenoiser>(
        sigma, c.boundary == "reflect" ? Boundary::kReflect : Boundary::kCircular);
  }
  if (c.kind == "median") return std::make_shared<MedianDenoiser>(sigma);
  if (c.kind == "tv_prox") {
    return std::make_shared<TvProxDenoiser>(sigma, TvProxOptions{c.max_iters, c.rel_tol});
  }
  if (c.kind == "soft_threshold_dct") return std::make_shared<SoftThresholdDctDenoiser>(sigma);
  if (c.kind == "external") {
    return std::make_shared<ExternalDenoiser>(
        ExternalDenoiserConfig{c.command, c.socket, c.timeout_s});
  }
  throw ConfigError("unknown denoiser kind '" + c.kind + "'");
}

HistoryMode parse_history_mode(const std::string& name) {
  if (name == "none") return HistoryMode::kNone;
  if (name == "norms") return HistoryMode::kNorms;
  if (name == "full") return HistoryMode::kFull;
  throw ConfigError("unknown history mode '" + name + "'");
}

}  // namespace pnpcm
