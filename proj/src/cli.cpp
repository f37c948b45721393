#include "sncp/cli.hpp"

#include <fmt/format.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <climits>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "sncp/error.hpp"
#include "sncp/metrics.hpp"
#include "sncp/solvers.hpp"
#include "sncp/synthetic.hpp"
#include "sncp/tensor_io.hpp"

#ifndef SNCP_VERSION
#define SNCP_VERSION "unknown"
#endif

namespace fs = std::filesystem;

namespace sncp {
namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::system_clock;

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Options whose values are file paths; the manifest records them absolute.
const std::set<std::string> kPathOptions{"--input", "--truth", "--signals", "--pin-iters"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string utc_timestamp(Clock::time_point t) {
  const std::time_t secs = Clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count() % 1000;
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, ms);
}

/// Finite doubles as numbers, everything else as null.
Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

/// Shortest text that parses back to the same double.
std::string format_double(double v) { return fmt::format("{}", v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Output directory assembled in a hidden sibling and moved into place only
/// by commit(), so a failed command leaves nothing behind.
class StagedDir {
 public:
  explicit StagedDir(const fs::path& target) : target_(target.lexically_normal()) {
    if (target_.filename().empty()) target_ = target_.parent_path();
    const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
    stage_ = parent / fmt::format(".{}.partial-{}", target_.filename().string(), ::getpid());
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }

  fs::path file(const std::string& name) {
    names_.push_back(name);
    return stage_ / name;
  }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

  void commit() {
    fs::create_directories(target_);
    for (const auto& n : names_) fs::rename(stage_ / n, target_ / n);
    fs::remove_all(stage_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path stage_;
  std::vector<std::string> names_;
  bool committed_ = false;
};

/// Values given on the command line win; the file only fills options left unset.
void apply_config_file(CLI::App* sub, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot open " + path.string());
  for (const auto& [key, value] : parse_flat_config(in, path.string())) {
    if (key == "config") throw ConfigError(path.string() + ": 'config' cannot be set from a config file");
    CLI::Option* o = sub->get_option_no_throw("--" + key);
    if (o == nullptr) throw ConfigError(path.string() + ": unknown key '" + key + "'");
    if (o->count() > 0) continue;
    // Lists may be written "a, b, c".
    std::string joined;
    std::string_view rest = value;
    for (bool first = true;; first = false) {
      const auto comma = rest.find(',');
      joined += (first ? "" : ",") + trim(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    o->add_result(joined);
    o->run_callback();
  }
}

/// Fully resolved command line: subcommand, positionals and every option that
/// was set (on the command line or by a config file), paths made absolute.
std::vector<std::string> canonical_argv(CLI::App* sub) {
  std::vector<std::string> argv{sub->get_name()};
  for (const CLI::Option* o : sub->get_options()) {
    if (o->count() == 0) continue;
    const std::string name = o->get_name();
    if (name == "--help" || name == "--config" || name == "--out") continue;
    std::vector<std::string> values = o->results();
    const bool positional = name.rfind("--", 0) != 0;
    if (positional || kPathOptions.count(name) > 0) {
      for (auto& v : values) v = fs::absolute(v).lexically_normal().string();
    }
    if (positional) {
      argv.insert(argv.end(), values.begin(), values.end());
      continue;
    }
    argv.push_back(name);
    if (o->get_expected_max() == 0) continue;  // flag
    std::string joined;
    for (std::size_t i = 0; i < values.size(); ++i) joined += (i ? "," : "") + values[i];
    argv.push_back(joined);
  }
  return argv;
}

/// Positive number or "inf".
const CLI::Validator kPositiveOrInf(
    [](std::string& v) -> std::string {
      char* end = nullptr;
      const double d = std::strtod(v.c_str(), &end);
      if (end == v.c_str() || *end != '\0' || !(d > 0.0)) return "Value " + v + " is not a positive number or inf";
      return {};
    },
    "POSITIVE|inf");

std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

struct SolverFlags {
  std::string method = std::string(to_string(Method::ANLS_BPP));
  std::size_t rank = 10;
  std::vector<double> alpha{1e-6};
  std::vector<double> beta{0.0};
  double epsilon = 1e-8;
  std::string stop_rule = std::string(to_string(StopRule::relerr_change));
  std::size_t max_iters = 10000;
  double max_seconds = kInf;
  std::uint64_t seed = 0;
  double mu_floor = 1e-16;
  double mu_init_offset = 1e-9;
  double apg_delta_omega = 0.9999;
  double nnls_tol = 1e-10;

  CLI::Option* seed_option = nullptr;
  CLI::Option* epsilon_option = nullptr;
  CLI::Option* max_seconds_option = nullptr;

  void add_to(CLI::App* sub, bool single_run) {
    if (single_run) {
      sub->add_option("--method", method, "mu, als, hals, apg, anls-as or anls-bpp")->capture_default_str();
      sub->add_option("--beta", beta, "L1 weights, one value or one per mode (comma separated)")
          ->delimiter(',')
          ->capture_default_str();
    }
    sub->add_option("--rank", rank, "Number of components R")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--alpha", alpha, "Ridge weights, one value or one per mode (comma separated)")
        ->delimiter(',')
        ->capture_default_str();
    epsilon_option =
        sub->add_option("--epsilon", epsilon, "Stopping tolerance")->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--stop-rule", stop_rule, "relerr_change or objective_change")->capture_default_str();
    sub->add_option("--max-iters", max_iters, "Sweep limit")->check(CLI::PositiveNumber)->capture_default_str();
    max_seconds_option = sub->add_option("--max-seconds", max_seconds, "Wall-clock limit per run (inf = none)")
                             ->check(kPositiveOrInf)
                             ->capture_default_str();
    seed_option = sub->add_option("--seed", seed, "Random seed (drawn from entropy when absent)");
    sub->add_option("--mu-floor", mu_floor, "MU denominator floor")->capture_default_str();
    sub->add_option("--mu-init-offset", mu_init_offset, "Offset added to the MU starting point")->capture_default_str();
    sub->add_option("--apg-delta-omega", apg_delta_omega, "APG extrapolation safeguard")->capture_default_str();
    sub->add_option("--nnls-tol", nnls_tol, "NNLS optimality tolerance")->capture_default_str();
  }

  /// Draws and records a seed when none was given.
  void ensure_seed() {
    if (seed_option->count() > 0) return;
    seed = entropy_seed();
    seed_option->add_result(std::to_string(seed));
  }

  [[nodiscard]] SolverConfig to_config() const {
    SolverConfig cfg;
    cfg.method = parse_method(method);
    cfg.rank = rank;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.stop_epsilon = epsilon;
    cfg.stop_rule = parse_stop_rule(stop_rule);
    cfg.max_iters = max_iters;
    cfg.max_seconds = max_seconds;
    cfg.rng_seed = seed;
    cfg.mu_floor = mu_floor;
    cfg.mu_init_offset = mu_init_offset;
    cfg.apg_delta_omega = apg_delta_omega;
    cfg.nnls_tol = nnls_tol;
    return cfg;
  }
};

Json config_json(const SolverConfig& cfg) {
  return Json{{"method", to_string(cfg.method)},
              {"rank", cfg.rank},
              {"alpha", cfg.alpha},
              {"beta", cfg.beta},
              {"stop_epsilon", cfg.stop_epsilon},
              {"stop_rule", to_string(cfg.stop_rule)},
              {"max_iters", cfg.max_iters},
              {"max_seconds", number_or_null(cfg.max_seconds)},
              {"rng_seed", cfg.rng_seed},
              {"mu_floor", cfg.mu_floor},
              {"mu_init_offset", cfg.mu_init_offset},
              {"apg_delta_omega", cfg.apg_delta_omega},
              {"nnls_tol", cfg.nnls_tol}};
}

Json shape_json(const Shape& s) { return Json(std::vector<std::size_t>(s.begin(), s.end())); }

struct InputFile {
  fs::path path;
  std::string digest;
};

InputFile input_file(const fs::path& p) {
  return {fs::absolute(p).lexically_normal(), fnv1a64_file(p)};
}

/// Everything a manifest needs besides the command-specific sections.
struct RunInfo {
  std::vector<std::string> argv;
  std::vector<std::string> replay_argv;
  Clock::time_point started;
  std::vector<InputFile> inputs;
};

void write_manifest(StagedDir& stage, const std::string& command, const RunInfo& info, Json config, Json result) {
  const auto finished = Clock::now();
  Json inputs = Json::array();
  for (const auto& in : info.inputs) inputs.push_back({{"path", in.path.string()}, {"fnv1a64", in.digest}});
  Json m{{"tool", "sncp"},
         {"version", SNCP_VERSION},
         {"command", command},
         {"argv", info.argv},
         {"replay_argv", info.replay_argv},
         {"config", std::move(config)},
         {"inputs", std::move(inputs)},
         {"started_at", utc_timestamp(info.started)},
         {"finished_at", utc_timestamp(finished)},
         {"wall_seconds", std::chrono::duration<double>(finished - info.started).count()},
         {"result", std::move(result)}};
  std::vector<std::string> outputs = stage.names();
  outputs.push_back("manifest.json");
  m["outputs"] = outputs;
  write_text(stage.file("manifest.json"), m.dump(2) + "\n");
}

fs::path require_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out: an output path is required");
  return fs::path(out);
}

// ---------------------------------------------------------------- decompose

struct DecomposeArgs {
  std::string input;
  std::string out;
  SolverFlags solver;
};

int cmd_decompose(DecomposeArgs& a, CLI::App* sub, RunInfo info, std::ostream& out) {
  if (a.input.empty()) throw ConfigError("decompose: an input tensor file is required");
  const fs::path out_dir = require_out(a.out);
  a.solver.ensure_seed();
  const SolverConfig cfg = a.solver.to_config();
  info.replay_argv = canonical_argv(sub);

  const DenseTensor x = read_dnt(fs::path(a.input));
  info.inputs.push_back(input_file(a.input));
  const DecompositionResult r = decompose(x, cfg);

  StagedDir stage(out_dir);
  for (std::size_t n = 0; n < r.factors.order(); ++n) {
    write_dnt(stage.file(fmt::format("factor_{}.dnt", n + 1)), r.factors[n]);
  }
  {
    std::ostringstream trace;
    write_trace_csv(trace, r.trace);
    write_text(stage.file("trace.csv"), trace.str());
  }
  const IterationTrace& last = r.trace.back();
  Json result{{"shape", shape_json(x.shape())},
              {"termination", to_string(r.termination)},
              {"iterations", r.iterations},
              {"objective", last.objective},
              {"ncp_objective", last.ncp_objective},
              {"rel_err", last.rel_err},
              {"fit", last.fit},
              {"initial_objective", r.initial_objective},
              {"apg_restarts", r.apg_restarts},
              {"solver_seconds", r.wall_seconds}};
  write_manifest(stage, "decompose", info, config_json(cfg), std::move(result));
  stage.commit();

  out << fmt::format("{} rank {} on {}: {} after {} sweeps, objective {:.6g}, rel_err {:.6g} -> {}\n",
                     to_string(cfg.method), cfg.rank, a.input, to_string(r.termination), r.iterations, last.objective,
                     last.rel_err, out_dir.string());
  return kExitOk;
}

// -------------------------------------------------------------------- synth

struct SynthArgs {
  std::string preset = "paper-3rd";
  double snr = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  std::string signals;
  std::string out;
  CLI::Option* snr_option = nullptr;
  CLI::Option* seed_option = nullptr;
};

int cmd_synth(SynthArgs& a, CLI::App* sub, RunInfo info, std::ostream& out) {
  const fs::path out_dir = require_out(a.out);
  if (a.seed_option->count() == 0) {
    a.seed = entropy_seed();
    a.seed_option->add_result(std::to_string(a.seed));
  }
  const Preset p = preset(a.preset);
  const double snr = a.snr_option->count() > 0 ? a.snr : p.snr_db;
  info.replay_argv = canonical_argv(sub);

  SyntheticSpec spec = make_spec(p, a.seed, snr);
  if (!a.signals.empty()) {
    spec.signals = read_dnt_matrix(a.signals);
    if (spec.signals.size() > 0 && spec.signals.minCoeff() < 0.0) throw DataError("--signals: entries must be >= 0");
    info.inputs.push_back(input_file(a.signals));
  }
  const SyntheticData d = generate_synthetic(spec);

  StagedDir stage(out_dir);
  write_dnt(stage.file("tensor.dnt"), d.tensor);
  for (std::size_t n = 0; n < d.truth.order(); ++n) {
    write_dnt(stage.file(fmt::format("truth_{}.dnt", n + 1)), d.truth[n]);
  }
  Json config{{"preset", p.name},
              {"snr_db", number_or_null(snr)},
              {"rng_seed", a.seed},
              {"signals", a.signals.empty() ? Json(nullptr) : Json(fs::absolute(a.signals).string())}};
  Json result{{"shape", shape_json(d.tensor.shape())},
              {"sources", d.truth.rank()},
              {"achieved_snr_db", number_or_null(d.achieved_snr_db)}};
  write_manifest(stage, "synth", info, std::move(config), std::move(result));
  stage.commit();

  std::string dims;
  for (std::size_t n = 0; n < d.tensor.order(); ++n) dims += (n ? "x" : "") + std::to_string(d.tensor.extent(n));
  out << fmt::format("{} tensor ({} sources, SNR {} dB) -> {}\n", dims, d.truth.rank(),
                     std::isfinite(d.achieved_snr_db) ? fmt::format("{:.3f}", d.achieved_snr_db) : "inf",
                     out_dir.string());
  return kExitOk;
}

// --------------------------------------------------------------------- grid

/// Splits one CSV line; fields may be double-quoted.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_csv_line(line));
  }
  return rows;
}

/// Sweep counts of an earlier grid's records; failed cells keep `fallback`.
std::vector<std::size_t> pinned_iterations_from(const fs::path& records, std::size_t fallback) {
  const auto rows = read_csv(read_text(records));
  if (rows.empty()) throw DataError(records.string() + ": empty records file");
  const auto& header = rows.front();
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(records.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t iters = col("iters");
  const std::size_t status = col("status");
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != header.size()) throw DataError(records.string() + ": malformed row " + std::to_string(i + 1));
    if (rows[i][status].rfind("error", 0) == 0) {
      out.push_back(fallback);
    } else {
      out.push_back(static_cast<std::size_t>(std::stoull(rows[i][iters])));
    }
  }
  return out;
}

struct GridArgs {
  std::string preset = "scaled-4th";
  double snr = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t data_seed = 0;
  std::string input;
  std::string truth;
  std::vector<std::string> methods;
  std::vector<double> betas{0.0, 0.1, 0.5, 1.0, 2.0, 3.0};
  std::size_t repeats = 1;
  std::size_t workers = 1;
  std::size_t signal_mode = 1;
  double threshold = kDefaultSparsityThreshold;
  std::string pin_iters;
  bool quiet = false;
  std::string out;
  SolverFlags solver;
  CLI::Option* snr_option = nullptr;
  CLI::Option* data_seed_option = nullptr;
  CLI::Option* preset_option = nullptr;

  GridArgs() {
    for (Method m : kAllMethods) methods.emplace_back(to_string(m));
  }
};

Json aggregate_json(const std::vector<AggregateRow>& rows, const ExperimentGrid& grid) {
  Json out_rows = Json::array();
  for (const auto& r : rows) {
    Json samples = Json::array();
    for (double s : r.psnr_samples) samples.push_back(s);
    double psnr_mean = std::numeric_limits<double>::quiet_NaN();
    if (!r.psnr_samples.empty()) {
      double sum = 0.0;
      for (double s : r.psnr_samples) sum += s;
      psnr_mean = sum / static_cast<double>(r.psnr_samples.size());
    }
    out_rows.push_back({{"method", to_string(r.method)},
                        {"beta", r.beta},
                        {"runs", r.runs},
                        {"failures", r.failures},
                        {"objective", number_or_null(r.objective)},
                        {"rel_err", number_or_null(r.rel_err)},
                        {"seconds", number_or_null(r.seconds)},
                        {"iters", number_or_null(r.iterations)},
                        {"sparsity", number_or_null(r.sparsity)},
                        {"components", number_or_null(r.components)},
                        {"psnr_db", number_or_null(psnr_mean)},
                        {"psnr_samples", std::move(samples)}});
  }
  return Json{{"threshold", grid.threshold}, {"signal_mode", grid.signal_mode + 1}, {"rows", std::move(out_rows)}};
}

int cmd_grid(GridArgs& a, CLI::App* sub, RunInfo info, std::ostream& out, std::ostream& err) {
  const fs::path out_dir = require_out(a.out);
  ExperimentGrid grid;
  for (const auto& m : a.methods) grid.methods.push_back(parse_method(m));
  grid.betas = a.betas;
  grid.repeats = a.repeats;
  grid.workers = a.workers;
  if (a.signal_mode < 1) throw ConfigError("--signal-mode: modes are numbered from 1");
  grid.signal_mode = a.signal_mode - 1;
  grid.threshold = a.threshold;

  const bool from_file = !a.input.empty();
  if (from_file && a.truth.empty()) throw ConfigError("--truth: required together with --input");
  if (from_file && a.preset_option->count() > 0) throw ConfigError("--preset: cannot be combined with --input");
  std::optional<Preset> p;
  if (!from_file) {
    p = preset(a.preset);
    // Unless overridden, runs use the preset's stopping limits.
    if (a.solver.epsilon_option->count() == 0) a.solver.epsilon_option->add_result(format_double(p->stop_epsilon));
    if (a.solver.max_seconds_option->count() == 0) {
      a.solver.max_seconds_option->add_result(format_double(p->max_seconds));
    }
    a.solver.epsilon_option->run_callback();
    a.solver.max_seconds_option->run_callback();
  }
  a.solver.ensure_seed();
  if (!from_file && a.data_seed_option->count() == 0) {
    a.data_seed = a.solver.seed;
    a.data_seed_option->add_result(std::to_string(a.data_seed));
  }
  grid.base = a.solver.to_config();
  grid.base_seed = a.solver.seed;
  info.replay_argv = canonical_argv(sub);
  if (!a.pin_iters.empty()) {
    grid.pinned_iterations = pinned_iterations_from(a.pin_iters, grid.base.max_iters);
    info.inputs.push_back(input_file(a.pin_iters));
  }

  DenseTensor x;
  Matrix reference;
  double snr = std::numeric_limits<double>::quiet_NaN();
  if (from_file) {
    x = read_dnt(fs::path(a.input));
    reference = read_dnt_matrix(a.truth);
    info.inputs.push_back(input_file(a.input));
    info.inputs.push_back(input_file(a.truth));
  } else {
    snr = a.snr_option->count() > 0 ? a.snr : p->snr_db;
    grid.validate(p->mixing_extents.size() + 1);  // fail fast, before building paper-scale data
    SyntheticData d = generate_synthetic(make_spec(*p, a.data_seed, snr));
    if (grid.signal_mode >= d.truth.order()) throw ConfigError("--signal-mode: out of range for the tensor order");
    reference = d.truth[grid.signal_mode];
    x = std::move(d.tensor);
  }

  const std::size_t total = grid.methods.size() * grid.betas.size() * grid.repeats;
  std::size_t done = 0;
  const GridResult result = run_grid(x, reference, grid, [&](const RunRecord& r) {
    ++done;
    if (a.quiet) return;
    if (r.ok) {
      err << fmt::format("[{}/{}] {} beta={} repeat={}: rel_err {:.4g}, components {}, {} sweeps, {:.1f} s ({})\n", done,
                         total, to_string(r.method), r.beta, r.repeat + 1, r.rel_err, r.components, r.iterations,
                         r.seconds, to_string(r.termination));
    } else {
      err << fmt::format("[{}/{}] {} beta={} repeat={}: error: {}\n", done, total, to_string(r.method), r.beta,
                         r.repeat + 1, r.error);
    }
  });

  StagedDir stage(out_dir);
  {
    std::ostringstream s;
    write_records_csv(s, result.records);
    write_text(stage.file("records.csv"), s.str());
  }
  {
    std::ostringstream s;
    write_aggregate_csv(s, result.aggregates);
    write_text(stage.file("aggregate.csv"), s.str());
  }
  write_text(stage.file("aggregate.json"), aggregate_json(result.aggregates, grid).dump(2) + "\n");

  Json methods = Json::array();
  for (Method m : grid.methods) methods.push_back(to_string(m));
  Json config{{"solver", config_json(grid.base)},
              {"methods", std::move(methods)},
              {"betas", grid.betas},
              {"repeats", grid.repeats},
              {"workers", grid.workers},
              {"signal_mode", grid.signal_mode + 1},
              {"threshold", grid.threshold},
              {"base_seed", grid.base_seed},
              {"data", from_file ? Json{{"input", fs::absolute(a.input).string()}, {"truth", fs::absolute(a.truth).string()}}
                                 : Json{{"preset", p->name}, {"snr_db", number_or_null(snr)}, {"seed", a.data_seed}}}};
  std::size_t failures = 0;
  std::size_t timed_out = 0;
  for (const auto& r : result.records) {
    failures += r.ok ? 0 : 1;
    timed_out += r.ok && r.termination == Termination::max_time ? 1 : 0;
  }
  Json summary{{"shape", shape_json(x.shape())},
               {"cells", result.records.size()},
               {"failures", failures},
               {"time_limited", timed_out},
               {"aggregate_rows", result.aggregates.size()}};
  write_manifest(stage, "grid", info, std::move(config), std::move(summary));
  stage.commit();

  out << fmt::format("{} cells ({} failed) -> {}\n", result.records.size(), failures, out_dir.string());
  return kExitOk;
}

// ------------------------------------------------------------------ metrics

struct MetricsArgs {
  std::string factors;
  std::string truth;
  std::size_t mode = 1;
  double threshold = kDefaultSparsityThreshold;
  std::string out;
};

FactorSet load_factors(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("cannot open " + p.string());
  if (!fs::is_directory(p)) return FactorSet(std::vector<Matrix>{read_dnt_matrix(p)});
  std::vector<Matrix> fs_;
  for (std::size_t n = 1;; ++n) {
    const fs::path f = p / fmt::format("factor_{}.dnt", n);
    if (!fs::exists(f)) break;
    fs_.push_back(read_dnt_matrix(f));
  }
  if (fs_.empty()) throw DataError(p.string() + ": no factor_1.dnt found");
  return FactorSet(std::move(fs_));
}

std::vector<fs::path> factor_files(const fs::path& p) {
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> out;
  for (std::size_t n = 1; fs::exists(p / fmt::format("factor_{}.dnt", n)); ++n) {
    out.push_back(p / fmt::format("factor_{}.dnt", n));
  }
  return out;
}

int cmd_metrics(MetricsArgs& a, CLI::App* sub, RunInfo info, std::ostream& out) {
  if (a.factors.empty()) throw ConfigError("metrics: a factor directory or matrix file is required");
  if (a.mode < 1) throw ConfigError("--mode: modes are numbered from 1");
  if (!(a.threshold > 0.0)) throw ConfigError("--threshold: must be > 0");
  info.replay_argv = canonical_argv(sub);

  const FactorSet f = load_factors(a.factors);
  for (const auto& p : factor_files(a.factors)) info.inputs.push_back(input_file(p));
  if (a.mode > f.order()) {
    throw ConfigError(fmt::format("--mode: {} exceeds the number of factors ({})", a.mode, f.order()));
  }
  const SparsityReport sr = sparsity_report(f, a.mode - 1, a.threshold);
  const Matrix& factor = f[a.mode - 1];
  const auto cols = nonzero_component_indices(factor, a.threshold);

  Json component_ids = Json::array();
  for (auto c : cols) component_ids.push_back(c + 1);
  Json report{{"threshold", a.threshold},
              {"mode", a.mode},
              {"sparsity", sr.per_factor_sparsity},
              {"nonzero_components", sr.nonzero_components},
              {"component_indices", std::move(component_ids)}};
  if (!a.truth.empty()) {
    const Matrix truth = read_dnt_matrix(a.truth);
    info.inputs.push_back(input_file(a.truth));
    Json pairs = Json::array();
    Json excluded = Json::array();
    double psnr_db = std::numeric_limits<double>::quiet_NaN();
    if (!cols.empty()) {
      const PsnrReport pr = psnr(select_columns(factor, cols), truth);
      psnr_db = pr.psnr_db;
      for (const auto& m : pr.matched_pairs) {
        pairs.push_back({{"estimated", cols[static_cast<std::size_t>(m.estimated)] + 1},
                         {"reference", m.reference + 1},
                         {"correlation", number_or_null(m.correlation)},
                         {"psnr_db", m.psnr_db}});
      }
      for (auto e : pr.excluded) excluded.push_back(cols[static_cast<std::size_t>(e)] + 1);
    } else if (truth.rows() != factor.rows()) {
      throw ShapeError(fmt::format("--truth: {} rows, factor has {}", truth.rows(), factor.rows()));
    }
    report["psnr_db"] = number_or_null(psnr_db);
    report["matched_pairs"] = std::move(pairs);
    report["excluded"] = std::move(excluded);
  } else {
    report["psnr_db"] = nullptr;
    report["matched_pairs"] = Json::array();
    report["excluded"] = Json::array();
  }

  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
    return kExitOk;
  }
  StagedDir stage(a.out);
  write_text(stage.file("metrics.json"), text);
  write_manifest(stage, "metrics", info, Json{{"mode", a.mode}, {"threshold", a.threshold}}, Json::object());
  stage.commit();
  out << fmt::format("{} of {} components nonzero -> {}\n", sr.nonzero_components, factor.cols(), a.out);
  return kExitOk;
}

// ------------------------------------------------------------------ signals

struct SignalsArgs {
  std::size_t length = 1000;
  std::size_t channels = 10;
  std::uint64_t seed = kSignalAssetSeed;
  std::string out;
};

int cmd_signals(const SignalsArgs& a, std::ostream& out) {
  const fs::path target = require_out(a.out);
  const Matrix s = generate_sparse_signals(static_cast<Eigen::Index>(a.length), static_cast<Eigen::Index>(a.channels),
                                           a.seed);
  const fs::path tmp = target.string() + fmt::format(".partial-{}", ::getpid());
  try {
    write_dnt(tmp, s);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  out << fmt::format("{} x {} sparse signals (seed {}) -> {}\n", a.length, a.channels, a.seed, target.string());
  return kExitOk;
}

// ------------------------------------------------------------------- replay

/// Columns and JSON keys holding wall-clock measurements.
const std::set<std::string> kTimingFields{"elapsed_seconds", "seconds"};

bool csv_equal_except_timing(const std::string& a, const std::string& b) {
  const auto ra = read_csv(a);
  const auto rb = read_csv(b);
  if (ra.size() != rb.size() || ra.empty()) return ra.size() == rb.size();
  const auto& header = ra.front();
  if (header != rb.front()) return false;
  for (std::size_t i = 1; i < ra.size(); ++i) {
    if (ra[i].size() != header.size() || rb[i].size() != header.size()) return false;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (kTimingFields.count(header[c]) > 0) continue;
      // A time cap stops the original run; the replay stops at the same sweep by count.
      if (header[c] == "status" && ra[i][c] == to_string(Termination::max_time)) continue;
      if (ra[i][c] != rb[i][c]) return false;
    }
  }
  return true;
}

void drop_timing(Json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (kTimingFields.count(it.key()) > 0) {
        it.value() = nullptr;
      } else {
        drop_timing(it.value());
      }
    }
  } else if (j.is_array()) {
    for (auto& v : j) drop_timing(v);
  }
}

enum class Comparison { identical, identical_except_timing, different, missing };

Comparison compare_outputs(const fs::path& original, const fs::path& replayed) {
  if (!fs::exists(original) || !fs::exists(replayed)) return Comparison::missing;
  const std::string a = read_text(original);
  const std::string b = read_text(replayed);
  if (a == b) return Comparison::identical;
  const std::string ext = original.extension().string();
  bool same = false;
  if (ext == ".csv") {
    same = csv_equal_except_timing(a, b);
  } else if (ext == ".json") {
    Json ja = Json::parse(a, nullptr, false);
    Json jb = Json::parse(b, nullptr, false);
    drop_timing(ja);
    drop_timing(jb);
    same = !ja.is_discarded() && ja == jb;
  }
  return same ? Comparison::identical_except_timing : Comparison::different;
}

/// Removes "--name value" pairs from a canonical argv.
void erase_option(std::vector<std::string>& argv, const std::string& name) {
  for (std::size_t i = 0; i < argv.size();) {
    if (argv[i] == name) {
      argv.erase(argv.begin() + static_cast<std::ptrdiff_t>(i),
                 argv.begin() + static_cast<std::ptrdiff_t>(std::min(i + 2, argv.size())));
    } else {
      ++i;
    }
  }
}

struct ReplayArgs {
  std::string manifest;
  std::string out;
  std::string compare;
  bool no_compare = false;
};

int cmd_replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path out_dir = require_out(a.out);
  const fs::path manifest_path(a.manifest);
  Json m = Json::parse(read_text(manifest_path), nullptr, false);
  if (m.is_discarded() || !m.contains("replay_argv") || !m.contains("command")) {
    throw DataError(manifest_path.string() + ": not an sncp manifest");
  }
  if (m.value("version", "") != SNCP_VERSION) {
    err << fmt::format("warning: manifest written by version {}, replaying with {}\n", m.value("version", "?"),
                       SNCP_VERSION);
  }
  for (const auto& in : m["inputs"]) {
    const fs::path p = in.at("path").get<std::string>();
    if (!fs::exists(p)) throw DataError("replay: input " + p.string() + " no longer exists");
    if (fnv1a64_file(p) != in.at("fnv1a64").get<std::string>()) {
      throw DataError("replay: input " + p.string() + " changed since the manifest was written");
    }
  }
  const fs::path original_dir = a.compare.empty() ? manifest_path.parent_path() : fs::path(a.compare);
  const std::string command = m["command"].get<std::string>();
  auto argv = m["replay_argv"].get<std::vector<std::string>>();

  // Runs cut short by the wall clock are replayed to the same sweep count.
  if (command == "decompose" && m["result"].value("termination", "") == to_string(Termination::max_time)) {
    erase_option(argv, "--max-iters");
    erase_option(argv, "--max-seconds");
    argv.insert(argv.end(), {"--max-iters", std::to_string(m["result"]["iterations"].get<std::size_t>())});
  }
  if (command == "grid" && m["result"].value("time_limited", 0) > 0) {
    const fs::path records = original_dir / "records.csv";
    if (!fs::exists(records)) {
      throw DataError("replay: " + records.string() + " is needed to replay time-limited cells");
    }
    erase_option(argv, "--pin-iters");
    argv.insert(argv.end(), {"--pin-iters", fs::absolute(records).string()});
  }
  argv.insert(argv.end(), {"--out", out_dir.string()});
  err << "replaying: sncp";
  for (const auto& s : argv) err << ' ' << s;
  err << '\n';
  const int code = run_cli(argv, out, err);
  if (code != kExitOk || a.no_compare) return code;

  bool all_same = true;
  for (const auto& name : m["outputs"].get<std::vector<std::string>>()) {
    if (name == "manifest.json") continue;  // timestamps always differ
    switch (compare_outputs(original_dir / name, out_dir / name)) {
      case Comparison::identical:
        out << "identical          " << name << '\n';
        break;
      case Comparison::identical_except_timing:
        out << "identical (timing) " << name << '\n';
        break;
      case Comparison::different:
        out << "DIFFERENT          " << name << '\n';
        all_same = false;
        break;
      case Comparison::missing:
        out << "MISSING            " << name << '\n';
        all_same = false;
        break;
    }
  }
  return all_same ? kExitOk : kExitFailure;
}

int exit_code_for_cli_error(const CLI::Error& e) { return e.get_exit_code() == 0 ? kExitOk : kExitConfigError; }

}  // namespace

std::string fnv1a64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return fmt::format("{:016x}", h);
}

std::map<std::string, std::string> parse_flat_config(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, no));
    const std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: missing key", source, no));
    if (!out.emplace(key, value).second) throw ConfigError(fmt::format("{}:{}: '{}' set twice", source, no, key));
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse nonnegative CP tensor decomposition", "sncp"};
  app.set_version_flag("--version", std::string(SNCP_VERSION));
  app.require_subcommand(1);

  DecomposeArgs dec;
  auto* dec_cmd = app.add_subcommand("decompose", "Decompose a DNT1 tensor file");
  dec_cmd->add_option("input", dec.input, "Tensor file (DNT1)");
  dec_cmd->add_option("--out", dec.out, "Output directory");
  dec.solver.add_to(dec_cmd, true);

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic sparse-source benchmark tensor");
  syn_cmd->add_option("--preset", syn.preset, "paper-3rd, paper-4th, scaled-4th or toy")->capture_default_str();
  syn.snr_option = syn_cmd->add_option("--snr", syn.snr, "Noise level in dB (inf = noiseless; default from preset)");
  syn.seed_option = syn_cmd->add_option("--seed", syn.seed, "Random seed (drawn from entropy when absent)");
  syn_cmd->add_option("--signals", syn.signals, "Source matrix file replacing the generated signals");
  syn_cmd->add_option("--out", syn.out, "Output directory");

  GridArgs grd;
  auto* grd_cmd = app.add_subcommand("grid", "Run a methods x betas x repeats experiment grid");
  grd.preset_option = grd_cmd->add_option("--preset", grd.preset, "Synthetic data preset")->capture_default_str();
  grd.snr_option = grd_cmd->add_option("--snr", grd.snr, "Noise level in dB (default from preset)");
  grd.data_seed_option = grd_cmd->add_option("--data-seed", grd.data_seed, "Seed of the synthetic tensor (default: --seed)");
  grd_cmd->add_option("--input", grd.input, "Tensor file instead of a preset");
  grd_cmd->add_option("--truth", grd.truth, "Ground-truth signal-mode factor for --input");
  grd_cmd->add_option("--methods", grd.methods, "Methods (comma separated)")->delimiter(',')->capture_default_str();
  grd_cmd->add_option("--betas", grd.betas, "L1 weights (comma separated)")->delimiter(',')->capture_default_str();
  grd_cmd->add_option("--repeats", grd.repeats, "Runs per cell")->capture_default_str();
  grd_cmd->add_option("--workers", grd.workers, "Parallel cells")->check(CLI::PositiveNumber)->capture_default_str();
  grd_cmd->add_option("--signal-mode", grd.signal_mode, "Mode scored against the truth (from 1)")->capture_default_str();
  grd_cmd->add_option("--threshold", grd.threshold, "Sparsity threshold")->capture_default_str();
  grd_cmd->add_option("--pin-iters", grd.pin_iters, "Records CSV fixing each cell's sweep count (replay)");
  grd_cmd->add_flag("--quiet", grd.quiet, "No per-cell progress");
  grd_cmd->add_option("--out", grd.out, "Output directory");
  grd.solver.add_to(grd_cmd, false);

  MetricsArgs met;
  auto* met_cmd = app.add_subcommand("metrics", "Sparsity, component count and PSNR of a factor");
  met_cmd->add_option("factors", met.factors, "Decomposition output directory or a matrix file");
  met_cmd->add_option("--truth", met.truth, "Ground-truth matrix for PSNR");
  met_cmd->add_option("--mode", met.mode, "Factor to score (from 1)")->capture_default_str();
  met_cmd->add_option("--threshold", met.threshold, "Sparsity threshold")->capture_default_str();
  met_cmd->add_option("--out", met.out, "Output directory (default: print JSON)");

  SignalsArgs sig;
  auto* sig_cmd = app.add_subcommand("signals", "Generate a sparse source-signal matrix");
  sig_cmd->add_option("--length", sig.length, "Samples per channel")->check(CLI::PositiveNumber)->capture_default_str();
  sig_cmd->add_option("--channels", sig.channels, "Number of channels")->check(CLI::PositiveNumber)->capture_default_str();
  sig_cmd->add_option("--seed", sig.seed, "Random seed")->capture_default_str();
  sig_cmd->add_option("--out", sig.out, "Output matrix file");

  ReplayArgs rep;
  auto* rep_cmd = app.add_subcommand("replay", "Rerun a command from its manifest and compare outputs");
  rep_cmd->add_option("manifest", rep.manifest, "manifest.json of the original run")->required();
  rep_cmd->add_option("--out", rep.out, "Output directory of the rerun");
  rep_cmd->add_option("--compare", rep.compare, "Directory with the original outputs (default: the manifest's)");
  rep_cmd->add_flag("--no-compare", rep.no_compare, "Only rerun");

  std::string config_path;
  for (auto* sub : {dec_cmd, syn_cmd, grd_cmd, met_cmd}) {
    sub->add_option("--config", config_path, "Flat 'key = value' file; command-line flags take precedence");
  }

  try {
    try {
      std::vector<std::string> reversed(args.rbegin(), args.rend());
      app.parse(reversed);
      CLI::App* sub = app.get_subcommands().front();
      if (!config_path.empty()) apply_config_file(sub, config_path);

      RunInfo info;
      info.argv = args;
      info.started = Clock::now();
      if (sub == dec_cmd) return cmd_decompose(dec, sub, info, out);
      if (sub == syn_cmd) return cmd_synth(syn, sub, info, out);
      if (sub == grd_cmd) return cmd_grid(grd, sub, info, out, err);
      if (sub == met_cmd) return cmd_metrics(met, sub, info, out);
      if (sub == sig_cmd) return cmd_signals(sig, out);
      return cmd_replay(rep, out, err);
    } catch (const CLI::Error& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : exit_code_for_cli_error(e);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitSolverError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace sncp
