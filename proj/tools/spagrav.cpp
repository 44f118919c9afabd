// spagrav: weights, simulate, fit, summarize and diagnose for the spatial
// Poisson gravity model.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 the fit
// finished with convergence warnings, 1 numerical failure.
#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "spagrav/chain_io.hpp"
#include "spagrav/config.hpp"
#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"
#include "spagrav/posterior.hpp"
#include "spagrav/simulate.hpp"

namespace fs = std::filesystem;
using namespace spagrav;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvalid = 2;
constexpr int kConvergence = 3;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string output_dir;
};

fs::path output_dir(const Common& common, const fs::path& from_config) {
  if (!common.output_dir.empty()) return common.output_dir;
  if (const char* env = std::getenv("SPAGRAV_OUTPUT_DIR"); env && *env) return env;
  return from_config;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  auto out = open_out(p);
  out << text;
  if (!out) throw InputError("failed writing " + p.string());
}

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::vector<ConfigOverride> overrides_of(const Common& c) { return parse_overrides(c.sets); }

RunConfig config_for(const Common& common, const std::vector<ConfigOverride>& extra = {}) {
  if (common.config.empty()) throw InputError("--config is required");
  auto overrides = overrides_of(common);
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  return load_config(common.config, overrides);
}

fs::path draws_path(const fs::path& dir, std::size_t chain) { return dir / fmt::format("draws_chain{}.csv", chain); }
fs::path checkpoint_path(const fs::path& dir, std::size_t chain) {
  return dir / fmt::format("checkpoint_chain{}.txt", chain);
}

// ---------------------------------------------------------------- weights

struct WeightsArgs {
  std::string regions;
  std::optional<int> k;
};

int cmd_weights(const Common& common, const WeightsArgs& args) {
  fs::path regions_path;
  int k = 7;
  fs::path out_dir = "spagrav_out";
  std::size_t resolution = 2000;
  LogDetMethod method = LogDetMethod::exact;
  if (!common.config.empty()) {
    const RunConfig c = load_config(common.config, overrides_of(common));
    regions_path = c.regions;
    k = c.k;
    out_dir = c.output_dir;
    resolution = c.grid_resolution;
    method = c.logdet;
  }
  if (!args.regions.empty()) regions_path = args.regions;
  if (args.k) k = *args.k;
  if (regions_path.empty()) throw InputError("weights: give --regions or a config with data.regions");
  out_dir = output_dir(common, out_dir);

  const RegionSet regions = load_regions(regions_path, RegionSchema{});
  SpatialSystem system = knn_weights(regions, k);
  LogDetOptions lo;
  lo.resolution = resolution;
  lo.method = method;
  const LogDetGrid grid = build_logdet_grid(system, lo);
  warn_all(grid.warnings);

  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "weights.csv");
    write_weight_triplets(out, system.weights(), regions);
  }
  {
    auto out = open_out(out_dir / "logdet_grid.csv");
    out << "rho,logdet\n";
    for (std::size_t g = 0; g < grid.size(); ++g)
      out << csv::format_exact(grid.rho[g]) << ',' << csv::format_exact(grid.value[g]) << '\n';
  }
  const auto& s = *system.summary();
  std::ostringstream summary;
  summary << "regions: " << regions.size() << '\n'
          << "countries: " << regions.country_count() << '\n'
          << "k: " << s.k << '\n'
          << "entries: " << system.weights().nonZeros() << '\n'
          << fmt::format("neighbour distance km: min {:.3f}, max {:.3f}\n", s.min_distance_km, s.max_distance_km)
          << fmt::format("logdet grid: {} points, {} method\n", grid.size(),
                         method == LogDetMethod::exact ? "exact" : "approximate");
  write_text(out_dir / "weights_summary.txt", summary.str());
  std::cout << summary.str();
  return kOk;
}

// --------------------------------------------------------------- simulate

struct SimulateArgs {
  std::optional<std::uint64_t> seed;
  std::string preset;
};

int cmd_simulate(const Common& common, const SimulateArgs& args) {
  auto overrides = overrides_of(common);
  if (!args.preset.empty()) overrides.insert(overrides.begin(), {"simulate.preset", args.preset});
  if (args.seed) overrides.emplace_back("simulate.seed", std::to_string(*args.seed));
  SimulationSpec spec;
  if (!common.config.empty()) {
    spec = load_simulation_spec(common.config, overrides);
  } else {
    std::istringstream empty;
    spec = parse_simulation_spec(empty, overrides, "<flags>");
  }
  const fs::path dir = output_dir(common, "spagrav_sim");
  const SimulatedDataset data = simulate_dataset(spec);
  write_dataset(data, dir);

  // A ready-to-run fit config next to the data.
  std::ostringstream ini;
  ini << "[data]\nregions = regions.csv\nflows = flows.csv\n";
  if (data.dyads.covariate_count() > 0) ini << "dyad_covariates = dyad_covariates.csv\n";
  ini << "\n[spatial]\nk = " << spec.k << "\n\n[output]\ndirectory = fit\n";
  write_text(dir / "fit.ini", ini.str());

  std::int64_t total = 0, zeros = 0;
  for (auto y : data.dyads.flow) {
    total += y;
    zeros += y == 0;
  }
  std::cout << fmt::format("wrote {}: {} regions, {} dyads, {} flows in total, {:.1f}% zero dyads\n", dir.string(),
                           data.regions.size(), data.dyads.size(), total,
                           100.0 * static_cast<double>(zeros) / static_cast<double>(data.dyads.size()));
  return kOk;
}

// -------------------------------------------------------------------- fit

struct FitArgs {
  std::optional<std::size_t> chains;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> total, burn_in, thin;
  std::optional<std::string> rho_update;
  std::optional<std::size_t> stop_after;
  bool resume = false;
};

int report(const fs::path& dir, const std::vector<ChainOutput>& chains, double level) {
  const SummaryTable summary = summarize(chains, level);
  const RenderedTable table = render_table(summary);
  write_text(dir / "summary.txt", table.text);
  write_text(dir / "summary.csv", table.csv);
  {
    auto out = open_out(dir / "parameters.csv");
    write_summary_csv(out, summary);
  }
  const DiagnosticsReport diag = diagnose(chains);
  {
    auto out = open_out(dir / "diagnostics.csv");
    write_diagnostics_csv(out, diag);
  }
  std::cout << table.text;
  warn_all(diag.warnings);
  if (diag.verdict == Verdict::warn) {
    std::cerr << "convergence diagnostics raised warnings\n";
    return kConvergence;
  }
  return kOk;
}

int cmd_fit(const Common& common, const FitArgs& args) {
  std::vector<ConfigOverride> extra;
  if (args.chains) extra.emplace_back("schedule.chains", std::to_string(*args.chains));
  if (args.seed) extra.emplace_back("schedule.seed", std::to_string(*args.seed));
  if (args.total) extra.emplace_back("schedule.total", std::to_string(*args.total));
  if (args.burn_in) extra.emplace_back("schedule.burn_in", std::to_string(*args.burn_in));
  if (args.thin) extra.emplace_back("schedule.thin", std::to_string(*args.thin));
  if (args.rho_update) extra.emplace_back("sampler.rho_update", *args.rho_update);
  RunConfig config = config_for(common, extra);
  config.output_dir = output_dir(common, config.output_dir);
  const std::string hash = config_hash(config);

  const auto started = std::chrono::steady_clock::now();
  std::vector<std::string> warnings;
  FitInputs inputs = prepare_inputs(config);
  const MixtureTable mixture = resolve_mixture_table(config.mixture_table, &warnings);
  warnings.insert(warnings.end(), inputs.warnings.begin(), inputs.warnings.end());
  warn_all(warnings);
  fs::create_directories(config.output_dir);

  const std::vector<Schedule> schedules = config.chain_schedules();
  const std::size_t n_chains = schedules.size();
  std::vector<std::optional<CheckpointFile>> resume(n_chains);
  if (args.resume)
    for (std::size_t c = 0; c < n_chains; ++c) {
      CheckpointFile cp = load_checkpoint(checkpoint_path(config.output_dir, c));
      if (cp.config_hash != hash) throw InputError(fmt::format("chain {}: checkpoint was written by another configuration", c));
      if (cp.schedule.seed != schedules[c].seed || cp.schedule.total != schedules[c].total ||
          cp.schedule.burn_in != schedules[c].burn_in || cp.schedule.thin != schedules[c].thin)
        throw InputError(fmt::format("chain {}: checkpoint schedule differs from the configured one", c));
      resume[c] = std::move(cp);
    }

  std::vector<ChainRun> runs(n_chains);
  std::vector<std::exception_ptr> errors(n_chains);
  {
    std::vector<std::jthread> workers;
    for (std::size_t c = 0; c < n_chains; ++c)
      workers.emplace_back([&, c] {
        try {
          GibbsSampler sampler(inputs.designs, inputs.dyads.flow, inputs.spatial, mixture, config.priors,
                               config.sampler);
          RunControl control;
          control.stop_after = args.stop_after;
          if (resume[c]) control.resume = &resume[c]->checkpoint;
          runs[c] = run_chain(sampler, schedules[c], control);
          runs[c].output.metadata.chain = c;
          runs[c].output.metadata.config_hash = hash;
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
  }
  for (std::size_t c = 0; c < n_chains; ++c) {
    if (!errors[c]) continue;
    try {
      std::rethrow_exception(errors[c]);
    } catch (const SamplerAbort& e) {
      const fs::path p = config.output_dir / fmt::format("abort_chain{}.txt", c);
      save_checkpoint(p, CheckpointFile{schedules[c], hash, c, e.last_good()});
      throw NumericalError(fmt::format("chain {} aborted at {}; last good state written to {}", c, e.what(),
                                       p.string()));
    }
  }

  if (args.stop_after && !runs.front().complete()) {
    for (std::size_t c = 0; c < n_chains; ++c)
      save_checkpoint(checkpoint_path(config.output_dir, c),
                      CheckpointFile{schedules[c], hash, c, *runs[c].checkpoint});
    std::cerr << fmt::format("stopped after {} sweeps; resume with --resume\n", *args.stop_after);
    return kOk;
  }

  std::vector<ChainOutput> outputs;
  for (std::size_t c = 0; c < n_chains; ++c) {
    save_draws(draws_path(config.output_dir, c), runs[c].output);
    const auto& m = runs[c].output.metadata;
    if (m.overflow_events > 0)
      std::cerr << fmt::format("warning: chain {}: intensity clamped {} times; consider rescaling covariates\n", c,
                               m.overflow_events);
    if (config.sampler.rho_update == RhoUpdate::metropolis)
      std::cerr << fmt::format("chain {}: rho acceptance {:.3f} (origin), {:.3f} (destination)\n", c,
                               m.acceptance_o, m.acceptance_d);
    outputs.push_back(std::move(runs[c].output));
  }
  if (args.resume)
    for (std::size_t c = 0; c < n_chains; ++c) fs::remove(checkpoint_path(config.output_dir, c));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::cerr << fmt::format("{} chains x {} sweeps in {:.1f} s\n", n_chains, config.schedule.total, secs);
  return report(config.output_dir, outputs, 0.9);
}

// ---------------------------------------------------- summarize / diagnose

struct DrawArgs {
  std::vector<std::string> files;
  double level = 0.9;
};

std::vector<ChainOutput> load_chains(const Common& common, const DrawArgs& args, fs::path& dir) {
  std::vector<fs::path> files(args.files.begin(), args.files.end());
  fs::path config_dir = "spagrav_out";
  if (!common.config.empty()) config_dir = load_config(common.config, overrides_of(common)).output_dir;
  dir = output_dir(common, config_dir);
  if (files.empty()) {
    for (std::size_t c = 0;; ++c) {
      const fs::path p = draws_path(dir, c);
      if (!fs::exists(p)) break;
      files.push_back(p);
    }
    if (files.empty()) throw InputError("no draw files given and none found in " + dir.string());
  }
  std::vector<ChainOutput> chains;
  for (const auto& f : files) chains.push_back(load_draws(f));
  return chains;
}

int cmd_summarize(const Common& common, const DrawArgs& args) {
  fs::path dir;
  const auto chains = load_chains(common, args, dir);
  const SummaryTable summary = summarize(chains, args.level);
  const RenderedTable table = render_table(summary);
  fs::create_directories(dir);
  write_text(dir / "summary.txt", table.text);
  write_text(dir / "summary.csv", table.csv);
  {
    auto out = open_out(dir / "parameters.csv");
    write_summary_csv(out, summary);
  }
  std::cout << table.text;
  return kOk;
}

int cmd_diagnose(const Common& common, const DrawArgs& args) {
  fs::path dir;
  const auto chains = load_chains(common, args, dir);
  const DiagnosticsReport diag = diagnose(chains);
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "diagnostics.csv");
    write_diagnostics_csv(out, diag);
  }
  std::cout << fmt::format("{} chains, {} draws per chain\n", diag.chains, diag.draws_per_chain);
  std::cout << fmt::format("{:<28}{:>10}{:>12}{:>10}\n", "variable", "geweke_z", "ess", "psrf");
  for (const auto& r : diag.rows)
    std::cout << fmt::format("{:<28}{:>10.3f}{:>12.1f}{:>10}\n", r.name, r.geweke_z, r.ess,
                             r.psrf ? fmt::format("{:.3f}", *r.psrf) : "NA");
  warn_all(diag.warnings);
  std::cout << "verdict: " << (diag.verdict == Verdict::pass ? "pass" : "warn") << '\n';
  return diag.verdict == Verdict::pass ? kOk : kConvergence;
}

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("-c,--config", common.config, "INI configuration file");
  sub->add_option("--set", common.sets, "Override a config value, section.key=value (repeatable)");
  sub->add_option("-o,--output-dir", common.output_dir, "Output directory (also SPAGRAV_OUTPUT_DIR)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian spatial Poisson gravity models with SAR origin and destination effects"};
  app.require_subcommand(1);

  Common common;
  WeightsArgs wargs;
  auto* weights = app.add_subcommand("weights", "Build k-nearest-neighbour weights and the log-determinant grid");
  add_common(weights, common);
  weights->add_option("--regions", wargs.regions, "Regions CSV (instead of data.regions)");
  weights->add_option("-k", wargs.k, "Neighbours per region");

  SimulateArgs sargs;
  auto* simulate = app.add_subcommand("simulate", "Simulate a data set with known parameters");
  add_common(simulate, common);
  simulate->add_option("--seed", sargs.seed, "Random seed");
  simulate->add_option("--preset", sargs.preset, "default or demo");

  FitArgs fargs;
  auto* fit = app.add_subcommand("fit", "Run the Gibbs sampler, then summarize and diagnose");
  add_common(fit, common);
  fit->add_option("--chains", fargs.chains, "Number of chains");
  fit->add_option("--seed", fargs.seed, "Seed of the first chain");
  fit->add_option("--total", fargs.total, "Sweeps per chain");
  fit->add_option("--burn-in", fargs.burn_in, "Discarded sweeps");
  fit->add_option("--thin", fargs.thin, "Keep every thin-th sweep");
  fit->add_option("--rho-update", fargs.rho_update, "griddy or metropolis");
  fit->add_option("--stop-after", fargs.stop_after, "Checkpoint and stop after this many sweeps")->group("");
  fit->add_flag("--resume", fargs.resume, "Continue from checkpoints in the output directory")->group("");

  DrawArgs dargs;
  auto* summarize_cmd = app.add_subcommand("summarize", "Posterior summary table from stored draws");
  add_common(summarize_cmd, common);
  summarize_cmd->add_option("draws", dargs.files, "Draw files (default: the output directory)");
  summarize_cmd->add_option("--level", dargs.level, "Credible interval mass")->check(CLI::Range(0.01, 0.999));

  auto* diagnose_cmd = app.add_subcommand("diagnose", "Convergence diagnostics from stored draws");
  add_common(diagnose_cmd, common);
  diagnose_cmd->add_option("draws", dargs.files, "Draw files (default: the output directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*weights) return cmd_weights(common, wargs);
    if (*simulate) return cmd_simulate(common, sargs);
    if (*fit) return cmd_fit(common, fargs);
    if (*summarize_cmd) return cmd_summarize(common, dargs);
    if (*diagnose_cmd) return cmd_diagnose(common, dargs);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
