#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spagrav/design.hpp"
#include "spagrav/domain.hpp"
#include "spagrav/mixture.hpp"
#include "spagrav/sampler.hpp"
#include "spagrav/simulate.hpp"
#include "spagrav/spatial.hpp"

namespace spagrav {

// `section.key=value` applied on top of the config file; flags win.
using ConfigOverride = std::pair<std::string, std::string>;
std::vector<ConfigOverride> parse_overrides(const std::vector<std::string>& assignments);

// Everything a fit needs. Relative paths are resolved against the config
// file's directory.
struct RunConfig {
  // [data]
  std::filesystem::path regions;
  std::filesystem::path flows;
  std::optional<std::filesystem::path> dyad_covariates;
  std::optional<std::filesystem::path> weights;  // triplet override of the kNN matrix
  std::optional<std::filesystem::path> panel;    // knowledge-stock inflow series
  std::string panel_name = "knowledge_stock";
  double depreciation = 0.10;
  std::vector<std::string> covariates;  // empty: every column after lat
  DyadMode dyad_mode = DyadMode::dense;
  bool include_distance = false;
  // [transforms]
  TransformSpec transforms;
  // [spatial]
  int k = 7;
  std::size_t grid_resolution = 2000;
  LogDetMethod logdet = LogDetMethod::exact;
  // [sampler], [priors]
  SamplerOptions sampler;
  PriorSpec priors;
  // [schedule]
  Schedule schedule;
  std::size_t chains = 2;
  std::vector<std::uint64_t> seeds;  // empty: seed, seed + 1, ...
  // [output], [mixture]
  std::filesystem::path output_dir = "spagrav_out";
  std::optional<std::filesystem::path> mixture_table;

  // Fails when referenced inputs are missing or the schedule is inconsistent.
  void validate() const;
  std::vector<Schedule> chain_schedules() const;
  // Settings that change results, one `key=value` per line in fixed order,
  // with input files represented by content hashes rather than paths.
  std::string canonical() const;
};

RunConfig load_config(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides = {});
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir,
                       const std::vector<ConfigOverride>& overrides = {}, const std::string& source = "<config>");

// FNV-1a 64 of RunConfig::canonical, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// [simulate] section; `preset = demo` starts from demo_spec.
SimulationSpec load_simulation_spec(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides = {});
SimulationSpec parse_simulation_spec(std::istream& in, const std::vector<ConfigOverride>& overrides = {},
                                     const std::string& source = "<config>");

// Inputs assembled from a RunConfig: regions (with any panel-derived
// covariate), dyads, the weight system with its log-determinant grid, and
// the designs.
struct FitInputs {
  RegionSet regions;
  DyadFrame dyads;
  SpatialSystem spatial;
  DesignMatrices designs;
  std::vector<std::string> warnings;
};

FitInputs prepare_inputs(const RunConfig& config);

// Resolution order: explicit path, SPAGRAV_MIXTURE_TABLE, the source-tree
// data directory, the installed data directory. Falls back to fitting a
// table at run time, recording a warning.
MixtureTable resolve_mixture_table(const std::optional<std::filesystem::path>& explicit_path,
                                   std::vector<std::string>* warnings = nullptr);

}  // namespace spagrav
