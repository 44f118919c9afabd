#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spagrav/design.hpp"
#include "spagrav/domain.hpp"
#include "spagrav/sampler.hpp"
#include "spagrav/spatial.hpp"

namespace spagrav {

struct SimulationSpec {
  std::size_t n = 50;
  std::size_t countries = 5;  // contiguous equal blocks by sorted longitude
  std::size_t p_x = 2;
  std::size_t p_d = 1;
  int k = 7;
  // Empty names default to x1.., d1..
  std::vector<std::string> covariate_names;
  std::vector<std::string> dyad_covariate_names;
  // Length 1 + 4 p_x + p_d; empty picks default_gamma.
  Eigen::VectorXd gamma;
  // Replace the first dyad covariate by standardised log great-circle distance.
  bool log_distance = false;
  double rho_o = 0.5;
  double rho_d = 0.3;
  double phi2_o = 0.3;
  double phi2_d = 0.3;
  std::uint64_t seed = 1;
  // Sphere patch for the centroids, in degrees.
  double lon_min = -10.0, lon_max = 30.0;
  double lat_min = 35.0, lat_max = 60.0;

  void validate() const;
};

// Moderate effects of alternating sign: intercept 0.5, origin 0.5,
// destination 0.3, dyad -0.4, lags 0.2 and -0.2.
Eigen::VectorXd default_gamma(std::size_t p_x, std::size_t p_d);

// Named-variable preset used by the demo data set.
SimulationSpec demo_spec(std::uint64_t seed = 20240601);

struct SimulatedDataset {
  RegionSet regions;
  DyadFrame dyads;
  SpatialSystem spatial;
  DesignMatrices designs;
  // gamma, raw (uncentred) theta_o/theta_d, rho and phi2.
  ChainState truth;
};

SimulatedDataset simulate_dataset(const SimulationSpec& spec);

// Truth in sampler parameter order, plus `alpha0_centred`, the intercept
// after absorbing the means of theta_o and theta_d.
std::map<std::string, double> truth_parameters(const SimulatedDataset& data);

// Writes regions.csv, flows.csv, dyad_covariates.csv (if any) and truth.csv.
void write_dataset(const SimulatedDataset& data, const std::filesystem::path& directory);
std::map<std::string, double> load_truth(const std::filesystem::path& path);

struct GoodnessOfFit {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
  bool pass = true;
};

// Chi-squared test of integer samples against Poisson(lambda), pooling
// cells until every expected count is at least 5.
GoodnessOfFit poisson_gof(double lambda, std::span<const std::int64_t> samples, double alpha = 0.01);

// The simulator's own Poisson sampler checked against the exact pmf.
GoodnessOfFit poisson_pmf_check(double lambda, std::size_t draws, Rng& rng, double alpha = 0.01);

}  // namespace spagrav
