#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace spagrav {

// Finite Gaussian mixture approximating the law of eps = -ln xi with
// xi ~ Gamma(nu, 1).
struct MixtureComponents {
  std::vector<double> weight;
  std::vector<double> mean;
  std::vector<double> variance;

  std::size_t size() const { return weight.size(); }
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments moments(const MixtureComponents& c);

// Single Gaussian with the exact mean -digamma(nu) and variance trigamma(nu).
MixtureComponents tail_components(double nu);

// Exact law of -ln Gamma(nu, 1).
double neg_log_gamma_cdf(double x, double nu);
double neg_log_gamma_log_density(double x, double nu);
double neg_log_gamma_mean(double nu);
double neg_log_gamma_variance(double nu);

double mixture_cdf(const MixtureComponents& c, double x);

// Kolmogorov-Smirnov distance between the mixture and the exact law,
// evaluated on an equally spaced grid spanning the central 1 - 2e-12 mass.
double ks_distance(const MixtureComponents& c, double nu, std::size_t grid_points = 10001);

// Normalised component probabilities w_q N(residual | m_q, s_q) / sum,
// evaluated in log space so that distant residuals never produce NaN.
std::vector<double> indicator_weights(const MixtureComponents& c, double residual);

struct MixtureFitOptions {
  double ks_target = 0.01;
  int max_components = 10;
  std::size_t quadrature_points = 4000;
  int max_em_iterations = 3000;
  double em_tolerance = 1e-13;
};

struct MixtureFit {
  MixtureComponents components;
  double ks = 0.0;
  bool target_met = false;
};

// Weighted EM against a fine quadrature of the exact density, adding
// components until the KS target is met or the cap is reached, followed by
// an affine correction that matches the exact mean and variance.
MixtureFit fit_mixture(int nu, const MixtureFitOptions& options = {});

class MixtureTable {
 public:
  static constexpr int kFormatVersion = 1;

  MixtureTable(std::vector<MixtureComponents> per_shape, std::vector<double> achieved_ks);

  int nu_max() const { return static_cast<int>(per_shape_.size()); }
  // Tabulated components for nu <= nu_max, the Gaussian tail rule beyond.
  MixtureComponents components(int nu) const;
  const MixtureComponents& tabulated(int nu) const;
  double achieved_ks(int nu) const;
  Moments moments(int nu) const { return spagrav::moments(components(nu)); }

  // FNV-1a 64 of the serialised text, as 16 hex digits.
  std::string checksum() const;

  void write(std::ostream& out) const;
  static MixtureTable read(std::istream& in, const std::string& source = "<stream>");
  static MixtureTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<MixtureComponents> per_shape_;
  std::vector<double> achieved_ks_;
};

MixtureTable fit_mixture_table(int nu_max, const MixtureFitOptions& options = {},
                               std::vector<std::string>* warnings = nullptr);

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t value);

}  // namespace spagrav
