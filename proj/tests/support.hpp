#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "spagrav/design.hpp"
#include "spagrav/domain.hpp"
#include "spagrav/mixture.hpp"
#include "spagrav/spatial.hpp"

namespace spagrav::test {

inline const MixtureTable& shipped_table() {
  static const MixtureTable table = MixtureTable::load(std::filesystem::path(SPAGRAV_TEST_DATA_DIR) / "mixture_table_v1.csv");
  return table;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("spagrav_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Regions at random points of a lon/lat box, countries assigned round-robin.
inline RegionSet random_regions(std::size_t n, std::size_t countries, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lon(-5.0, 20.0), lat(40.0, 55.0);
  std::normal_distribution<double> z;
  std::vector<std::string> ids, cc, names;
  std::vector<GeoPoint> pts;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("R" + std::string(i < 10 ? "0" : "") + std::to_string(i));
    cc.push_back("C" + std::to_string(i % countries));
    pts.push_back({lon(rng), lat(rng)});
    for (std::size_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z(rng);
  }
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return RegionSet(ids, cc, pts, names, x);
}

// Mean and standard error of a sample.
struct SampleMoments {
  double mean = 0.0;
  double variance = 0.0;
  double se() const { return std::sqrt(variance / static_cast<double>(n)); }
  std::size_t n = 0;
};

inline SampleMoments sample_moments(const std::vector<double>& v) {
  SampleMoments m;
  m.n = v.size();
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.variance += (x - m.mean) * (x - m.mean);
  m.variance /= static_cast<double>(v.size() - 1);
  return m;
}

// Dense dummy matrix V with V(i, map[i]) = 1.
inline Eigen::MatrixXd dummy_matrix(const std::vector<std::size_t>& map, std::size_t n) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(map.size()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < map.size(); ++i) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(map[i])) = 1.0;
  return v;
}

// Asymptotic Kolmogorov distribution tail, P(K > x).
inline double kolmogorov_tail(double x) {
  if (x < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) s += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(s, 0.0, 1.0);
}

// One-sample KS p-value of `x` against a continuous CDF.
template <class Cdf>
double ks_pvalue(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return kolmogorov_tail((std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d);
}

// Two-sample KS p-value.
inline double ks_pvalue_two(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / static_cast<double>(a.size() + b.size());
  return kolmogorov_tail((std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d);
}

}  // namespace spagrav::test
