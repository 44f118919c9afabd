#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spagrav/domain.hpp"

namespace spagrav {

using WeightMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class LogDetMethod { exact, approximate };

// Tabulated ln|I - rho W| over (-1, 1). rho is strictly increasing and
// contains 0 with value exactly 0.
struct LogDetGrid {
  std::vector<double> rho;
  std::vector<double> value;
  LogDetMethod method = LogDetMethod::exact;
  // Closed-class periods of W. Their exact factor sum_d ln(1 - rho^d) is
  // removed before interpolating, since it is singular at rho = +-1.
  std::vector<int> periods;
  std::vector<std::string> warnings;

  std::size_t size() const { return rho.size(); }
  // Cubic interpolation of the smooth remainder between grid points;
  // throws outside the grid.
  double at(double r) const;
};

struct NeighbourSummary {
  int k = 0;
  double min_distance_km = 0.0;
  double max_distance_km = 0.0;
};

// Region-level row-stochastic weight matrix plus the log-determinant table
// used by the rho updates. Treated as immutable once the grid is attached.
class SpatialSystem {
 public:
  explicit SpatialSystem(WeightMatrix weights, std::optional<NeighbourSummary> summary = std::nullopt);

  const WeightMatrix& weights() const { return weights_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.rows()); }
  int k() const { return summary_ ? summary_->k : 0; }
  const std::optional<NeighbourSummary>& summary() const { return summary_; }

  bool has_logdet_grid() const { return grid_.has_value(); }
  const LogDetGrid& logdet_grid() const;
  void set_logdet_grid(LogDetGrid grid);

 private:
  WeightMatrix weights_;
  std::optional<NeighbourSummary> summary_;
  std::optional<LogDetGrid> grid_;
};

// Row-stochastic k-nearest-neighbour weights by great-circle distance.
// Ties are broken by (distance, region_id) so the result is deterministic.
SpatialSystem knn_weights(const RegionSet& regions, int k = 7);

// W x for an n x p matrix x.
Eigen::MatrixXd region_lag(const SpatialSystem& system, const Eigen::MatrixXd& x);

struct LogDetOptions {
  std::size_t resolution = 2000;
  LogDetMethod method = LogDetMethod::exact;
  // Exact evaluations used by the approximate method.
  std::size_t chebyshev_nodes = 64;
  unsigned threads = 0;  // 0 = hardware concurrency
};

// Grid of `resolution` equally spaced rho values on [-1 + 1/resolution,
// 1 - 1/resolution], with rho = 0 inserted when it is not already a node.
LogDetGrid build_logdet_grid(const SpatialSystem& system, const LogDetOptions& options = {});

// ln|I - rho W| by sparse LU. Throws NumericalError when singular.
double exact_logdet(const WeightMatrix& w, double rho);

// Periods of the closed communicating classes of W viewed as a Markov
// transition matrix. Each class of period d contributes the d-th roots of
// unity to the spectrum, i.e. a factor (1 - rho^d) to |I - rho W|.
std::vector<int> closed_class_periods(const WeightMatrix& w);

// ||(I - rho W) theta||^2 without forming I - rho W.
double sar_quadratic(const Eigen::VectorXd& theta, double rho, const SpatialSystem& system);

// The same quadratic as a polynomial in rho: tt - 2 rho tw + rho^2 ww.
struct SarQuadraticForm {
  double tt = 0.0;
  double tw = 0.0;
  double ww = 0.0;
  double operator()(double rho) const { return tt - 2.0 * rho * tw + rho * rho * ww; }
};
SarQuadraticForm sar_quadratic_form(const Eigen::VectorXd& theta, const WeightMatrix& w);

// (I - rho W)'(I - rho W) with a sparsity pattern that does not depend on rho.
Eigen::SparseMatrix<double> sar_precision_kernel(const WeightMatrix& w, double rho);

// Triplet CSV `row_id,col_id,weight`. Rows are renormalised to sum to one;
// a warning is recorded when that changes any row sum by more than 1e-9.
WeightMatrix load_weight_triplets(const std::filesystem::path& path, const RegionSet& regions,
                                  std::vector<std::string>* warnings = nullptr);
void write_weight_triplets(std::ostream& out, const WeightMatrix& w, const RegionSet& regions);

}  // namespace spagrav
