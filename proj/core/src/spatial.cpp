#include "spagrav/spatial.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <thread>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

double LogDetGrid::at(double r) const {
  if (rho.empty()) throw InputError("log-determinant grid is empty");
  if (r < rho.front() || r > rho.back())
    throw InputError("rho " + std::to_string(r) + " lies outside the log-determinant grid");
  auto it = std::lower_bound(rho.begin(), rho.end(), r);
  const auto j = static_cast<std::size_t>(it - rho.begin());
  if (*it == r) return value[j];
  auto singular = [&](double x) {
    double s = 0.0;
    for (int d : periods) s += std::log1p(-std::pow(x, d));
    return s;
  };
  if (rho.size() < 4) {
    const double t = (r - rho[j - 1]) / (rho[j] - rho[j - 1]);
    return (1.0 - t) * (value[j - 1] - singular(rho[j - 1])) + t * (value[j] - singular(rho[j])) + singular(r);
  }
  // Cubic Lagrange through the four nodes around r, shifted inwards at the ends.
  const std::size_t first = std::min(j >= 2 ? j - 2 : 0, rho.size() - 4);
  double out = 0.0;
  for (std::size_t a = first; a < first + 4; ++a) {
    double l = 1.0;
    for (std::size_t b = first; b < first + 4; ++b)
      if (b != a) l *= (r - rho[b]) / (rho[a] - rho[b]);
    out += l * (value[a] - singular(rho[a]));
  }
  return out + singular(r);
}

SpatialSystem::SpatialSystem(WeightMatrix weights, std::optional<NeighbourSummary> summary)
    : weights_(std::move(weights)), summary_(summary) {
  if (weights_.rows() != weights_.cols()) throw InputError("weight matrix must be square");
  weights_.makeCompressed();
}

const LogDetGrid& SpatialSystem::logdet_grid() const {
  if (!grid_) throw InputError("spatial system has no log-determinant grid");
  return *grid_;
}

void SpatialSystem::set_logdet_grid(LogDetGrid grid) { grid_ = std::move(grid); }

SpatialSystem knn_weights(const RegionSet& regions, int k) {
  const std::size_t n = regions.size();
  if (k < 1) throw InputError("knn_weights: k must be positive");
  if (static_cast<std::size_t>(k) >= n)
    throw InputError("knn_weights: k (" + std::to_string(k) + ") must be smaller than the region count (" +
                     std::to_string(n) + ")");

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n * static_cast<std::size_t>(k));
  NeighbourSummary summary{k, std::numeric_limits<double>::infinity(), 0.0};
  const double w = 1.0 / k;

  struct Candidate {
    double distance;
    std::size_t index;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) candidates.push_back({great_circle_km(regions.centroid(i), regions.centroid(j)), j});
    auto closer = [&](const Candidate& a, const Candidate& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return regions.id(a.index) < regions.id(b.index);
    };
    std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), closer);
    for (int q = 0; q < k; ++q) {
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(candidates[q].index), w);
      summary.min_distance_km = std::min(summary.min_distance_km, candidates[q].distance);
      summary.max_distance_km = std::max(summary.max_distance_km, candidates[q].distance);
    }
  }
  WeightMatrix weights(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  weights.setFromTriplets(triplets.begin(), triplets.end());
  return SpatialSystem(std::move(weights), summary);
}

Eigen::MatrixXd region_lag(const SpatialSystem& system, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.rows()) != system.size())
    throw InputError("region_lag: x has " + std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(system.size()));
  return system.weights() * x;
}

namespace {

using ColMatrix = Eigen::SparseMatrix<double>;

// I - rho W with the union pattern of I and W kept for every rho.
class ShiftedOperator {
 public:
  explicit ShiftedOperator(const WeightMatrix& w) {
    const auto n = w.rows();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(w.nonZeros() + n));
    for (Eigen::Index i = 0; i < n; ++i) t.emplace_back(i, i, 0.0);
    for (Eigen::Index i = 0; i < w.outerSize(); ++i)
      for (WeightMatrix::InnerIterator it(w, i); it; ++it) t.emplace_back(it.row(), it.col(), 0.0);
    pattern_.resize(n, n);
    pattern_.setFromTriplets(t.begin(), t.end());
    pattern_.makeCompressed();
    identity_.assign(static_cast<std::size_t>(pattern_.nonZeros()), 0.0);
    weight_.assign(identity_.size(), 0.0);
    const ColMatrix wc = w;
    for (Eigen::Index j = 0; j < pattern_.outerSize(); ++j) {
      for (ColMatrix::InnerIterator it(pattern_, j); it; ++it) {
        const auto pos = static_cast<std::size_t>(&it.valueRef() - pattern_.valuePtr());
        if (it.row() == it.col()) identity_[pos] = 1.0;
        weight_[pos] = wc.coeff(it.row(), it.col());
      }
    }
  }

  const ColMatrix& at(double rho) {
    double* v = pattern_.valuePtr();
    for (std::size_t p = 0; p < identity_.size(); ++p) v[p] = identity_[p] - rho * weight_[p];
    return pattern_;
  }

 private:
  ColMatrix pattern_;
  std::vector<double> identity_;
  std::vector<double> weight_;
};

std::vector<double> grid_points(std::size_t resolution) {
  if (resolution < 100) throw InputError("log-determinant grid resolution must be at least 100");
  const double eps = 1.0 / static_cast<double>(resolution);
  const double lo = -1.0 + eps;
  const double hi = 1.0 - eps;
  std::vector<double> rho(resolution);
  for (std::size_t j = 0; j < resolution; ++j)
    rho[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(resolution - 1);
  rho[resolution - 1] = hi;
  auto it = std::lower_bound(rho.begin(), rho.end(), 0.0);
  if (it == rho.end() || *it != 0.0) rho.insert(it, 0.0);
  return rho;
}

// Evaluates exact log-determinants at `rho`, leaving NaN where the
// factorisation fails.
std::vector<double> exact_values(const WeightMatrix& w, const std::vector<double>& rho, unsigned threads) {
  std::vector<double> out(rho.size(), std::numeric_limits<double>::quiet_NaN());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, rho.size()));
  auto work = [&](unsigned worker) {
    ShiftedOperator op(w);
    Eigen::SparseLU<ColMatrix, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(op.at(0.5));
    for (std::size_t j = worker; j < rho.size(); j += threads) {
      if (rho[j] == 0.0) {
        out[j] = 0.0;
        continue;
      }
      lu.factorize(op.at(rho[j]));
      if (lu.info() != Eigen::Success) continue;
      out[j] = lu.logAbsDeterminant();
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  return out;
}

double deflation(const std::vector<int>& periods, double rho) {
  double s = 0.0;
  for (int d : periods) s += std::log1p(-std::pow(rho, d));
  return s;
}

}  // namespace

double exact_logdet(const WeightMatrix& w, double rho) {
  if (rho == 0.0) return 0.0;
  ShiftedOperator op(w);
  Eigen::SparseLU<ColMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(op.at(rho));
  if (lu.info() != Eigen::Success)
    throw NumericalError("sparse LU failed for I - rho W at rho = " + std::to_string(rho));
  return lu.logAbsDeterminant();
}

std::vector<int> closed_class_periods(const WeightMatrix& w) {
  const auto n = static_cast<int>(w.rows());
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (WeightMatrix::InnerIterator it(w, i); it; ++it)
      if (it.value() != 0.0) adj[static_cast<std::size_t>(i)].push_back(static_cast<int>(it.col()));

  // Iterative Tarjan.
  std::vector<int> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0),
      comp(static_cast<std::size_t>(n), -1);
  std::vector<char> on_stack(static_cast<std::size_t>(n), 0);
  std::vector<int> stack;
  std::vector<std::pair<int, std::size_t>> call;
  int counter = 0, components = 0;
  for (int root = 0; root < n; ++root) {
    if (index[static_cast<std::size_t>(root)] >= 0) continue;
    call.emplace_back(root, 0);
    while (!call.empty()) {
      auto& [v, next] = call.back();
      const auto vs = static_cast<std::size_t>(v);
      if (next == 0 && index[vs] < 0) {
        index[vs] = low[vs] = counter++;
        stack.push_back(v);
        on_stack[vs] = 1;
      }
      if (next < adj[vs].size()) {
        const int u = adj[vs][next++];
        const auto us = static_cast<std::size_t>(u);
        if (index[us] < 0) {
          call.emplace_back(u, 0);
        } else if (on_stack[us]) {
          low[vs] = std::min(low[vs], index[us]);
        }
        continue;
      }
      if (low[vs] == index[vs]) {
        int u;
        do {
          u = stack.back();
          stack.pop_back();
          on_stack[static_cast<std::size_t>(u)] = 0;
          comp[static_cast<std::size_t>(u)] = components;
        } while (u != v);
        ++components;
      }
      const int finished = v;
      call.pop_back();
      if (!call.empty()) {
        const auto parent = static_cast<std::size_t>(call.back().first);
        low[parent] = std::min(low[parent], low[static_cast<std::size_t>(finished)]);
      }
    }
  }

  std::vector<char> closed(static_cast<std::size_t>(components), 1);
  for (int v = 0; v < n; ++v)
    for (int u : adj[static_cast<std::size_t>(v)])
      if (comp[static_cast<std::size_t>(u)] != comp[static_cast<std::size_t>(v)])
        closed[static_cast<std::size_t>(comp[static_cast<std::size_t>(v)])] = 0;

  std::vector<int> periods;
  std::vector<int> level(static_cast<std::size_t>(n), -1);
  for (int c = 0; c < components; ++c) {
    if (!closed[static_cast<std::size_t>(c)]) continue;
    int start = -1;
    for (int v = 0; v < n && start < 0; ++v)
      if (comp[static_cast<std::size_t>(v)] == c) start = v;
    std::vector<int> queue{start};
    level[static_cast<std::size_t>(start)] = 0;
    int period = 0;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const int v = queue[q];
      for (int u : adj[static_cast<std::size_t>(v)]) {
        if (level[static_cast<std::size_t>(u)] < 0) {
          level[static_cast<std::size_t>(u)] = level[static_cast<std::size_t>(v)] + 1;
          queue.push_back(u);
        } else {
          period = std::gcd(period, std::abs(level[static_cast<std::size_t>(v)] + 1 -
                                             level[static_cast<std::size_t>(u)]));
        }
      }
    }
    periods.push_back(period == 0 ? 1 : period);
  }
  return periods;
}

LogDetGrid build_logdet_grid(const SpatialSystem& system, const LogDetOptions& options) {
  const WeightMatrix& w = system.weights();
  LogDetGrid grid;
  grid.method = options.method;
  grid.rho = grid_points(options.resolution);
  grid.periods = closed_class_periods(w);

  if (options.method == LogDetMethod::exact) {
    grid.value = exact_values(w, grid.rho, options.threads);
  } else {
    // Chebyshev interpolation in rho of ln|I - rho W| with the unit-modulus
    // part of the spectrum (closed classes) divided out analytically; the
    // remainder is analytic on a neighbourhood of [-1, 1].
    const std::size_t m = options.chebyshev_nodes;
    if (m < 4) throw InputError("approximate log-determinant needs at least 4 Chebyshev nodes");
    const auto& periods = grid.periods;
    std::vector<double> nodes(m);
    for (std::size_t j = 0; j < m; ++j)
      nodes[j] = std::cos(std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(m));
    auto at_nodes = exact_values(w, nodes, options.threads);
    for (std::size_t j = 0; j < m; ++j) {
      if (!std::isfinite(at_nodes[j]))
        throw NumericalError("log-determinant factorisation failed at Chebyshev node " + std::to_string(nodes[j]));
      at_nodes[j] -= deflation(periods, nodes[j]);
    }
    std::vector<double> coef(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        s += at_nodes[j] *
             std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(j) + 0.5) / static_cast<double>(m));
      coef[k] = 2.0 * s / static_cast<double>(m);
    }
    coef[0] *= 0.5;
    grid.value.resize(grid.rho.size());
    for (std::size_t j = 0; j < grid.rho.size(); ++j) {
      const double x = grid.rho[j];
      double b1 = 0.0, b2 = 0.0;
      for (std::size_t k = m; k-- > 1;) {
        const double b0 = 2.0 * x * b1 - b2 + coef[k];
        b2 = b1;
        b1 = b0;
      }
      grid.value[j] = x * b1 - b2 + coef[0] + deflation(periods, x);
    }
  }

  // Repair failed points by linear interpolation from valid neighbours.
  const std::size_t g = grid.rho.size();
  for (std::size_t j = 0; j < g; ++j) {
    if (std::isfinite(grid.value[j])) continue;
    grid.warnings.push_back("singular factorisation at rho = " + std::to_string(grid.rho[j]) + "; interpolated");
    std::size_t lo = j, hi = j;
    while (lo > 0 && !std::isfinite(grid.value[lo])) --lo;
    while (hi + 1 < g && !std::isfinite(grid.value[hi])) ++hi;
    if (!std::isfinite(grid.value[lo]) && !std::isfinite(grid.value[hi]))
      throw NumericalError("log-determinant grid has no valid points");
    if (!std::isfinite(grid.value[lo])) {
      grid.value[j] = grid.value[hi];
    } else if (!std::isfinite(grid.value[hi])) {
      grid.value[j] = grid.value[lo];
    } else {
      const double t = (grid.rho[j] - grid.rho[lo]) / (grid.rho[hi] - grid.rho[lo]);
      grid.value[j] = (1.0 - t) * grid.value[lo] + t * grid.value[hi];
    }
  }
  for (std::size_t j = 0; j < g; ++j)
    if (grid.rho[j] == 0.0) grid.value[j] = 0.0;
  return grid;
}

double sar_quadratic(const Eigen::VectorXd& theta, double rho, const SpatialSystem& system) {
  if (static_cast<std::size_t>(theta.size()) != system.size())
    throw InputError("sar_quadratic: theta length does not match the weight matrix");
  const Eigen::VectorXd r = theta - rho * (system.weights() * theta);
  return r.squaredNorm();
}

SarQuadraticForm sar_quadratic_form(const Eigen::VectorXd& theta, const WeightMatrix& w) {
  const Eigen::VectorXd wt = w * theta;
  return {theta.squaredNorm(), theta.dot(wt), wt.squaredNorm()};
}

Eigen::SparseMatrix<double> sar_precision_kernel(const WeightMatrix& w, double rho) {
  const ColMatrix wc = w;
  ColMatrix id(w.rows(), w.cols());
  id.setIdentity();
  const ColMatrix sym = wc + ColMatrix(wc.transpose());
  const ColMatrix wtw = ColMatrix(wc.transpose()) * wc;
  return ColMatrix(id - rho * sym + (rho * rho) * wtw);
}

WeightMatrix load_weight_triplets(const std::filesystem::path& path, const RegionSet& regions,
                                  std::vector<std::string>* warnings) {
  const csv::Table t = csv::read(path);
  const std::size_t c_r = t.require_column("row_id");
  const std::size_t c_c = t.require_column("col_id");
  const std::size_t c_w = t.require_column("weight");
  const auto n = static_cast<Eigen::Index>(regions.size());
  std::map<std::pair<std::size_t, std::size_t>, double> entries;
  for (const auto& row : t.rows) {
    const std::string where = t.source + ":" + std::to_string(row.line);
    auto r = regions.find(row.cells[c_r]);
    auto c = regions.find(row.cells[c_c]);
    if (!r || !c) throw InputError(where + ": unknown region id");
    if (*r == *c) throw InputError(where + ": diagonal weight for '" + row.cells[c_r] + "'");
    const double value = csv::parse_double(row.cells[c_w], where);
    if (value < 0.0) throw InputError(where + ": negative weight");
    if (!entries.emplace(std::make_pair(*r, *c), value).second) throw InputError(where + ": duplicate entry");
  }
  std::vector<double> row_sum(regions.size(), 0.0);
  for (const auto& [key, value] : entries) row_sum[key.first] += value;
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < row_sum.size(); ++i) {
    if (!(row_sum[i] > 0.0)) throw InputError(t.source + ": region '" + regions.id(i) + "' has no neighbours");
    if (std::abs(row_sum[i] - 1.0) > 1e-9 && warnings)
      warnings->push_back(t.source + ": row '" + regions.id(i) + "' summed to " + csv::format_exact(row_sum[i]) +
                          "; renormalised");
  }
  for (const auto& [key, value] : entries)
    if (value != 0.0)
      triplets.emplace_back(static_cast<int>(key.first), static_cast<int>(key.second), value / row_sum[key.first]);
  WeightMatrix w(n, n);
  w.setFromTriplets(triplets.begin(), triplets.end());
  return w;
}

void write_weight_triplets(std::ostream& out, const WeightMatrix& w, const RegionSet& regions) {
  out << "row_id,col_id,weight\n";
  for (Eigen::Index i = 0; i < w.outerSize(); ++i)
    for (WeightMatrix::InnerIterator it(w, i); it; ++it)
      out << regions.id(static_cast<std::size_t>(it.row())) << ',' << regions.id(static_cast<std::size_t>(it.col()))
          << ',' << csv::format_exact(it.value()) << '\n';
}

}  // namespace spagrav
