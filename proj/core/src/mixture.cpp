#include "spagrav/mixture.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Range of eps holding all but `tail` mass on each side.
std::pair<double, double> support(double nu, double tail) {
  const double lo = -std::log(boost::math::gamma_q_inv(nu, tail));
  const double hi = -std::log(boost::math::gamma_p_inv(nu, tail));
  return {lo, hi};
}

}  // namespace

Moments moments(const MixtureComponents& c) {
  double mean = 0.0, second = 0.0;
  for (std::size_t q = 0; q < c.size(); ++q) {
    mean += c.weight[q] * c.mean[q];
    second += c.weight[q] * (c.variance[q] + c.mean[q] * c.mean[q]);
  }
  return {mean, second - mean * mean};
}

double neg_log_gamma_mean(double nu) { return -boost::math::digamma(nu); }
double neg_log_gamma_variance(double nu) { return boost::math::trigamma(nu); }

MixtureComponents tail_components(double nu) {
  return {{1.0}, {neg_log_gamma_mean(nu)}, {neg_log_gamma_variance(nu)}};
}

double neg_log_gamma_cdf(double x, double nu) {
  // P(-ln xi <= x) = P(xi >= e^{-x}).
  const double t = std::exp(-x);
  if (t == 0.0) return 1.0;
  if (!std::isfinite(t)) return 0.0;
  return boost::math::gamma_q(nu, t);
}

double neg_log_gamma_log_density(double x, double nu) {
  return -nu * x - std::exp(-x) - std::lgamma(nu);
}

double mixture_cdf(const MixtureComponents& c, double x) {
  double f = 0.0;
  for (std::size_t q = 0; q < c.size(); ++q) f += c.weight[q] * normal_cdf((x - c.mean[q]) / std::sqrt(c.variance[q]));
  return f;
}

double ks_distance(const MixtureComponents& c, double nu, std::size_t grid_points) {
  const auto [lo, hi] = support(nu, 1e-12);
  double worst = 0.0;
  for (std::size_t j = 0; j < grid_points; ++j) {
    const double x = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(grid_points - 1);
    worst = std::max(worst, std::abs(mixture_cdf(c, x) - neg_log_gamma_cdf(x, nu)));
  }
  return worst;
}

std::vector<double> indicator_weights(const MixtureComponents& c, double residual) {
  std::vector<double> p(c.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < c.size(); ++q) {
    const double d = residual - c.mean[q];
    p[q] = std::log(c.weight[q]) - 0.5 * std::log(2.0 * std::numbers::pi * c.variance[q]) -
           0.5 * d * d / c.variance[q];
    top = std::max(top, p[q]);
  }
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

namespace {

struct Quadrature {
  std::vector<double> x;
  std::vector<double> mass;
};

Quadrature quadrature(int nu, std::size_t points) {
  const auto [lo, hi] = support(nu, 1e-14);
  Quadrature q;
  q.x.resize(points);
  q.mass.resize(points);
  double total = 0.0;
  for (std::size_t j = 0; j < points; ++j) {
    q.x[j] = lo + (hi - lo) * (static_cast<double>(j) + 0.5) / static_cast<double>(points);
    q.mass[j] = std::exp(neg_log_gamma_log_density(q.x[j], nu));
    total += q.mass[j];
  }
  for (auto& m : q.mass) m /= total;
  return q;
}

MixtureComponents em_fit(const Quadrature& quad, int nu, int components, const MixtureFitOptions& options) {
  const double target_mean = neg_log_gamma_mean(nu);
  const double target_var = neg_log_gamma_variance(nu);
  const auto k = static_cast<std::size_t>(components);
  MixtureComponents c;
  c.weight.assign(k, 1.0 / static_cast<double>(k));
  c.mean.resize(k);
  c.variance.assign(k, target_var / static_cast<double>(k * k) + 1e-3 * target_var);
  {
    // Start the means at equally spaced quantiles of the target.
    std::size_t j = 0;
    double cum = 0.0;
    for (std::size_t q = 0; q < k; ++q) {
      const double level = (static_cast<double>(q) + 0.5) / static_cast<double>(k);
      while (j + 1 < quad.x.size() && cum + quad.mass[j] < level) cum += quad.mass[j++];
      c.mean[q] = quad.x[j];
    }
  }
  if (k == 1) {
    c.mean[0] = target_mean;
    c.variance[0] = target_var;
    return c;
  }

  const std::size_t m = quad.x.size();
  std::vector<double> resp(m * k);
  double previous = -std::numeric_limits<double>::infinity();
  const double floor = 1e-8 * target_var;
  for (int iter = 0; iter < options.max_em_iterations; ++iter) {
    double loglik = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double top = -std::numeric_limits<double>::infinity();
      double* r = &resp[j * k];
      for (std::size_t q = 0; q < k; ++q) {
        const double d = quad.x[j] - c.mean[q];
        r[q] = std::log(c.weight[q]) - 0.5 * std::log(c.variance[q]) - 0.5 * d * d / c.variance[q];
        top = std::max(top, r[q]);
      }
      double total = 0.0;
      for (std::size_t q = 0; q < k; ++q) total += (r[q] = std::exp(r[q] - top));
      for (std::size_t q = 0; q < k; ++q) r[q] /= total;
      loglik += quad.mass[j] * (top + std::log(total));
    }
    for (std::size_t q = 0; q < k; ++q) {
      double w = 0.0, s1 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double a = quad.mass[j] * resp[j * k + q];
        w += a;
        s1 += a * quad.x[j];
      }
      if (w < 1e-300) continue;
      const double mean = s1 / w;
      double s2 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = quad.x[j] - mean;
        s2 += quad.mass[j] * resp[j * k + q] * d * d;
      }
      c.weight[q] = w;
      c.mean[q] = mean;
      c.variance[q] = std::max(s2 / w, floor);
    }
    if (std::abs(loglik - previous) < options.em_tolerance) break;
    previous = loglik;
  }

  // Drop collapsed components and renormalise.
  MixtureComponents kept;
  double total = 0.0;
  for (std::size_t q = 0; q < k; ++q)
    if (c.weight[q] > 1e-12) total += c.weight[q];
  for (std::size_t q = 0; q < k; ++q) {
    if (c.weight[q] <= 1e-12) continue;
    kept.weight.push_back(c.weight[q] / total);
    kept.mean.push_back(c.mean[q]);
    kept.variance.push_back(c.variance[q]);
  }

  // Affine correction to the exact first two moments.
  const Moments got = moments(kept);
  const double scale = std::sqrt(target_var / got.variance);
  for (std::size_t q = 0; q < kept.size(); ++q) {
    kept.mean[q] = target_mean + scale * (kept.mean[q] - got.mean);
    kept.variance[q] *= scale * scale;
  }
  return kept;
}

}  // namespace

MixtureFit fit_mixture(int nu, const MixtureFitOptions& options) {
  if (nu < 1) throw InputError("fit_mixture: nu must be at least 1");
  if (options.max_components < 1) throw InputError("fit_mixture: component cap must be positive");
  const Quadrature quad = quadrature(nu, options.quadrature_points);
  MixtureFit best;
  best.ks = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= options.max_components; ++k) {
    MixtureComponents c = em_fit(quad, nu, k, options);
    const double ks = ks_distance(c, nu);
    if (ks < best.ks) best = {std::move(c), ks, ks <= options.ks_target};
    if (best.target_met) break;
  }
  return best;
}

MixtureTable::MixtureTable(std::vector<MixtureComponents> per_shape, std::vector<double> achieved_ks)
    : per_shape_(std::move(per_shape)), achieved_ks_(std::move(achieved_ks)) {
  if (per_shape_.empty()) throw InputError("mixture table must cover at least nu = 1");
  if (achieved_ks_.size() != per_shape_.size()) achieved_ks_.resize(per_shape_.size(), -1.0);
  for (std::size_t i = 0; i < per_shape_.size(); ++i) {
    const auto& c = per_shape_[i];
    const std::string where = "mixture table nu=" + std::to_string(i + 1);
    if (c.size() == 0 || c.mean.size() != c.size() || c.variance.size() != c.size())
      throw InputError(where + ": malformed component set");
    double total = 0.0;
    for (std::size_t q = 0; q < c.size(); ++q) {
      if (!(c.variance[q] > 0.0)) throw InputError(where + ": non-positive variance");
      if (!(c.weight[q] > 0.0)) throw InputError(where + ": non-positive weight");
      total += c.weight[q];
    }
    if (std::abs(total - 1.0) > 1e-10) throw InputError(where + ": weights do not sum to one");
  }
}

MixtureComponents MixtureTable::components(int nu) const {
  if (nu < 1) throw InputError("mixture shape must be at least 1");
  if (nu > nu_max()) return tail_components(nu);
  return per_shape_[static_cast<std::size_t>(nu - 1)];
}

const MixtureComponents& MixtureTable::tabulated(int nu) const {
  if (nu < 1 || nu > nu_max()) throw InputError("shape " + std::to_string(nu) + " is not tabulated");
  return per_shape_[static_cast<std::size_t>(nu - 1)];
}

double MixtureTable::achieved_ks(int nu) const {
  if (nu < 1 || nu > nu_max()) return 0.0;
  return achieved_ks_[static_cast<std::size_t>(nu - 1)];
}

void MixtureTable::write(std::ostream& out) const {
  out << "# spagrav mixture table\n";
  out << "# version=" << kFormatVersion << "\n";
  out << "# nu_max=" << nu_max() << "\n";
  for (int nu = 1; nu <= nu_max(); ++nu)
    out << "# ks=" << nu << ":" << csv::format_exact(achieved_ks_[static_cast<std::size_t>(nu - 1)]) << "\n";
  out << "nu,q,weight,mean,variance\n";
  for (int nu = 1; nu <= nu_max(); ++nu) {
    const auto& c = per_shape_[static_cast<std::size_t>(nu - 1)];
    for (std::size_t q = 0; q < c.size(); ++q)
      out << nu << ',' << q + 1 << ',' << csv::format_exact(c.weight[q]) << ',' << csv::format_exact(c.mean[q]) << ','
          << csv::format_exact(c.variance[q]) << '\n';
  }
}

MixtureTable MixtureTable::read(std::istream& in, const std::string& source) {
  const csv::Table t = csv::parse(in, source);
  const std::size_t c_nu = t.require_column("nu");
  const std::size_t c_q = t.require_column("q");
  const std::size_t c_w = t.require_column("weight");
  const std::size_t c_m = t.require_column("mean");
  const std::size_t c_v = t.require_column("variance");
  std::vector<MixtureComponents> per_shape;
  for (const auto& row : t.rows) {
    const std::string where = source + ":" + std::to_string(row.line);
    const auto nu = csv::parse_integer(row.cells[c_nu], where);
    const auto q = csv::parse_integer(row.cells[c_q], where);
    if (nu < 1 || nu > static_cast<long long>(per_shape.size()) + 1)
      throw InputError(where + ": shapes must appear in order starting at 1");
    if (nu == static_cast<long long>(per_shape.size()) + 1) per_shape.emplace_back();
    auto& c = per_shape.back();
    if (q != static_cast<long long>(c.size()) + 1) throw InputError(where + ": components out of order");
    c.weight.push_back(csv::parse_double(row.cells[c_w], where));
    c.mean.push_back(csv::parse_double(row.cells[c_m], where));
    c.variance.push_back(csv::parse_double(row.cells[c_v], where));
  }
  std::vector<double> ks(per_shape.size(), -1.0);
  for (const auto& line : t.comments) {
    if (line.rfind("version=", 0) == 0) {
      if (std::stoi(line.substr(8)) != kFormatVersion)
        throw InputError(source + ": unsupported mixture table version " + line.substr(8));
    } else if (line.rfind("ks=", 0) == 0) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const auto nu = std::stoul(line.substr(3, colon - 3));
      if (nu >= 1 && nu <= ks.size()) ks[nu - 1] = csv::parse_double(line.substr(colon + 1), source);
    }
  }
  return MixtureTable(std::move(per_shape), std::move(ks));
}

MixtureTable MixtureTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open mixture table '" + path.string() + "'");
  return read(in, path.string());
}

void MixtureTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write mixture table '" + path.string() + "'");
  write(out);
}

std::string MixtureTable::checksum() const {
  std::ostringstream s;
  write(s);
  return hex64(fnv1a64(s.str()));
}

MixtureTable fit_mixture_table(int nu_max, const MixtureFitOptions& options, std::vector<std::string>* warnings) {
  if (nu_max < 1) throw InputError("fit_mixture_table: nu_max must be at least 1");
  // Shapes are independent; fit them in parallel.
  std::vector<MixtureFit> fits(static_cast<std::size_t>(nu_max));
  std::atomic<int> next{1};
  {
    const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 16u));
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int nu = next++; nu <= nu_max; nu = next++) fits[static_cast<std::size_t>(nu - 1)] = fit_mixture(nu, options);
      });
  }
  std::vector<MixtureComponents> per_shape;
  std::vector<double> ks;
  for (int nu = 1; nu <= nu_max; ++nu) {
    MixtureFit& fit = fits[static_cast<std::size_t>(nu - 1)];
    if (!fit.target_met && warnings)
      warnings->push_back("nu=" + std::to_string(nu) + ": KS target not met, achieved " + std::to_string(fit.ks));
    per_shape.push_back(std::move(fit.components));
    ks.push_back(fit.ks);
  }
  return MixtureTable(std::move(per_shape), std::move(ks));
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace spagrav
