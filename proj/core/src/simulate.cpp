#include "spagrav/simulate.hpp"

#include <boost/math/distributions/poisson.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

void SimulationSpec::validate() const {
  if (n < 2) throw InputError("simulate: need at least two regions");
  if (countries < 2 || countries > n) throw InputError("simulate: countries must lie in [2, n]");
  if (k < 1 || n < 2 * static_cast<std::size_t>(k))
    throw InputError("simulate: need n >= 2k (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  if (!(std::abs(rho_o) < 1.0) || !(std::abs(rho_d) < 1.0)) throw InputError("simulate: |rho| must be below 1");
  if (!(phi2_o > 0.0) || !(phi2_d > 0.0)) throw InputError("simulate: phi2 must be positive");
  if (gamma.size() != 0 && static_cast<std::size_t>(gamma.size()) != 1 + 4 * p_x + p_d)
    throw InputError("simulate: gamma must have length 1 + 4 p_x + p_d = " + std::to_string(1 + 4 * p_x + p_d));
  if (!gamma.allFinite()) throw InputError("simulate: gamma is not finite");
  if (!covariate_names.empty() && covariate_names.size() != p_x)
    throw InputError("simulate: covariate_names must have p_x entries");
  if (!dyad_covariate_names.empty() && dyad_covariate_names.size() != p_d)
    throw InputError("simulate: dyad_covariate_names must have p_d entries");
  if (!(lon_min < lon_max) || !(lat_min < lat_max) || lat_min < -90.0 || lat_max > 90.0)
    throw InputError("simulate: invalid coordinate patch");
}

Eigen::VectorXd default_gamma(std::size_t p_x, std::size_t p_d) {
  const auto px = static_cast<Eigen::Index>(p_x);
  const auto pd = static_cast<Eigen::Index>(p_d);
  Eigen::VectorXd g(1 + 4 * px + pd);
  g[0] = 0.5;
  for (Eigen::Index j = 0; j < px; ++j) {
    const double sign = j % 2 == 0 ? 1.0 : -1.0;
    g[1 + j] = 0.5 * sign;
    g[1 + px + j] = 0.3 * sign;
    g[1 + 2 * px + pd + j] = 0.2 * sign;
    g[1 + 3 * px + pd + j] = -0.2 * sign;
  }
  for (Eigen::Index j = 0; j < pd; ++j) g[1 + 2 * px + j] = -0.4;
  return g;
}

SimulationSpec demo_spec(std::uint64_t seed) {
  SimulationSpec s;
  s.n = 60;
  s.countries = 6;
  s.p_x = 3;
  s.p_d = 1;
  s.covariate_names = {"gva", "knowledge_stock", "labour_cost"};
  s.dyad_covariate_names = {"log_distance"};
  s.log_distance = true;
  s.gamma.resize(14);
  // alpha0 | beta_o x3 | beta_d x3 | log distance | delta_o x3 | delta_d x3
  s.gamma << -0.8, 0.6, 0.4, -0.3, 0.5, 0.35, -0.25, -0.7, 0.2, 0.15, -0.1, 0.1, 0.2, -0.15;
  s.rho_o = 0.6;
  s.rho_d = 0.4;
  s.phi2_o = 0.4;
  s.phi2_d = 0.3;
  s.seed = seed;
  return s;
}

namespace {

double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

std::string padded(const char* prefix, std::size_t i, std::size_t count) {
  const std::size_t width = std::to_string(count).size();
  std::string digits = std::to_string(i + 1);
  return prefix + std::string(width - digits.size(), '0') + digits;
}

Eigen::VectorXd sar_draw(const WeightMatrix& w, double rho, double phi2, Rng& rng) {
  const auto n = w.rows();
  Eigen::VectorXd nu(n);
  for (Eigen::Index i = 0; i < n; ++i) nu[i] = std::sqrt(phi2) * normal(rng);
  Eigen::SparseMatrix<double> a(n, n);
  a.setIdentity();
  a -= rho * Eigen::SparseMatrix<double>(w);
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(a);
  if (lu.info() != Eigen::Success) throw NumericalError("simulate: I - rho W is singular");
  return lu.solve(nu);
}

}  // namespace

SimulatedDataset simulate_dataset(const SimulationSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.n;

  // Area-uniform points on the patch: longitude uniform, sin(latitude) uniform.
  constexpr double deg = std::numbers::pi / 180.0;
  std::vector<GeoPoint> points(n);
  const double s0 = std::sin(spec.lat_min * deg), s1 = std::sin(spec.lat_max * deg);
  for (auto& p : points) {
    p.lon_deg = uniform(rng, spec.lon_min, spec.lon_max);
    p.lat_deg = std::asin(uniform(rng, s0, s1)) / deg;
  }
  std::vector<std::size_t> by_lon(n);
  std::iota(by_lon.begin(), by_lon.end(), 0);
  std::stable_sort(by_lon.begin(), by_lon.end(),
                   [&](std::size_t a, std::size_t b) { return points[a].lon_deg < points[b].lon_deg; });
  std::vector<std::string> ids(n), countries(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = padded("R", i, n);
  for (std::size_t rank = 0; rank < n; ++rank)
    countries[by_lon[rank]] = padded("C", rank * spec.countries / n, spec.countries);

  std::vector<std::string> names = spec.covariate_names;
  if (names.empty())
    for (std::size_t j = 0; j < spec.p_x; ++j) names.push_back("x" + std::to_string(j + 1));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.p_x));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = normal(rng);
  RegionSet regions(ids, countries, points, names, x);

  SpatialSystem spatial = knn_weights(regions, spec.k);
  DyadFrame dyads = build_dyads(regions, std::span<const FlowRecord>{});
  std::vector<std::string> dyad_names = spec.dyad_covariate_names;
  if (dyad_names.empty())
    for (std::size_t j = 0; j < spec.p_d; ++j) dyad_names.push_back("d" + std::to_string(j + 1));
  dyads.covariate_names = dyad_names;
  dyads.covariates.resize(static_cast<Eigen::Index>(dyads.size()), static_cast<Eigen::Index>(spec.p_d));
  for (Eigen::Index i = 0; i < dyads.covariates.rows(); ++i)
    for (Eigen::Index j = 0; j < dyads.covariates.cols(); ++j) dyads.covariates(i, j) = normal(rng);
  if (spec.log_distance && spec.p_d > 0) {
    Eigen::VectorXd ld(dyads.covariates.rows());
    for (Eigen::Index i = 0; i < ld.size(); ++i)
      ld[i] = std::log(great_circle_km(points[dyads.origin[static_cast<std::size_t>(i)]],
                                       points[dyads.dest[static_cast<std::size_t>(i)]]));
    const double m = ld.mean();
    const double sd = std::sqrt((ld.array() - m).square().sum() / std::max<double>(1.0, static_cast<double>(ld.size() - 1)));
    dyads.covariates.col(0) = (ld.array() - m) / (sd > 0.0 ? sd : 1.0);
  }
  DesignMatrices designs = assemble_designs(regions, dyads, spatial);

  ChainState truth;
  truth.gamma = spec.gamma.size() ? spec.gamma : default_gamma(spec.p_x, spec.p_d);
  truth.rho_o = spec.rho_o;
  truth.rho_d = spec.rho_d;
  truth.phi2_o = spec.phi2_o;
  truth.phi2_d = spec.phi2_d;
  truth.theta_o = sar_draw(spatial.weights(), spec.rho_o, spec.phi2_o, rng);
  truth.theta_d = sar_draw(spatial.weights(), spec.rho_d, spec.phi2_d, rng);

  const Eigen::VectorXd eta = designs.z * truth.gamma;
  for (std::size_t i = 0; i < dyads.size(); ++i) {
    const double e = eta[static_cast<Eigen::Index>(i)] + truth.theta_o[static_cast<Eigen::Index>(dyads.origin[i])] +
                     truth.theta_d[static_cast<Eigen::Index>(dyads.dest[i])];
    if (!(e < 40.0)) throw InputError("simulate: intensity exp(" + std::to_string(e) + ") is too large");
    dyads.flow[i] = std::poisson_distribution<std::int64_t>(std::exp(e))(rng);
  }
  dyads.warnings.clear();
  return {std::move(regions), std::move(dyads), std::move(spatial), std::move(designs), std::move(truth)};
}

std::map<std::string, double> truth_parameters(const SimulatedDataset& data) {
  std::map<std::string, double> out;
  const ChainState& t = data.truth;
  for (std::size_t c = 0; c < data.designs.cols(); ++c)
    out[data.designs.parameter_name(c)] = t.gamma[static_cast<Eigen::Index>(c)];
  out["rho_o"] = t.rho_o;
  out["rho_d"] = t.rho_d;
  out["phi2_o"] = t.phi2_o;
  out["phi2_d"] = t.phi2_d;
  for (std::size_t r = 0; r < data.regions.size(); ++r) {
    out["theta_o[" + data.regions.id(r) + "]"] = t.theta_o[static_cast<Eigen::Index>(r)];
    out["theta_d[" + data.regions.id(r) + "]"] = t.theta_d[static_cast<Eigen::Index>(r)];
  }
  out["alpha0_centred"] = t.gamma[0] + t.theta_o.mean() + t.theta_d.mean();
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

}  // namespace

void write_dataset(const SimulatedDataset& data, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  const RegionSet& r = data.regions;
  {
    auto out = open_out(directory / "regions.csv");
    out << "region_id,country_code,lon,lat";
    for (const auto& name : r.covariate_names()) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < r.size(); ++i) {
      out << r.id(i) << ',' << r.country(i) << ',' << csv::format_exact(r.centroid(i).lon_deg) << ','
          << csv::format_exact(r.centroid(i).lat_deg);
      for (std::size_t j = 0; j < r.covariate_count(); ++j)
        out << ',' << csv::format_exact(r.covariates()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << '\n';
    }
  }
  const DyadFrame& d = data.dyads;
  {
    auto out = open_out(directory / "flows.csv");
    out << "origin_id,dest_id,count\n";
    for (std::size_t i = 0; i < d.size(); ++i) out << r.id(d.origin[i]) << ',' << r.id(d.dest[i]) << ',' << d.flow[i] << '\n';
  }
  if (d.covariate_count() > 0) {
    auto out = open_out(directory / "dyad_covariates.csv");
    out << "origin_id,dest_id";
    for (const auto& name : d.covariate_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
      out << r.id(d.origin[i]) << ',' << r.id(d.dest[i]);
      for (std::size_t j = 0; j < d.covariate_count(); ++j)
        out << ',' << csv::format_exact(d.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << '\n';
    }
  }
  {
    auto out = open_out(directory / "truth.csv");
    out << "parameter,value\n";
    const ChainState& t = data.truth;
    for (std::size_t c = 0; c < data.designs.cols(); ++c)
      out << data.designs.parameter_name(c) << ',' << csv::format_exact(t.gamma[static_cast<Eigen::Index>(c)]) << '\n';
    out << "rho_o," << csv::format_exact(t.rho_o) << "\nrho_d," << csv::format_exact(t.rho_d) << "\nphi2_o,"
        << csv::format_exact(t.phi2_o) << "\nphi2_d," << csv::format_exact(t.phi2_d) << '\n';
    for (std::size_t i = 0; i < r.size(); ++i)
      out << "theta_o[" << r.id(i) << "]," << csv::format_exact(t.theta_o[static_cast<Eigen::Index>(i)]) << '\n';
    for (std::size_t i = 0; i < r.size(); ++i)
      out << "theta_d[" << r.id(i) << "]," << csv::format_exact(t.theta_d[static_cast<Eigen::Index>(i)]) << '\n';
    out << "alpha0_centred," << csv::format_exact(t.gamma[0] + t.theta_o.mean() + t.theta_d.mean()) << '\n';
  }
}

std::map<std::string, double> load_truth(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t cp = t.require_column("parameter");
  const std::size_t cv = t.require_column("value");
  std::map<std::string, double> out;
  for (const auto& row : t.rows) {
    const std::string where = t.source + ":" + std::to_string(row.line);
    if (!out.emplace(row.cells[cp], csv::parse_double(row.cells[cv], where)).second)
      throw InputError(where + ": duplicate parameter '" + row.cells[cp] + "'");
  }
  return out;
}

GoodnessOfFit poisson_gof(double lambda, std::span<const std::int64_t> samples, double alpha) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("poisson_gof: lambda must be positive");
  if (samples.empty()) throw InputError("poisson_gof: no samples");
  const double total = static_cast<double>(samples.size());
  const boost::math::poisson_distribution<double> law(lambda);

  // Cells [edge_c, edge_{c+1}); the last cell is open-ended.
  std::vector<std::int64_t> edges{0};
  std::vector<double> expected;
  double cell = 0.0, covered = 0.0;
  for (std::int64_t k = 0;; ++k) {
    const double p = boost::math::pdf(law, static_cast<double>(k));
    cell += total * p;
    covered += p;
    const double rest = total * std::max(0.0, 1.0 - covered);
    if (cell >= 5.0 && rest >= 5.0) {
      expected.push_back(cell);
      edges.push_back(k + 1);
      cell = 0.0;
    }
    if (rest < 5.0 && static_cast<double>(k) > lambda) {
      expected.push_back(cell + rest);
      break;
    }
  }
  std::vector<double> observed(expected.size(), 0.0);
  for (std::int64_t y : samples) {
    if (y < 0) throw InputError("poisson_gof: negative sample");
    const auto c = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), y) - edges.begin()) - 1;
    observed[c] += 1.0;
  }
  GoodnessOfFit g;
  for (std::size_t c = 0; c < expected.size(); ++c)
    g.statistic += (observed[c] - expected[c]) * (observed[c] - expected[c]) / expected[c];
  g.dof = expected.size() - 1;
  g.p_value = g.dof == 0 ? 1.0 : boost::math::gamma_q(static_cast<double>(g.dof) / 2.0, g.statistic / 2.0);
  g.pass = g.p_value >= alpha;
  return g;
}

GoodnessOfFit poisson_pmf_check(double lambda, std::size_t draws, Rng& rng, double alpha) {
  std::vector<std::int64_t> samples(draws);
  for (auto& y : samples) y = std::poisson_distribution<std::int64_t>(lambda)(rng);
  return poisson_gof(lambda, samples, alpha);
}

}  // namespace spagrav
