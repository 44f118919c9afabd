#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "spagrav/error.hpp"
#include "spagrav/simulate.hpp"
#include "support.hpp"

using namespace spagrav;

namespace {

double moran(const Eigen::VectorXd& x, const WeightMatrix& w) {
  const Eigen::VectorXd c = x.array() - x.mean();
  return static_cast<double>(x.size()) / w.sum() * c.dot(w * c) / c.squaredNorm();
}

SimulationSpec small_spec(std::uint64_t seed) {
  SimulationSpec s;
  s.n = 20;
  s.countries = 4;
  s.p_x = 1;
  s.p_d = 1;
  s.k = 3;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("simulate: zero coefficients and negligible effects give unit-intensity counts") {
  SimulationSpec s = small_spec(3);
  s.n = 60;
  s.countries = 6;
  s.gamma = Eigen::VectorXd::Zero(6);
  s.phi2_o = s.phi2_d = 1e-14;
  const SimulatedDataset d = simulate_dataset(s);
  CHECK(d.dyads.size() == 60 * 50);
  const GoodnessOfFit g = poisson_gof(1.0, d.dyads.flow);
  INFO("p = " << g.p_value);
  CHECK(g.pass);
}

TEST_CASE("simulate: rho = 0 gives iid effects with variance phi2") {
  SimulationSpec s = small_spec(0);
  s.rho_o = s.rho_d = 0.0;
  s.phi2_o = 0.5;
  s.phi2_d = 2.0;
  std::vector<double> o, d;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    s.seed = seed;
    const SimulatedDataset data = simulate_dataset(s);
    o.insert(o.end(), data.truth.theta_o.begin(), data.truth.theta_o.end());
    d.insert(d.end(), data.truth.theta_d.begin(), data.truth.theta_d.end());
  }
  const auto mo = test::sample_moments(o), md = test::sample_moments(d);
  CHECK(std::abs(mo.mean) < 3.0 * mo.se());
  CHECK(std::abs(md.mean) < 3.0 * md.se());
  // Var of a sample variance is about 2 sigma^4 / n for Gaussian data.
  CHECK(std::abs(mo.variance - 0.5) < 3.0 * 0.5 * std::sqrt(2.0 / o.size()));
  CHECK(std::abs(md.variance - 2.0) < 3.0 * 2.0 * std::sqrt(2.0 / d.size()));
}

TEST_CASE("simulate: SAR effects whiten to iid standard normals (n = 6)") {
  // A theta / phi ~ N(0, I) whatever W is, so pooling across seeds is valid
  // even though the centroids and hence W change with the seed.
  SimulationSpec s = small_spec(0);
  s.n = 6;
  s.countries = 2;
  s.k = 2;
  s.rho_o = 0.7;
  s.phi2_o = 0.4;
  const int reps = 10000;
  Eigen::MatrixXd e(reps, 6);
  for (int r = 0; r < reps; ++r) {
    s.seed = static_cast<std::uint64_t>(r) + 1;
    const SimulatedDataset data = simulate_dataset(s);
    const Eigen::MatrixXd w = Eigen::MatrixXd(data.spatial.weights());
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(6, 6) - 0.7 * w;
    e.row(r) = (a * data.truth.theta_o / std::sqrt(0.4)).transpose();
  }
  const Eigen::MatrixXd cov = e.transpose() * e / reps;
  // Entries of the sample second-moment matrix have SE about 1/sqrt(reps)
  // off the diagonal and sqrt(2/reps) on it.
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) {
      const double target = i == j ? 1.0 : 0.0;
      const double se = (i == j ? std::sqrt(2.0) : 1.0) / std::sqrt(static_cast<double>(reps));
      INFO(i << "," << j << ": " << cov(i, j));
      CHECK(std::abs(cov(i, j) - target) < 4.0 * se);
    }
}

TEST_CASE("simulate: strong positive rho gives positive spatial autocorrelation") {
  SimulationSpec s = small_spec(0);
  s.n = 60;
  s.countries = 6;
  s.k = 7;
  double strong = 0.0, none = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    s.seed = static_cast<std::uint64_t>(r) + 1;
    s.rho_o = 0.7;
    s.rho_d = 0.0;
    const SimulatedDataset d = simulate_dataset(s);
    strong += moran(d.truth.theta_o, d.spatial.weights());
    none += moran(d.truth.theta_d, d.spatial.weights());
  }
  strong /= reps;
  none /= reps;
  CHECK(strong > 0.3);
  CHECK(std::abs(none + 1.0 / 59.0) < 0.03);
}

TEST_CASE("simulate: same seed same data, different seed different data") {
  const SimulatedDataset a = simulate_dataset(small_spec(7));
  const SimulatedDataset b = simulate_dataset(small_spec(7));
  const SimulatedDataset c = simulate_dataset(small_spec(8));
  CHECK(a.dyads.flow == b.dyads.flow);
  CHECK(a.truth.theta_o == b.truth.theta_o);
  CHECK(a.designs.z == b.designs.z);
  CHECK(a.dyads.flow != c.dyads.flow);
}

TEST_CASE("simulate: written data set reloads into identical designs") {
  SimulationSpec s = demo_spec(3);
  const SimulatedDataset d = simulate_dataset(s);
  test::TempDir dir("sim");
  write_dataset(d, dir.path());
  const RegionSet r = load_regions(dir / "regions.csv");
  DyadOptions opt;
  opt.covariates_file = dir / "dyad_covariates.csv";
  const DyadFrame f = build_dyads(r, dir / "flows.csv", opt);
  const SpatialSystem sp = knn_weights(r, s.k);
  const DesignMatrices z = assemble_designs(r, f, sp);
  CHECK(f.flow == d.dyads.flow);
  CHECK(z.z == d.designs.z);
  CHECK(z.column_names == d.designs.column_names);
  const auto truth = load_truth(dir / "truth.csv");
  const auto expect = truth_parameters(d);
  CHECK(truth == expect);
  CHECK(truth.at("alpha0") == -0.8);
  CHECK(truth.at("alpha0_centred") == doctest::Approx(-0.8 + d.truth.theta_o.mean() + d.truth.theta_d.mean()));
}

TEST_CASE("simulate: invalid specs are rejected") {
  SimulationSpec s = small_spec(1);
  s.k = 11;
  CHECK_THROWS_AS(simulate_dataset(s), InputError);
  s = small_spec(1);
  s.rho_o = 1.0;
  CHECK_THROWS_AS(simulate_dataset(s), InputError);
  s = small_spec(1);
  s.gamma = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(simulate_dataset(s), InputError);
  s = small_spec(1);
  s.gamma = Eigen::VectorXd::Constant(6, 10.0);
  CHECK_THROWS_AS(simulate_dataset(s), InputError);
}

TEST_CASE("poisson pmf check: correct sampler passes, biased sampler fails") {
  Rng rng(12);
  CHECK(poisson_pmf_check(2.0, 100000, rng).pass);
  CHECK(poisson_pmf_check(0.3, 100000, rng).pass);
  CHECK(poisson_pmf_check(25.0, 100000, rng).pass);
  std::vector<std::int64_t> biased(100000);
  std::poisson_distribution<std::int64_t> wrong(2.4);
  for (auto& v : biased) v = wrong(rng);
  const GoodnessOfFit g = poisson_gof(2.0, biased);
  CHECK_FALSE(g.pass);
  CHECK(g.p_value < 1e-6);
  // Essentially all mass at zero leaves nothing to test.
  const GoodnessOfFit tiny = poisson_pmf_check(1e-8, 1000, rng);
  CHECK(tiny.pass);
  CHECK_THROWS_AS(poisson_gof(-1.0, biased), InputError);
}
