#pragma once

// Small fixed instances and dense-matrix versions of the Gibbs conditionals,
// written directly from the stacked model so they share no code with the
// sampler's collapsed sparse implementation.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "spagrav/design.hpp"
#include "spagrav/domain.hpp"
#include "spagrav/sampler.hpp"
#include "spagrav/spatial.hpp"
#include "support.hpp"

namespace spagrav::test {

// n = 4 regions in two countries (N = 8 dyads), one region covariate, one
// dyad covariate, 2-nearest-neighbour weights with an exact grid.
struct MicroInstance {
  RegionSet regions;
  DyadFrame dyads;
  SpatialSystem spatial;
  DesignMatrices designs;
  std::vector<std::int64_t> y;
};

inline std::unique_ptr<MicroInstance> make_micro(std::uint64_t seed = 42, std::size_t resolution = 400) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(4, 1);
  for (Eigen::Index i = 0; i < 4; ++i) x(i, 0) = z(rng);
  RegionSet regions({"A1", "A2", "B1", "B2"}, {"A", "A", "B", "B"},
                    {{0.0, 50.0}, {1.5, 50.3}, {4.0, 49.0}, {5.0, 51.0}}, {"x"}, x);
  DyadFrame dyads = build_dyads(regions, std::span<const FlowRecord>{});
  dyads.covariate_names = {"d"};
  dyads.covariates.resize(static_cast<Eigen::Index>(dyads.size()), 1);
  for (Eigen::Index i = 0; i < dyads.covariates.rows(); ++i) dyads.covariates(i, 0) = z(rng);
  SpatialSystem spatial = knn_weights(regions, 2);
  spatial.set_logdet_grid(build_logdet_grid(spatial, {resolution}));
  DesignMatrices designs = assemble_designs(regions, dyads, spatial);
  std::vector<std::int64_t> y(dyads.size());
  std::poisson_distribution<std::int64_t> pois(1.5);
  for (auto& v : y) v = pois(rng);
  y[0] = 0;
  y[1] = 3;
  return std::unique_ptr<MicroInstance>(new MicroInstance{std::move(regions), std::move(dyads), std::move(spatial),
                                                          std::move(designs), std::move(y)});
}

// State with every block set to arbitrary values and a fresh augmented block.
inline ChainState scrambled_state(const GibbsSampler& sampler, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 0.3);
  ChainState s = sampler.initial_state();
  for (Eigen::Index i = 0; i < s.gamma.size(); ++i) s.gamma[i] = z(rng);
  for (Eigen::Index i = 0; i < s.theta_o.size(); ++i) s.theta_o[i] = z(rng), s.theta_d[i] = z(rng);
  s.rho_o = 0.4;
  s.rho_d = -0.3;
  s.phi2_o = 0.6;
  s.phi2_d = 1.4;
  sampler.initialise_augmented(s, rng);
  return s;
}

struct DenseStack {
  Eigen::MatrixXd z;    // N+ x P
  Eigen::MatrixXd v_o;  // N+ x n
  Eigen::MatrixXd v_d;
  Eigen::VectorXd omega_inv;
  Eigen::VectorXd ytilde;
};

inline DenseStack dense_stack(const DesignMatrices& d, const std::vector<std::int64_t>& y, const AugmentedState& a) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < y.size(); ++i) rows.push_back(i);
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > 0) rows.push_back(i);
  const auto m = static_cast<Eigen::Index>(rows.size());
  DenseStack s;
  s.z.resize(m, d.z.cols());
  std::vector<std::size_t> om, dm;
  for (Eigen::Index j = 0; j < m; ++j) {
    s.z.row(j) = d.z.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(j)]));
    om.push_back(d.origin_map[rows[static_cast<std::size_t>(j)]]);
    dm.push_back(d.dest_map[rows[static_cast<std::size_t>(j)]]);
  }
  s.v_o = dummy_matrix(om, d.region_count);
  s.v_d = dummy_matrix(dm, d.region_count);
  s.omega_inv = a.omega.cwiseInverse();
  s.ytilde = a.working_response;
  return s;
}

inline GaussianConditional dense_gamma_conditional(const DenseStack& s, const ChainState& st,
                                                   const Eigen::VectorXd& prior_mean, const Eigen::VectorXd& prior_prec) {
  const Eigen::MatrixXd q = s.z.transpose() * s.omega_inv.asDiagonal() * s.z + Eigen::MatrixXd(prior_prec.asDiagonal());
  const Eigen::VectorXd r = s.z.transpose() * s.omega_inv.asDiagonal() * (s.ytilde - s.v_o * st.theta_o - s.v_d * st.theta_d) +
                            prior_prec.cwiseProduct(prior_mean);
  GaussianConditional g;
  g.covariance = q.inverse();
  g.mean = g.covariance * r;
  return g;
}

inline GaussianConditional dense_theta_conditional(const DenseStack& s, const ChainState& st, const Eigen::MatrixXd& w,
                                                   EffectSide side) {
  const bool origin = side == EffectSide::origin;
  const Eigen::MatrixXd& v = origin ? s.v_o : s.v_d;
  const Eigen::MatrixXd& v_other = origin ? s.v_d : s.v_o;
  const Eigen::VectorXd& other = origin ? st.theta_d : st.theta_o;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(w.rows(), w.cols()) - st.rho(side) * w;
  const Eigen::MatrixXd q = a.transpose() * a / st.phi2(side) + v.transpose() * s.omega_inv.asDiagonal() * v;
  const Eigen::VectorXd r = v.transpose() * s.omega_inv.asDiagonal() * (s.ytilde - s.z * st.gamma - v_other * other);
  GaussianConditional g;
  g.covariance = q.inverse();
  g.mean = g.covariance * r;
  return g;
}

}  // namespace spagrav::test
