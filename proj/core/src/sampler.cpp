#include "spagrav/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

namespace spagrav {

const char* rho_update_name(RhoUpdate update) {
  return update == RhoUpdate::griddy ? "griddy" : "metropolis";
}

RhoUpdate parse_rho_update(const std::string& name) {
  if (name == "griddy") return RhoUpdate::griddy;
  if (name == "metropolis") return RhoUpdate::metropolis;
  throw InputError("unknown rho update '" + name + "' (expected griddy or metropolis)");
}

void PriorSpec::validate(std::size_t p) const {
  auto check = [p](const Eigen::VectorXd& v, const char* what) {
    if (v.size() != 0 && v.size() != 1 && static_cast<std::size_t>(v.size()) != p)
      throw InputError(std::string("prior ") + what + " has length " + std::to_string(v.size()) + ", expected 1 or " +
                       std::to_string(p));
    if (!v.allFinite()) throw InputError(std::string("prior ") + what + " is not finite");
  };
  check(gamma_mean, "gamma_mean");
  check(gamma_variance, "gamma_variance");
  if ((gamma_variance.array() <= 0.0).any()) throw InputError("prior gamma_variance must be positive");
  if (!(ig_s > 0.0) || !(ig_v > 0.0) || !std::isfinite(ig_s) || !std::isfinite(ig_v))
    throw InputError("inverse-gamma prior hyperparameters must be positive");
}

Eigen::VectorXd PriorSpec::mean_vector(std::size_t p) const {
  const auto n = static_cast<Eigen::Index>(p);
  if (gamma_mean.size() == 0) return Eigen::VectorXd::Zero(n);
  if (gamma_mean.size() == 1) return Eigen::VectorXd::Constant(n, gamma_mean[0]);
  return gamma_mean;
}

Eigen::VectorXd PriorSpec::precision_vector(std::size_t p) const {
  const auto n = static_cast<Eigen::Index>(p);
  if (gamma_variance.size() == 0) return Eigen::VectorXd::Constant(n, 1e-4);
  if (gamma_variance.size() == 1) return Eigen::VectorXd::Constant(n, 1.0 / gamma_variance[0]);
  return gamma_variance.cwiseInverse();
}

InverseGammaParams phi2_posterior(double quadratic, std::size_t n, double s, double v) {
  return {(static_cast<double>(n) + s) / 2.0, (quadratic + s * v) / 2.0};
}

namespace {

double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

// Uniform on the open interval (0, 1).
double open_uniform(Rng& rng) {
  for (;;) {
    const double u = std::generate_canonical<double, 53>(rng);
    if (u > 0.0 && u < 1.0) return u;
  }
}

Eigen::VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = standard_normal(rng);
  return z;
}

}  // namespace

GibbsSampler::GibbsSampler(const DesignMatrices& designs, std::span<const std::int64_t> y, const SpatialSystem& effects,
                           const MixtureTable& mixture, PriorSpec priors, SamplerOptions options)
    : designs_(designs),
      y_(y.begin(), y.end()),
      effects_(effects),
      mixture_checksum_(mixture.checksum()),
      priors_(std::move(priors)),
      options_(options),
      n_dyads_(designs.rows()),
      n_regions_(designs.region_count),
      n_coef_(designs.cols()) {
  if (y_.size() != n_dyads_)
    throw InputError("sampler: " + std::to_string(y_.size()) + " counts for " + std::to_string(n_dyads_) + " dyads");
  if (n_dyads_ == 0) throw InputError("sampler: no dyads");
  if (effects_.size() != n_regions_) throw InputError("sampler: weight matrix does not match the region count");
  if (options_.rho_update == RhoUpdate::griddy && !effects_.has_logdet_grid())
    throw InputError("sampler: griddy rho update needs a log-determinant grid");
  if (!(options_.initial_proposal_scale > 0.0) || !(options_.target_low < options_.target_high) ||
      options_.adapt_window == 0)
    throw InputError("sampler: invalid Metropolis settings");
  priors_.validate(n_coef_);
  prior_mean_ = priors_.mean_vector(n_coef_);
  prior_precision_ = priors_.precision_vector(n_coef_);

  for (std::size_t i = 0; i < n_dyads_; ++i) {
    if (y_[i] < 0) throw InputError("sampler: negative count at dyad " + std::to_string(i));
    if (y_[i] > 0) positive_.push_back(i);
  }

  // One indicator kernel per distinct shape.
  std::map<std::int64_t, std::size_t> kernel_of;
  auto kernel_for = [&](std::int64_t nu) {
    auto it = kernel_of.find(nu);
    if (it != kernel_of.end()) return it->second;
    if (nu > std::numeric_limits<int>::max()) throw InputError("sampler: count too large");
    const MixtureComponents c = mixture.components(static_cast<int>(nu));
    if (c.size() > kMaxComponents) throw InputError("sampler: mixture has more than 32 components");
    ComponentKernel k;
    for (std::size_t q = 0; q < c.size(); ++q) {
      k.log_const.push_back(std::log(c.weight[q]) - 0.5 * std::log(2.0 * std::numbers::pi * c.variance[q]));
      k.mean.push_back(c.mean[q]);
      k.variance.push_back(c.variance[q]);
      k.half_precision.push_back(0.5 / c.variance[q]);
    }
    kernels_.push_back(std::move(k));
    kernel_of.emplace(nu, kernels_.size() - 1);
    return kernels_.size() - 1;
  };
  row_kernel_.reserve(stacked_count());
  for (std::size_t i = 0; i < n_dyads_; ++i) row_kernel_.push_back(kernel_for(1));
  for (std::size_t i : positive_) row_kernel_.push_back(kernel_for(y_[i]));

  // (I - rho W)'(I - rho W) = I - rho (W + W') + rho^2 W'W on a fixed pattern.
  using ColMatrix = Eigen::SparseMatrix<double>;
  const ColMatrix w = effects_.weights();
  ColMatrix id(w.rows(), w.cols());
  id.setIdentity();
  const ColMatrix sym = w + ColMatrix(w.transpose());
  const ColMatrix gram = ColMatrix(w.transpose()) * w;
  sar_.matrix = id + sym + gram;
  sar_.matrix.makeCompressed();
  const auto nnz = static_cast<std::size_t>(sar_.matrix.nonZeros());
  sar_.identity.assign(nnz, 0.0);
  sar_.symmetric.assign(nnz, 0.0);
  sar_.gram.assign(nnz, 0.0);
  sar_.diagonal.assign(n_regions_, 0);
  std::size_t pos = 0;
  for (Eigen::Index c = 0; c < sar_.matrix.outerSize(); ++c)
    for (ColMatrix::InnerIterator it(sar_.matrix, c); it; ++it, ++pos) {
      sar_.identity[pos] = it.row() == it.col() ? 1.0 : 0.0;
      sar_.symmetric[pos] = sym.coeff(it.row(), it.col());
      sar_.gram[pos] = gram.coeff(it.row(), it.col());
      if (it.row() == it.col()) sar_.diagonal[static_cast<std::size_t>(c)] = pos;
    }
  theta_solver_.analyzePattern(sar_.matrix);

  for (std::size_t c = 0; c < n_coef_; ++c)
    if (designs_.column_blocks[c] == ColumnBlock::intercept) intercept_ = c;
  for (EffectSide side : {EffectSide::origin, EffectSide::destination}) {
    const bool origin = side == EffectSide::origin;
    const auto& map = origin ? designs_.origin_map : designs_.dest_map;
    RidgeBasis& b = ridge_[origin ? 0 : 1];
    for (std::size_t c = 0; c < n_coef_; ++c) {
      const ColumnBlock k = designs_.column_blocks[c];
      if (origin ? (k == ColumnBlock::origin || k == ColumnBlock::origin_lag)
                 : (k == ColumnBlock::destination || k == ColumnBlock::destination_lag))
        b.columns.push_back(c);
    }
    if (b.columns.empty()) continue;
    const auto m = static_cast<Eigen::Index>(b.columns.size());
    b.u = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_regions_), m, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < n_dyads_; ++i)
      for (Eigen::Index k = 0; k < m; ++k)
        b.u(static_cast<Eigen::Index>(map[i]), k) =
            designs_.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.columns[static_cast<std::size_t>(k)]));
    // Regions without dyads are free to move; any fixed row keeps the move
    // valid, and the column mean makes it a zero row after demeaning.
    b.means = Eigen::VectorXd::Zero(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      double s = 0.0;
      Eigen::Index seen = 0;
      for (Eigen::Index r = 0; r < b.u.rows(); ++r)
        if (!std::isnan(b.u(r, k))) s += b.u(r, k), ++seen;
      const double mean = seen ? s / static_cast<double>(seen) : 0.0;
      for (Eigen::Index r = 0; r < b.u.rows(); ++r)
        if (std::isnan(b.u(r, k))) b.u(r, k) = mean;
      if (intercept_) {
        b.means[k] = b.u.col(k).mean();
        b.u.col(k).array() -= b.means[k];
      }
    }
  }
}

int GibbsSampler::stacked_shape(std::size_t j) const {
  return j < n_dyads_ ? 1 : static_cast<int>(y_[positive_[j - n_dyads_]]);
}

ChainState GibbsSampler::initial_state() const {
  ChainState s;
  s.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_coef_));
  double mean_y = 0.0;
  for (auto v : y_) mean_y += static_cast<double>(v);
  mean_y /= static_cast<double>(n_dyads_);
  s.gamma[0] = std::log(mean_y + 0.01);
  s.theta_o = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_regions_));
  s.theta_d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_regions_));
  s.rho_o = s.rho_d = 0.0;
  s.phi2_o = s.phi2_d = 1.0;
  s.proposal_o.scale = s.proposal_d.scale = options_.initial_proposal_scale;
  return s;
}

void GibbsSampler::initialise_augmented(ChainState& state, Rng& rng) const {
  step_tau(state, rng);
  step_indicators(state, rng);
}

Eigen::VectorXd GibbsSampler::linear_predictor(const ChainState& state) const {
  Eigen::VectorXd eta = designs_.z * state.gamma;
  for (std::size_t i = 0; i < n_dyads_; ++i)
    eta[static_cast<Eigen::Index>(i)] += state.theta_o[static_cast<Eigen::Index>(designs_.origin_map[i])] +
                                         state.theta_d[static_cast<Eigen::Index>(designs_.dest_map[i])];
  return eta;
}

Eigen::VectorXd GibbsSampler::clamped_predictor(const ChainState& state, std::uint64_t* overflow) const {
  Eigen::VectorXd eta = linear_predictor(state);
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (std::isnan(eta[i]) || eta[i] == -std::numeric_limits<double>::infinity())
      throw NumericalError("non-finite linear predictor at dyad " + std::to_string(i));
    if (eta[i] > kMaxLinearPredictor) {
      eta[i] = kMaxLinearPredictor;
      if (overflow) ++*overflow;
    }
  }
  return eta;
}

Eigen::VectorXd GibbsSampler::intensity(ChainState& state) const {
  return clamped_predictor(state, &state.overflow_events).array().exp();
}

void GibbsSampler::collapse(const ChainState& state, Eigen::VectorXd& weight, Eigen::VectorXd& weighted) const {
  const AugmentedState& a = state.augmented;
  if (static_cast<std::size_t>(a.omega.size()) != stacked_count())
    throw NumericalError("augmented state is not initialised");
  weight = a.omega.head(static_cast<Eigen::Index>(n_dyads_)).cwiseInverse();
  weighted = a.working_response.head(static_cast<Eigen::Index>(n_dyads_)).cwiseProduct(weight);
  for (std::size_t k = 0; k < positive_.size(); ++k) {
    const auto j = static_cast<Eigen::Index>(n_dyads_ + k);
    const auto i = static_cast<Eigen::Index>(positive_[k]);
    const double inv = 1.0 / a.omega[j];
    weight[i] += inv;
    weighted[i] += a.working_response[j] * inv;
  }
}

void GibbsSampler::gamma_system(const ChainState& state, Eigen::MatrixXd& precision, Eigen::VectorXd& rhs) const {
  Eigen::VectorXd a, b;
  collapse(state, a, b);
  // Z'Ω⁻¹Z collapses to Z' diag(a) Z because every stacked row of a dyad
  // shares that dyad's design row.
  for (std::size_t i = 0; i < n_dyads_; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    b[ii] -= a[ii] * (state.theta_o[static_cast<Eigen::Index>(designs_.origin_map[i])] +
                      state.theta_d[static_cast<Eigen::Index>(designs_.dest_map[i])]);
  }
  const Eigen::MatrixXd root = designs_.z.array().colwise() * a.array().sqrt();
  precision = Eigen::MatrixXd::Zero(root.cols(), root.cols());
  precision.selfadjointView<Eigen::Lower>().rankUpdate(root.transpose());
  precision.diagonal() += prior_precision_;
  precision.triangularView<Eigen::StrictlyUpper>() = precision.transpose();
  rhs = designs_.z.transpose() * b + prior_precision_.cwiseProduct(prior_mean_);
}

GaussianConditional GibbsSampler::gamma_conditional(const ChainState& state) const {
  Eigen::MatrixXd precision;
  Eigen::VectorXd rhs;
  gamma_system(state, precision, rhs);
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("gamma precision is not positive definite");
  GaussianConditional g;
  g.mean = llt.solve(rhs);
  g.covariance = llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
  return g;
}

void GibbsSampler::step_gamma(ChainState& state, Rng& rng) {
  Eigen::MatrixXd precision;
  Eigen::VectorXd rhs;
  gamma_system(state, precision, rhs);
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("gamma precision is not positive definite");
  // L L' = Q: mean Q⁻¹ rhs plus L'⁻¹ z has covariance Q⁻¹.
  const Eigen::VectorXd z = standard_normal_vector(precision.rows(), rng);
  state.gamma = llt.solve(rhs) + llt.matrixU().solve(z);
}

void GibbsSampler::theta_system(const ChainState& state, EffectSide side, Eigen::SparseMatrix<double>& precision,
                                Eigen::VectorXd& rhs) const {
  Eigen::VectorXd a, b;
  collapse(state, a, b);
  const Eigen::VectorXd zg = designs_.z * state.gamma;
  const bool origin = side == EffectSide::origin;
  const auto& own = origin ? designs_.origin_map : designs_.dest_map;
  const auto& other = origin ? designs_.dest_map : designs_.origin_map;
  const Eigen::VectorXd& other_theta = origin ? state.theta_d : state.theta_o;

  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_regions_));
  rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_regions_));
  for (std::size_t i = 0; i < n_dyads_; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto r = static_cast<Eigen::Index>(own[i]);
    c[r] += a[ii];
    rhs[r] += b[ii] - a[ii] * (zg[ii] + other_theta[static_cast<Eigen::Index>(other[i])]);
  }

  const double rho = state.rho(side);
  const double inv_phi2 = 1.0 / state.phi2(side);
  precision = sar_.matrix;
  double* v = precision.valuePtr();
  for (std::size_t k = 0; k < sar_.identity.size(); ++k)
    v[k] = inv_phi2 * (sar_.identity[k] - rho * sar_.symmetric[k] + rho * rho * sar_.gram[k]);
  for (std::size_t r = 0; r < n_regions_; ++r) v[sar_.diagonal[r]] += c[static_cast<Eigen::Index>(r)];
}

GaussianConditional GibbsSampler::theta_conditional(const ChainState& state, EffectSide side) const {
  Eigen::SparseMatrix<double> q;
  Eigen::VectorXd rhs;
  theta_system(state, side, q, rhs);
  const Eigen::MatrixXd dense(q);
  Eigen::LLT<Eigen::MatrixXd> llt(dense);
  if (llt.info() != Eigen::Success) throw NumericalError("theta precision is not positive definite");
  GaussianConditional g;
  g.mean = llt.solve(rhs);
  g.covariance = llt.solve(Eigen::MatrixXd::Identity(dense.rows(), dense.cols()));
  return g;
}

void GibbsSampler::step_theta(ChainState& state, EffectSide side, Rng& rng) {
  Eigen::SparseMatrix<double> q;
  Eigen::VectorXd rhs;
  theta_system(state, side, q, rhs);
  theta_solver_.factorize(q);
  if (theta_solver_.info() != Eigen::Success) throw NumericalError("theta precision is not positive definite");
  // P Q P' = L L', so P' L'⁻¹ z has covariance Q⁻¹.
  const Eigen::VectorXd z = standard_normal_vector(static_cast<Eigen::Index>(n_regions_), rng);
  const Eigen::VectorXd u = theta_solver_.matrixU().solve(z);
  state.theta(side) = theta_solver_.solve(rhs) + theta_solver_.permutationPinv() * u;
}

void GibbsSampler::recenter(ChainState& state, EffectSide side) const {
  Eigen::VectorXd& theta = state.theta(side);
  const double m = theta.mean();
  theta.array() -= m;
  state.gamma[0] += m;
}

void GibbsSampler::ridge_system(const ChainState& state, EffectSide side, Eigen::MatrixXd& precision,
                                Eigen::VectorXd& rhs) const {
  const RidgeBasis& b = ridge_[side == EffectSide::origin ? 0 : 1];
  // The likelihood is flat along the ridge, so only the priors on theta_x,
  // gamma_S and alpha0 shape the conditional of delta.
  const double rho = state.rho(side), inv_phi2 = 1.0 / state.phi2(side);
  const Eigen::VectorXd& theta = state.theta(side);
  const Eigen::MatrixXd au = b.u - rho * (effects_.weights() * b.u);
  const Eigen::VectorXd at = theta - rho * (effects_.weights() * theta);
  precision = inv_phi2 * au.transpose() * au;
  rhs = inv_phi2 * au.transpose() * at;
  for (Eigen::Index k = 0; k < precision.rows(); ++k) {
    const auto j = static_cast<Eigen::Index>(b.columns[static_cast<std::size_t>(k)]);
    precision(k, k) += prior_precision_[j];
    rhs[k] -= prior_precision_[j] * (state.gamma[j] - prior_mean_[j]);
  }
  if (intercept_) {
    const auto j = static_cast<Eigen::Index>(*intercept_);
    precision += prior_precision_[j] * b.means * b.means.transpose();
    rhs += prior_precision_[j] * (state.gamma[j] - prior_mean_[j]) * b.means;
  }
}

GaussianConditional GibbsSampler::ridge_conditional(const ChainState& state, EffectSide side) const {
  Eigen::MatrixXd precision;
  Eigen::VectorXd rhs;
  ridge_system(state, side, precision, rhs);
  GaussianConditional out;
  out.covariance = precision.inverse();
  out.mean = precision.llt().solve(rhs);
  return out;
}

void GibbsSampler::step_ridge(ChainState& state, EffectSide side, Rng& rng) const {
  const RidgeBasis& b = ridge_[side == EffectSide::origin ? 0 : 1];
  if (b.columns.empty()) return;
  Eigen::MatrixXd precision;
  Eigen::VectorXd rhs;
  ridge_system(state, side, precision, rhs);
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("ridge precision is not positive definite");
  const Eigen::VectorXd delta = llt.solve(rhs) + llt.matrixU().solve(standard_normal_vector(precision.rows(), rng));
  for (Eigen::Index k = 0; k < delta.size(); ++k)
    state.gamma[static_cast<Eigen::Index>(b.columns[static_cast<std::size_t>(k)])] += delta[k];
  state.theta(side) -= b.u * delta;
  if (intercept_) state.gamma[static_cast<Eigen::Index>(*intercept_)] -= b.means.dot(delta);
}

InverseGammaParams GibbsSampler::phi2_conditional(const ChainState& state, EffectSide side) const {
  const double q = sar_quadratic(state.theta(side), state.rho(side), effects_);
  return phi2_posterior(q, n_regions_, priors_.ig_s, priors_.ig_v);
}

void GibbsSampler::step_phi2(ChainState& state, EffectSide side, Rng& rng) const {
  const InverseGammaParams p = phi2_conditional(state, side);
  // X ~ Gamma(shape, 1) gives scale / X ~ InverseGamma(shape, scale).
  double x = 0.0;
  while (!(x > 0.0)) x = std::gamma_distribution<double>(p.shape, 1.0)(rng);
  state.phi2(side) = p.scale / x;
  if (!(state.phi2(side) > 0.0) || !std::isfinite(state.phi2(side)))
    throw NumericalError("phi2 draw left (0, inf)");
}

std::vector<double> GibbsSampler::rho_log_kernel(const ChainState& state, EffectSide side) const {
  const LogDetGrid& grid = effects_.logdet_grid();
  const SarQuadraticForm q = sar_quadratic_form(state.theta(side), effects_.weights());
  const double half_inv_phi2 = 0.5 / state.phi2(side);
  std::vector<double> out(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) out[g] = grid.value[g] - half_inv_phi2 * q(grid.rho[g]);
  return out;
}

double GibbsSampler::rho_log_target(const ChainState& state, EffectSide side, double rho) const {
  double logdet;
  if (effects_.has_logdet_grid() && rho >= effects_.logdet_grid().rho.front() &&
      rho <= effects_.logdet_grid().rho.back())
    logdet = effects_.logdet_grid().at(rho);
  else
    logdet = exact_logdet(effects_.weights(), rho);
  return logdet - 0.5 / state.phi2(side) * sar_quadratic(state.theta(side), rho, effects_);
}

void GibbsSampler::step_rho(ChainState& state, EffectSide side, Rng& rng, bool adapt) const {
  if (options_.rho_update == RhoUpdate::griddy) {
    const std::vector<double> lk = rho_log_kernel(state, side);
    state.rho(side) = sample_griddy(effects_.logdet_grid().rho, lk, rng);
    return;
  }
  RhoProposal& p = state.proposal(side);
  const double current = state.rho(side);
  const double proposal = current + p.scale * standard_normal(rng);
  ++p.proposed;
  ++p.window_proposed;
  if (std::abs(proposal) < 1.0) {
    const double log_ratio = rho_log_target(state, side, proposal) - rho_log_target(state, side, current);
    if (log_ratio >= 0.0 || std::log(open_uniform(rng)) < log_ratio) {
      state.rho(side) = proposal;
      ++p.accepted;
      ++p.window_accepted;
    }
  }
  if (p.window_proposed >= options_.adapt_window) {
    if (adapt) {
      const double rate = static_cast<double>(p.window_accepted) / static_cast<double>(p.window_proposed);
      if (rate < options_.target_low) p.scale /= 1.1;
      if (rate > options_.target_high) p.scale = std::min(p.scale * 1.1, 2.0);
    }
    p.window_proposed = p.window_accepted = 0;
  }
}

void GibbsSampler::step_tau(ChainState& state, Rng& rng) const {
  const Eigen::VectorXd lambda = clamped_predictor(state, &state.overflow_events).array().exp();
  AugmentedState& a = state.augmented;
  a.tau.resize(static_cast<Eigen::Index>(stacked_count()));
  // Park xi in the tau_i1 slots, then finish each row.
  for (std::size_t i = 0; i < n_dyads_; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double xi = 0.0;
    while (!(xi > 0.0)) xi = std::exponential_distribution<double>(lambda[ii])(rng);
    a.tau[ii] = xi;
  }
  for (std::size_t k = 0; k < positive_.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(positive_[k]);
    const auto j = static_cast<Eigen::Index>(n_dyads_ + k);
    // Beta(y, 1) by inversion, tau2 = U^(1/y); 1 - tau2 kept accurate near 1.
    const double log_tau2 = std::log(open_uniform(rng)) / static_cast<double>(y_[static_cast<std::size_t>(i)]);
    a.tau[j] = std::exp(log_tau2);
    a.tau[i] -= std::expm1(log_tau2);
  }
  for (std::size_t i = 0; i < n_dyads_; ++i)
    if (y_[i] == 0) a.tau[static_cast<Eigen::Index>(i)] += 1.0;
}

void GibbsSampler::step_indicators(ChainState& state, Rng& rng) const {
  const Eigen::VectorXd eta = clamped_predictor(state, nullptr);
  AugmentedState& a = state.augmented;
  const std::size_t rows = stacked_count();
  if (static_cast<std::size_t>(a.tau.size()) != rows) throw NumericalError("tau is not initialised");
  a.indicator.resize(rows);
  a.omega.resize(static_cast<Eigen::Index>(rows));
  a.working_response.resize(static_cast<Eigen::Index>(rows));
  double logp[kMaxComponents];
  for (std::size_t j = 0; j < rows; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const ComponentKernel& k = kernels_[row_kernel_[j]];
    const double neg_log_tau = -std::log(a.tau[jj]);
    const double residual = neg_log_tau - eta[static_cast<Eigen::Index>(stacked_dyad(j))];
    std::size_t pick = 0;
    const std::size_t qn = k.mean.size();
    if (qn > 1) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < qn; ++q) {
        const double d = residual - k.mean[q];
        logp[q] = k.log_const[q] - k.half_precision[q] * d * d;
        top = std::max(top, logp[q]);
      }
      double total = 0.0;
      for (std::size_t q = 0; q < qn; ++q) total += (logp[q] = std::exp(logp[q] - top));
      double u = std::generate_canonical<double, 53>(rng) * total;
      pick = qn - 1;
      for (std::size_t q = 0; q < qn; ++q) {
        if (u < logp[q]) {
          pick = q;
          break;
        }
        u -= logp[q];
      }
      // Only zero-mass components can follow the last positive one.
      while (pick > 0 && logp[pick] == 0.0) --pick;
    }
    a.indicator[j] = static_cast<int>(pick);
    a.omega[jj] = k.variance[pick];
    a.working_response[jj] = neg_log_tau - k.mean[pick];
  }
}

void GibbsSampler::sweep(ChainState& state, Rng& rng, bool adapt) {
  step_gamma(state, rng);
  for (EffectSide side : {EffectSide::origin, EffectSide::destination}) {
    step_theta(state, side, rng);
    if (options_.recenter_effects) recenter(state, side);
  }
  if (options_.ridge_moves) {
    step_ridge(state, EffectSide::origin, rng);
    step_ridge(state, EffectSide::destination, rng);
  }
  step_phi2(state, EffectSide::origin, rng);
  step_phi2(state, EffectSide::destination, rng);
  if (options_.update_rho) {
    step_rho(state, EffectSide::origin, rng, adapt);
    step_rho(state, EffectSide::destination, rng, adapt);
  }
  step_tau(state, rng);
  step_indicators(state, rng);
  if (options_.check_invariants) check_invariants(state);
}

void GibbsSampler::check_invariants(const ChainState& state) const {
  if (!state.gamma.allFinite()) throw NumericalError("gamma is not finite");
  if (!state.theta_o.allFinite() || !state.theta_d.allFinite()) throw NumericalError("theta is not finite");
  for (double r : {state.rho_o, state.rho_d})
    if (!(std::abs(r) < 1.0)) throw NumericalError("rho left (-1, 1)");
  for (double p : {state.phi2_o, state.phi2_d})
    if (!(p > 0.0) || !std::isfinite(p)) throw NumericalError("phi2 left (0, inf)");
  const AugmentedState& a = state.augmented;
  if (static_cast<std::size_t>(a.tau.size()) != stacked_count() || a.indicator.size() != stacked_count())
    throw NumericalError("augmented state has the wrong length");
  if (!(a.tau.array() > 0.0).all() || !a.tau.allFinite()) throw NumericalError("tau left (0, inf)");
  const Eigen::VectorXd eta = linear_predictor(state);
  if (!eta.allFinite()) throw NumericalError("linear predictor is not finite");
}

std::vector<std::string> GibbsSampler::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(parameter_count());
  for (std::size_t c = 0; c < n_coef_; ++c) names.push_back(designs_.parameter_name(c));
  names.insert(names.end(), {"rho_o", "rho_d", "phi2_o", "phi2_d"});
  for (const char* prefix : {"theta_o[", "theta_d["})
    for (std::size_t r = 0; r < n_regions_; ++r)
      names.push_back(prefix + (r < designs_.region_ids.size() ? designs_.region_ids[r] : std::to_string(r)) + "]");
  return names;
}

void GibbsSampler::flatten(const ChainState& state, std::span<double> out) const {
  if (out.size() != parameter_count()) throw NumericalError("flatten: wrong output length");
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < state.gamma.size(); ++c) out[k++] = state.gamma[c];
  out[k++] = state.rho_o;
  out[k++] = state.rho_d;
  out[k++] = state.phi2_o;
  out[k++] = state.phi2_d;
  for (Eigen::Index r = 0; r < state.theta_o.size(); ++r) out[k++] = state.theta_o[r];
  for (Eigen::Index r = 0; r < state.theta_d.size(); ++r) out[k++] = state.theta_d[r];
}

double sample_griddy(std::span<const double> grid, std::span<const double> log_density, Rng& rng) {
  const std::size_t g = grid.size();
  if (g < 2 || log_density.size() != g) throw InputError("sample_griddy: need matching grids of length >= 2");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_density)
    if (v > top) top = v;
  std::vector<double> f(g, 1.0);
  if (std::isfinite(top))
    for (std::size_t k = 0; k < g; ++k) f[k] = std::exp(log_density[k] - top);  // NaN and -inf map to 0 below
  for (double& v : f)
    if (!(v >= 0.0)) v = 0.0;
  std::vector<double> cum(g, 0.0);
  for (std::size_t k = 1; k < g; ++k) cum[k] = cum[k - 1] + 0.5 * (f[k - 1] + f[k]) * (grid[k] - grid[k - 1]);
  if (!(cum.back() > 0.0)) {
    std::fill(f.begin(), f.end(), 1.0);
    for (std::size_t k = 1; k < g; ++k) cum[k] = cum[k - 1] + (grid[k] - grid[k - 1]);
  }
  const double target = std::generate_canonical<double, 53>(rng) * cum.back();
  std::size_t cell = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), target) - cum.begin());
  cell = std::clamp<std::size_t>(cell, 1, g - 1) - 1;
  while (cell + 2 < g && cum[cell + 1] == cum[cell]) ++cell;
  // Density is linear across the cell: solve f0 t + s t^2 / 2 = mass.
  const double h = grid[cell + 1] - grid[cell];
  const double mass = target - cum[cell];
  const double f0 = f[cell];
  const double slope = (f[cell + 1] - f0) / h;
  const double disc = std::max(0.0, f0 * f0 + 2.0 * slope * mass);
  const double denom = f0 + std::sqrt(disc);
  const double t = denom > 0.0 ? 2.0 * mass / denom : 0.0;
  return grid[cell] + std::clamp(t, 0.0, h);
}

void Schedule::validate() const {
  if (total == 0) throw InputError("schedule: total must be positive");
  if (burn_in >= total) throw InputError("schedule: burn_in must be smaller than total");
  if (thin == 0) throw InputError("schedule: thin must be positive");
  if ((total - burn_in) % thin != 0)
    throw InputError("schedule: total - burn_in (" + std::to_string(total - burn_in) + ") is not divisible by thin " +
                     std::to_string(thin));
}

std::optional<std::size_t> ChainOutput::column(const std::string& name) const {
  auto it = std::find(parameter_names.begin(), parameter_names.end(), name);
  if (it == parameter_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - parameter_names.begin());
}

namespace {

std::string rng_text(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

ChainOutput assemble_output(const GibbsSampler& sampler, const Schedule& schedule, const ChainState& state,
                            std::vector<std::size_t> sweeps, const std::vector<std::vector<double>>& draws) {
  ChainOutput out;
  out.parameter_names = sampler.parameter_names();
  out.sweeps = std::move(sweeps);
  out.draws.resize(static_cast<Eigen::Index>(draws.size()), static_cast<Eigen::Index>(sampler.parameter_count()));
  for (std::size_t r = 0; r < draws.size(); ++r)
    for (std::size_t c = 0; c < draws[r].size(); ++c)
      out.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = draws[r][c];
  out.metadata.schedule = schedule;
  out.metadata.mixture_checksum = sampler.mixture_checksum();
  out.metadata.rho_update = rho_update_name(sampler.options().rho_update);
  out.metadata.overflow_events = state.overflow_events;
  out.metadata.acceptance_o = state.proposal_o.acceptance_rate();
  out.metadata.acceptance_d = state.proposal_d.acceptance_rate();
  return out;
}

}  // namespace

ChainRun run_chain(GibbsSampler& sampler, const Schedule& schedule, const RunControl& control) {
  schedule.validate();
  Rng rng(schedule.seed);
  ChainState state;
  std::size_t done = 0;
  std::vector<std::size_t> sweeps;
  std::vector<std::vector<double>> draws;
  if (control.resume) {
    const ChainCheckpoint& cp = *control.resume;
    if (cp.completed_sweeps > schedule.total) throw InputError("checkpoint is past the end of the schedule");
    state = cp.state;
    std::istringstream in(cp.rng_state);
    in >> rng;
    if (!in) throw InputError("checkpoint has an unreadable random-number state");
    done = cp.completed_sweeps;
    sweeps = cp.sweeps;
    draws = cp.draws;
  } else {
    state = sampler.initial_state();
    sampler.initialise_augmented(state, rng);
  }
  sweeps.reserve(schedule.draw_count());
  draws.reserve(schedule.draw_count());

  const bool adapt = sampler.options().rho_update == RhoUpdate::metropolis;
  std::vector<double> row(sampler.parameter_count());
  ChainState last_good;
  for (std::size_t s = done + 1; s <= schedule.total; ++s) {
    last_good = state;
    const std::string rng_before = rng_text(rng);
    try {
      sampler.sweep(state, rng, adapt && s <= schedule.burn_in);
    } catch (const std::exception& e) {
      ChainCheckpoint cp{s - 1, std::move(last_good), rng_before, sweeps, draws};
      throw SamplerAbort(s, e.what(), std::move(cp));
    }
    if (schedule.stores(s)) {
      sampler.flatten(state, row);
      draws.push_back(row);
      sweeps.push_back(s);
    }
    if (control.stop_after && s == *control.stop_after && s < schedule.total) {
      ChainRun run;
      run.output = assemble_output(sampler, schedule, state, sweeps, draws);
      run.checkpoint = ChainCheckpoint{s, state, rng_text(rng), std::move(sweeps), std::move(draws)};
      return run;
    }
  }
  ChainRun run;
  run.output = assemble_output(sampler, schedule, state, std::move(sweeps), draws);
  return run;
}

std::vector<ChainOutput> run_chains(const DesignMatrices& designs, std::span<const std::int64_t> y,
                                    const SpatialSystem& effects, const MixtureTable& mixture, const PriorSpec& priors,
                                    const SamplerOptions& options, std::span<const Schedule> schedules) {
  std::vector<ChainOutput> outputs(schedules.size());
  std::vector<std::exception_ptr> errors(schedules.size());
  {
    std::vector<std::jthread> workers;
    for (std::size_t c = 0; c < schedules.size(); ++c)
      workers.emplace_back([&, c] {
        try {
          GibbsSampler sampler(designs, y, effects, mixture, priors, options);
          outputs[c] = run_chain(sampler, schedules[c]).output;
          outputs[c].metadata.chain = c;
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return outputs;
}

}  // namespace spagrav
