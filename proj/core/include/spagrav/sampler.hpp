#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spagrav/design.hpp"
#include "spagrav/error.hpp"
#include "spagrav/mixture.hpp"
#include "spagrav/spatial.hpp"

namespace spagrav {

using Rng = std::mt19937_64;

// Which random-effect block a step acts on.
enum class EffectSide { origin, destination };

enum class RhoUpdate { griddy, metropolis };

const char* rho_update_name(RhoUpdate update);
RhoUpdate parse_rho_update(const std::string& name);

struct PriorSpec {
  // Gaussian prior on gamma. Empty vectors mean 0 and 1e4; a length-1
  // vector is broadcast to all P coefficients.
  Eigen::VectorXd gamma_mean;
  Eigen::VectorXd gamma_variance;
  // Inverse-gamma prior on phi^2: shape s/2, scale s*v/2.
  double ig_s = 5.0;
  double ig_v = 0.05;

  void validate(std::size_t p) const;
  Eigen::VectorXd mean_vector(std::size_t p) const;
  Eigen::VectorXd precision_vector(std::size_t p) const;
};

// Latent arrival/inter-arrival times and their mixture labels, stacked as
// N rows of tau_i1 followed by one tau_i2 row per dyad with y_i > 0.
struct AugmentedState {
  Eigen::VectorXd tau;
  std::vector<int> indicator;  // 0-based component index
  Eigen::VectorXd omega;       // variance of the indicated component
  Eigen::VectorXd working_response;
};

// Random-walk proposal state for the Metropolis rho update.
struct RhoProposal {
  double scale = 0.1;
  std::uint64_t window_proposed = 0;
  std::uint64_t window_accepted = 0;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;

  double acceptance_rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct ChainState {
  Eigen::VectorXd gamma;
  Eigen::VectorXd theta_o;
  Eigen::VectorXd theta_d;
  double rho_o = 0.0;
  double rho_d = 0.0;
  double phi2_o = 1.0;
  double phi2_d = 1.0;
  AugmentedState augmented;
  RhoProposal proposal_o;
  RhoProposal proposal_d;
  std::uint64_t overflow_events = 0;

  Eigen::VectorXd& theta(EffectSide s) { return s == EffectSide::origin ? theta_o : theta_d; }
  const Eigen::VectorXd& theta(EffectSide s) const { return s == EffectSide::origin ? theta_o : theta_d; }
  double& rho(EffectSide s) { return s == EffectSide::origin ? rho_o : rho_d; }
  double rho(EffectSide s) const { return s == EffectSide::origin ? rho_o : rho_d; }
  double& phi2(EffectSide s) { return s == EffectSide::origin ? phi2_o : phi2_d; }
  double phi2(EffectSide s) const { return s == EffectSide::origin ? phi2_o : phi2_d; }
  RhoProposal& proposal(EffectSide s) { return s == EffectSide::origin ? proposal_o : proposal_d; }
};

struct SamplerOptions {
  RhoUpdate rho_update = RhoUpdate::griddy;
  // Demean theta after each draw and absorb the mean into the intercept.
  bool recenter_effects = true;
  // When false, step IV is skipped and rho stays at its starting value 0,
  // which reduces the model to iid normal random effects.
  bool update_rho = true;
  // After step II, shift the region-level coefficients of each side against
  // its effects along the direction that leaves the linear predictor
  // unchanged. Without it those coefficients mix very slowly whenever the
  // counts pin down their sum with theta.
  bool ridge_moves = true;
  // Metropolis adaptation: rescale every `adapt_window` proposals during
  // burn-in towards an acceptance rate inside [target_low, target_high].
  double initial_proposal_scale = 0.1;
  double target_low = 0.2;
  double target_high = 0.5;
  std::size_t adapt_window = 50;
  // Verify parameter-space invariants after every sweep.
  bool check_invariants = false;
};

// Gaussian N(precision^{-1} b, precision^{-1}).
struct GaussianConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

struct InverseGammaParams {
  double shape = 0.0;
  double scale = 0.0;
};

// Conditional of phi^2 given the SAR quadratic form q = theta'A'A theta over
// n regions: shape (n + s)/2, scale (q + s v)/2, where s and v are the prior
// rate and shape hyperparameters.
InverseGammaParams phi2_posterior(double quadratic, std::size_t n, double s, double v);

// Linear predictor ceiling: exp(700) is close to the largest finite double.
inline constexpr double kMaxLinearPredictor = 700.0;

// Per-chain Gibbs sampler for the Poisson model with SAR origin and
// destination effects. Holds references to the shared, immutable inputs
// (design, counts, weights, mixture table) and per-chain factorisation
// workspaces; construct one instance per chain.
class GibbsSampler {
 public:
  GibbsSampler(const DesignMatrices& designs, std::span<const std::int64_t> y, const SpatialSystem& effects,
               const MixtureTable& mixture, PriorSpec priors, SamplerOptions options = {});

  std::size_t dyad_count() const { return n_dyads_; }
  std::size_t stacked_count() const { return n_dyads_ + positive_.size(); }
  std::size_t region_count() const { return n_regions_; }
  std::size_t coefficient_count() const { return n_coef_; }
  const SamplerOptions& options() const { return options_; }
  const PriorSpec& priors() const { return priors_; }
  // Dyad index behind stacked row j.
  std::size_t stacked_dyad(std::size_t j) const { return j < n_dyads_ ? j : positive_[j - n_dyads_]; }
  // Mixture shape behind stacked row j: 1 for tau_i1 rows, y_i for tau_i2.
  int stacked_shape(std::size_t j) const;

  // Parameters at their documented starting values; the augmented block is
  // left empty (see initialise_augmented).
  ChainState initial_state() const;
  void initialise_augmented(ChainState& state, Rng& rng) const;

  // Z gamma + V_o theta_o + V_d theta_d.
  Eigen::VectorXd linear_predictor(const ChainState& state) const;
  // exp(linear predictor) with the predictor clamped at 700; clamped
  // entries are added to state.overflow_events.
  Eigen::VectorXd intensity(ChainState& state) const;

  // Step I.
  GaussianConditional gamma_conditional(const ChainState& state) const;
  void step_gamma(ChainState& state, Rng& rng);
  // Step II, without recentering.
  GaussianConditional theta_conditional(const ChainState& state, EffectSide side) const;
  void step_theta(ChainState& state, EffectSide side, Rng& rng);
  // Demean theta_x and move its mean into the intercept.
  void recenter(ChainState& state, EffectSide side) const;
  // Exact Gibbs draw along the ridge: gamma_S += delta, theta_x -= U delta
  // and alpha0 -= mean(U) delta, where S are the region-level columns of
  // side x and U their region values, demeaned. No-op when S is empty.
  GaussianConditional ridge_conditional(const ChainState& state, EffectSide side) const;
  void step_ridge(ChainState& state, EffectSide side, Rng& rng) const;
  // Step III.
  InverseGammaParams phi2_conditional(const ChainState& state, EffectSide side) const;
  void step_phi2(ChainState& state, EffectSide side, Rng& rng) const;
  // Step IV. `adapt` enables Metropolis scale adaptation.
  std::vector<double> rho_log_kernel(const ChainState& state, EffectSide side) const;
  void step_rho(ChainState& state, EffectSide side, Rng& rng, bool adapt = false) const;
  // Step V.
  void step_tau(ChainState& state, Rng& rng) const;
  // Step VI: indicators, Omega and the working response.
  void step_indicators(ChainState& state, Rng& rng) const;

  // One full sweep: I, II(o), II(d), ridge(o), ridge(d), III(o), III(d),
  // IV(o), IV(d), V, VI.
  void sweep(ChainState& state, Rng& rng, bool adapt = false);

  // Throws NumericalError when a parameter leaves its support.
  void check_invariants(const ChainState& state) const;

  // Parameter vector in storage order: gamma, rho_o, rho_d, phi2_o,
  // phi2_d, theta_o, theta_d.
  std::vector<std::string> parameter_names() const;
  void flatten(const ChainState& state, std::span<double> out) const;
  std::size_t parameter_count() const { return n_coef_ + 4 + 2 * n_regions_; }
  const std::string& mixture_checksum() const { return mixture_checksum_; }

 private:
  static constexpr std::size_t kMaxComponents = 32;

  struct ComponentKernel {
    std::vector<double> log_const;  // log w_q - 0.5 log(2 pi s_q)
    std::vector<double> mean;
    std::vector<double> variance;
    std::vector<double> half_precision;
  };

  struct RidgeBasis {
    std::vector<std::size_t> columns;
    Eigen::MatrixXd u;      // n x |columns|, demeaned when there is an intercept
    Eigen::VectorXd means;  // column means removed from u
  };

  // Sparse (I - rho W)'(I - rho W) on a pattern fixed across rho.
  struct SarPattern {
    Eigen::SparseMatrix<double> matrix;
    std::vector<double> identity, symmetric, gram;
    std::vector<std::size_t> diagonal;
  };

  // Per-dyad sums of 1/omega and of working response / omega over the
  // dyad's stacked rows.
  void collapse(const ChainState& state, Eigen::VectorXd& weight, Eigen::VectorXd& weighted) const;
  void gamma_system(const ChainState& state, Eigen::MatrixXd& precision, Eigen::VectorXd& rhs) const;
  // Sparse precision and right-hand side of the theta conditional.
  void theta_system(const ChainState& state, EffectSide side, Eigen::SparseMatrix<double>& precision,
                    Eigen::VectorXd& rhs) const;
  void ridge_system(const ChainState& state, EffectSide side, Eigen::MatrixXd& precision, Eigen::VectorXd& rhs) const;
  Eigen::VectorXd clamped_predictor(const ChainState& state, std::uint64_t* overflow) const;
  double rho_log_target(const ChainState& state, EffectSide side, double rho) const;

  const DesignMatrices& designs_;
  std::vector<std::int64_t> y_;
  const SpatialSystem& effects_;
  std::string mixture_checksum_;
  PriorSpec priors_;
  SamplerOptions options_;
  std::size_t n_dyads_ = 0;
  std::size_t n_regions_ = 0;
  std::size_t n_coef_ = 0;
  std::vector<std::size_t> positive_;
  std::vector<ComponentKernel> kernels_;
  std::vector<std::size_t> row_kernel_;
  Eigen::VectorXd prior_mean_;
  Eigen::VectorXd prior_precision_;
  SarPattern sar_;
  RidgeBasis ridge_[2];
  std::optional<std::size_t> intercept_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> theta_solver_;
};

// Inverse-CDF draw from a density tabulated on an increasing grid through
// its log values: trapezoidal cell masses, uniform within the chosen cell.
double sample_griddy(std::span<const double> grid, std::span<const double> log_density, Rng& rng);

struct Schedule {
  std::size_t total = 25000;
  std::size_t burn_in = 10000;
  std::size_t thin = 1;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t draw_count() const { return (total - burn_in) / thin; }
  bool stores(std::size_t sweep) const { return sweep > burn_in && (sweep - burn_in) % thin == 0; }
};

struct ChainMetadata {
  Schedule schedule;
  std::size_t chain = 0;
  std::string config_hash;
  std::string mixture_checksum;
  std::string rho_update = "griddy";
  std::uint64_t overflow_events = 0;
  double acceptance_o = 0.0;
  double acceptance_d = 0.0;
};

// Stored post-burn-in draws, one row per kept sweep.
struct ChainOutput {
  std::vector<std::string> parameter_names;
  std::vector<std::size_t> sweeps;
  Eigen::MatrixXd draws;  // draw_count x parameter_count
  ChainMetadata metadata;

  std::size_t draw_count() const { return static_cast<std::size_t>(draws.rows()); }
  std::optional<std::size_t> column(const std::string& name) const;
};

// Everything needed to continue a chain at sweep granularity.
struct ChainCheckpoint {
  std::size_t completed_sweeps = 0;
  ChainState state;
  std::string rng_state;
  std::vector<std::size_t> sweeps;
  std::vector<std::vector<double>> draws;
};

struct RunControl {
  // Stop (and return a checkpoint) after this many completed sweeps.
  std::optional<std::size_t> stop_after;
  const ChainCheckpoint* resume = nullptr;
};

struct ChainRun {
  ChainOutput output;
  std::optional<ChainCheckpoint> checkpoint;  // set when stopped early
  bool complete() const { return !checkpoint.has_value(); }
};

// A sweep failed; carries the last good state for debugging.
class SamplerAbort : public NumericalError {
 public:
  SamplerAbort(std::size_t sweep, const std::string& what, ChainCheckpoint last_good)
      : NumericalError("sweep " + std::to_string(sweep) + ": " + what), sweep_(sweep), last_good_(std::move(last_good)) {}
  std::size_t sweep() const { return sweep_; }
  const ChainCheckpoint& last_good() const { return last_good_; }

 private:
  std::size_t sweep_;
  ChainCheckpoint last_good_;
};

ChainRun run_chain(GibbsSampler& sampler, const Schedule& schedule, const RunControl& control = {});

// Independent chains, one thread each, sharing the immutable inputs.
std::vector<ChainOutput> run_chains(const DesignMatrices& designs, std::span<const std::int64_t> y,
                                    const SpatialSystem& effects, const MixtureTable& mixture, const PriorSpec& priors,
                                    const SamplerOptions& options, std::span<const Schedule> schedules);

}  // namespace spagrav
