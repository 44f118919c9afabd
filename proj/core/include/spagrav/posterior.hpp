#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spagrav/sampler.hpp"

namespace spagrav {

// Where a parameter sits in the reported table, parsed from its name.
enum class ParameterBlock { intercept, origin, destination, origin_lag, destination_lag, distance, theta_o, theta_d };

struct ParameterTag {
  ParameterBlock block = ParameterBlock::intercept;
  std::string variable;  // covariate name, "rho", "phi2" or region id
};

ParameterTag classify_parameter(const std::string& name);
const char* parameter_block_name(ParameterBlock block);

struct ParameterSummary {
  std::string name;
  ParameterTag tag;
  double mean = 0.0;
  double sd = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool significant = false;  // interval excludes zero
};

struct SummaryTable {
  double level = 0.9;
  std::size_t draws = 0;
  std::vector<ParameterSummary> rows;

  const ParameterSummary* find(const std::string& name) const;
};

// Linear-interpolation (type 7) quantile of sorted data.
double sorted_quantile(std::span<const double> sorted, double p);

// Mean, standard deviation and equal-tailed interval of one pooled trace.
ParameterSummary summarize_trace(std::vector<double> values, double level = 0.9);

// Pools the stored draws of every chain. Chains must agree on parameter
// names and config hash.
SummaryTable summarize(std::span<const ChainOutput> chains, double level = 0.9);

// Spectral density at frequency zero by a Bartlett lag window. The
// bandwidth is floor(sqrt(n)), widened to three times the lag at which the
// initial positive sequence of autocorrelations ends.
double spectral_variance(std::span<const double> trace);

// Difference of the means of the first and last windows over its spectral
// standard error. Throws when a window has zero variance.
double geweke(std::span<const double> trace, double first = 0.1, double last = 0.5);

// Initial monotone positive sequence estimator; a constant trace returns
// its length and the result never exceeds it.
double effective_sample_size(std::span<const double> trace);

// Split potential scale reduction over two or more equal-length chains.
double split_rhat(const std::vector<std::span<const double>>& chains);

struct DiagnosticRow {
  std::string name;
  double geweke_z = 0.0;  // largest |z| across chains; NaN for constant traces
  double ess = 0.0;       // summed across chains
  std::optional<double> psrf;
};

struct DiagnosticThresholds {
  double max_psrf = 1.1;
  double min_ess = 100.0;
  double geweke_z = 1.96;
  // Warn when more than this share of parameters exceed geweke_z.
  double max_geweke_share = 0.2;
};

enum class Verdict { pass, warn };

struct DiagnosticsReport {
  std::vector<DiagnosticRow> rows;
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
  Verdict verdict = Verdict::pass;
  std::vector<std::string> warnings;

  const DiagnosticRow* find(const std::string& name) const;
};

DiagnosticsReport diagnose(std::span<const ChainOutput> chains, const DiagnosticThresholds& thresholds = {});

void write_diagnostics_csv(std::ostream& out, const DiagnosticsReport& report);
// Every parameter at full precision.
void write_summary_csv(std::ostream& out, const SummaryTable& summary);

struct RenderedTable {
  std::string text;
  std::string csv;
};

// Origin and destination columns side by side, spatial-lag rows and the
// rho/phi2 rows beneath, then distance and intercept. Region effects are
// left out. Both renderings print two decimals.
RenderedTable render_table(const SummaryTable& summary);

}  // namespace spagrav
