#include "spagrav/posterior.hpp"

#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

namespace {

bool bracketed(const std::string& name, const std::string& prefix, std::string& inner) {
  if (name.size() < prefix.size() + 2 || name.compare(0, prefix.size(), prefix) != 0 || name[prefix.size()] != '[' ||
      name.back() != ']')
    return false;
  inner = name.substr(prefix.size() + 1, name.size() - prefix.size() - 2);
  return true;
}

}  // namespace

ParameterTag classify_parameter(const std::string& name) {
  if (name == "alpha0") return {ParameterBlock::intercept, "(Intercept)"};
  if (name == "rho_o") return {ParameterBlock::origin, "rho"};
  if (name == "rho_d") return {ParameterBlock::destination, "rho"};
  if (name == "phi2_o") return {ParameterBlock::origin, "phi2"};
  if (name == "phi2_d") return {ParameterBlock::destination, "phi2"};
  static const std::pair<const char*, ParameterBlock> prefixes[] = {
      {"beta_o", ParameterBlock::origin},         {"beta_d", ParameterBlock::destination},
      {"delta_o", ParameterBlock::origin_lag},    {"delta_d", ParameterBlock::destination_lag},
      {"gamma_D", ParameterBlock::distance},      {"theta_o", ParameterBlock::theta_o},
      {"theta_d", ParameterBlock::theta_d},
  };
  std::string inner;
  for (const auto& [prefix, block] : prefixes)
    if (bracketed(name, prefix, inner)) return {block, inner};
  throw InputError("unrecognised parameter name '" + name + "'");
}

const char* parameter_block_name(ParameterBlock block) {
  switch (block) {
    case ParameterBlock::intercept: return "intercept";
    case ParameterBlock::origin: return "origin";
    case ParameterBlock::destination: return "destination";
    case ParameterBlock::origin_lag: return "origin_lag";
    case ParameterBlock::destination_lag: return "destination_lag";
    case ParameterBlock::distance: return "distance";
    case ParameterBlock::theta_o: return "theta_o";
    case ParameterBlock::theta_d: return "theta_d";
  }
  return "unknown";
}

const ParameterSummary* SummaryTable::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

const DiagnosticRow* DiagnosticsReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

double sorted_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("quantile probability outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ParameterSummary summarize_trace(std::vector<double> values, double level) {
  if (values.empty()) throw InputError("summarize: no draws");
  if (!(level > 0.0 && level < 1.0)) throw InputError("summarize: interval mass must lie in (0, 1)");
  // Sorting first makes every statistic independent of draw order.
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  ParameterSummary s;
  s.mean = mean;
  s.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.lo = sorted_quantile(values, (1.0 - level) / 2.0);
  s.hi = sorted_quantile(values, (1.0 + level) / 2.0);
  s.significant = s.lo > 0.0 || s.hi < 0.0;
  return s;
}

namespace {

void check_compatible(std::span<const ChainOutput> chains) {
  if (chains.empty()) throw InputError("no chains given");
  const ChainOutput& first = chains.front();
  for (const auto& c : chains) {
    if (c.parameter_names != first.parameter_names)
      throw InputError("chains disagree on their parameter lists");
    if (c.metadata.config_hash != first.metadata.config_hash)
      throw InputError("chains come from different configurations (config hash " + first.metadata.config_hash +
                       " vs " + c.metadata.config_hash + ")");
    if (c.metadata.mixture_checksum != first.metadata.mixture_checksum)
      throw InputError("chains used different mixture tables");
  }
}

std::vector<double> column_of(const ChainOutput& c, std::size_t k) {
  const auto col = c.draws.col(static_cast<Eigen::Index>(k));
  return std::vector<double>(col.data(), col.data() + col.size());
}

}  // namespace

SummaryTable summarize(std::span<const ChainOutput> chains, double level) {
  check_compatible(chains);
  SummaryTable t;
  t.level = level;
  for (const auto& c : chains) t.draws += c.draw_count();
  if (t.draws == 0) throw InputError("summarize: no draws");
  const auto& names = chains.front().parameter_names;
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> pooled;
    pooled.reserve(t.draws);
    for (const auto& c : chains) {
      auto col = column_of(c, k);
      pooled.insert(pooled.end(), col.begin(), col.end());
    }
    ParameterSummary s = summarize_trace(std::move(pooled), level);
    s.name = names[k];
    s.tag = classify_parameter(names[k]);
    t.rows.push_back(std::move(s));
  }
  return t;
}

namespace {

// Largest lag kept by the initial positive sequence of the
// autocorrelations, computed directly (short windows only).
std::size_t positive_sequence_lag(std::span<const double> trace, double mean, double c0) {
  const std::size_t n = trace.size();
  auto autocorr = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = lag; t < n; ++t) s += (trace[t] - mean) * (trace[t - lag] - mean);
    return s / static_cast<double>(n) / c0;
  };
  std::size_t m = 0;
  for (; 2 * m + 1 < n; ++m)
    if (!(autocorr(2 * m) + autocorr(2 * m + 1) > 0.0)) break;
  return 2 * m + 1;
}

}  // namespace

double spectral_variance(std::span<const double> trace) {
  const std::size_t n = trace.size();
  if (n < 2) throw InputError("spectral variance needs at least two draws");
  const double mean = std::accumulate(trace.begin(), trace.end(), 0.0) / static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = lag; t < n; ++t) s += (trace[t] - mean) * (trace[t - lag] - mean);
    return s / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return 0.0;
  // Bartlett bandwidth: sqrt(n), widened to three times the correlation
  // length so that slowly mixing traces are not flattered.
  const auto root = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t bandwidth = std::min(std::max(root, 3 * positive_sequence_lag(trace, mean, c0)), n - 1);
  double s = c0;
  for (std::size_t k = 1; k <= bandwidth; ++k)
    s += 2.0 * (1.0 - static_cast<double>(k) / static_cast<double>(bandwidth + 1)) * autocov(k);
  return std::max(s, 0.0);
}

double geweke(std::span<const double> trace, double first, double last) {
  const std::size_t n = trace.size();
  if (n < 100) throw InputError("geweke: need at least 100 draws, got " + std::to_string(n));
  if (!(first > 0.0 && last > 0.0 && first + last <= 1.0)) throw InputError("geweke: invalid window fractions");
  const auto n1 = static_cast<std::size_t>(std::floor(first * static_cast<double>(n)));
  const auto n2 = static_cast<std::size_t>(std::floor(last * static_cast<double>(n)));
  const auto a = trace.first(n1);
  const auto b = trace.last(n2);
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n1);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n2);
  const double va = spectral_variance(a) / static_cast<double>(n1);
  const double vb = spectral_variance(b) / static_cast<double>(n2);
  if (!(va > 0.0) || !(vb > 0.0)) throw NumericalError("geweke: a window has zero variance");
  return (ma - mb) / std::sqrt(va + vb);
}

double effective_sample_size(std::span<const double> trace) {
  const std::size_t n = trace.size();
  if (n < 100) throw InputError("effective sample size: need at least 100 draws, got " + std::to_string(n));
  const double mean = std::accumulate(trace.begin(), trace.end(), 0.0) / static_cast<double>(n);
  std::size_t padded = 1;
  while (padded < 2 * n) padded <<= 1;
  std::vector<double> centred(padded, 0.0);
  for (std::size_t t = 0; t < n; ++t) centred[t] = trace[t] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, centred);
  for (auto& z : spectrum) z = std::norm(z);
  std::vector<double> acov;
  fft.inv(acov, spectrum);
  const double c0 = acov[0];
  if (!(c0 > 1e-300 * static_cast<double>(n))) return static_cast<double>(n);
  // Sums of adjacent autocorrelation pairs, truncated at the first
  // non-positive pair and forced to be non-increasing.
  double tau = -1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (acov[2 * m] + acov[2 * m + 1]) / c0;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += 2.0 * pair;
  }
  return std::min(static_cast<double>(n), static_cast<double>(n) / std::max(tau, 1e-12));
}

double split_rhat(const std::vector<std::span<const double>>& chains) {
  if (chains.size() < 2) throw InputError("split R-hat needs at least two chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw InputError("split R-hat needs chains of equal length");
  const std::size_t half = n / 2;
  if (half < 2) throw InputError("split R-hat needs at least four draws per chain");
  std::vector<double> means, vars;
  for (const auto& c : chains)
    for (auto part : {c.first(half), c.last(half)}) {
      const double m = std::accumulate(part.begin(), part.end(), 0.0) / static_cast<double>(half);
      double ss = 0.0;
      for (double v : part) ss += (v - m) * (v - m);
      means.push_back(m);
      vars.push_back(ss / static_cast<double>(half - 1));
    }
  const double k = static_cast<double>(means.size());
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / k;
  double b = 0.0;
  for (double m : means) b += (m - grand) * (m - grand);
  b /= k - 1.0;  // B / n
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / k;
  const double l = static_cast<double>(half);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt(((l - 1.0) / l * w + b) / w);
}

DiagnosticsReport diagnose(std::span<const ChainOutput> chains, const DiagnosticThresholds& thresholds) {
  check_compatible(chains);
  DiagnosticsReport report;
  report.chains = chains.size();
  report.draws_per_chain = chains.front().draw_count();
  bool equal_lengths = true;
  for (const auto& c : chains) equal_lengths = equal_lengths && c.draw_count() == report.draws_per_chain;
  if (!equal_lengths) report.warnings.push_back("chains have different lengths; split R-hat skipped");
  const bool enough = std::all_of(chains.begin(), chains.end(), [](const ChainOutput& c) { return c.draw_count() >= 100; });
  if (!enough) report.warnings.push_back("fewer than 100 stored draws in a chain; Geweke and ESS skipped");

  const auto& names = chains.front().parameter_names;
  std::size_t geweke_flags = 0, geweke_counted = 0, low_ess = 0, high_psrf = 0;
  const DiagnosticRow* worst_ess = nullptr;
  const DiagnosticRow* worst_psrf = nullptr;
  for (std::size_t k = 0; k < names.size(); ++k) {
    DiagnosticRow row;
    row.name = names[k];
    row.geweke_z = std::numeric_limits<double>::quiet_NaN();
    row.ess = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> cols;
    for (const auto& c : chains) cols.push_back(column_of(c, k));
    if (enough) {
      double worst = std::numeric_limits<double>::quiet_NaN();
      row.ess = 0.0;
      for (const auto& col : cols) {
        row.ess += effective_sample_size(col);
        try {
          const double z = geweke(col);
          if (std::isnan(worst) || std::abs(z) > std::abs(worst)) worst = z;
        } catch (const NumericalError&) {
          // constant trace: no z-score
        }
      }
      row.geweke_z = worst;
      if (!std::isnan(worst)) {
        ++geweke_counted;
        if (std::abs(worst) > thresholds.geweke_z) ++geweke_flags;
      }
    }
    if (chains.size() >= 2 && equal_lengths && report.draws_per_chain >= 4) {
      std::vector<std::span<const double>> spans(cols.begin(), cols.end());
      row.psrf = split_rhat(spans);
    }
    report.rows.push_back(std::move(row));
  }
  for (const auto& row : report.rows) {
    if (row.ess < thresholds.min_ess) {
      ++low_ess;
      if (!worst_ess || row.ess < worst_ess->ess) worst_ess = &row;
    }
    if (row.psrf && !(*row.psrf <= thresholds.max_psrf)) {
      ++high_psrf;
      if (!worst_psrf || !(*row.psrf <= *worst_psrf->psrf)) worst_psrf = &row;
    }
  }
  if (low_ess > 0)
    report.warnings.push_back(fmt::format("effective sample size below {} for {} parameters (lowest: {} at {:.1f})",
                                          thresholds.min_ess, low_ess, worst_ess->name, worst_ess->ess));
  if (high_psrf > 0)
    report.warnings.push_back(fmt::format("split R-hat above {} for {} parameters (highest: {} at {:.3f})",
                                          thresholds.max_psrf, high_psrf, worst_psrf->name, *worst_psrf->psrf));
  bool geweke_warn = false;
  if (geweke_counted > 0) {
    const double share = static_cast<double>(geweke_flags) / static_cast<double>(geweke_counted);
    if (share > thresholds.max_geweke_share) {
      geweke_warn = true;
      report.warnings.push_back(fmt::format("{} of {} parameters have |Geweke z| above {}", geweke_flags,
                                            geweke_counted, thresholds.geweke_z));
    }
  }
  if (!enough || low_ess > 0 || high_psrf > 0 || geweke_warn) report.verdict = Verdict::warn;
  return report;
}

namespace {

std::string number_or_na(double v) { return std::isnan(v) ? "NA" : csv::format_exact(v); }

}  // namespace

void write_diagnostics_csv(std::ostream& out, const DiagnosticsReport& report) {
  out << "variable,geweke_z,ess,psrf\n";
  for (const auto& r : report.rows)
    out << r.name << ',' << number_or_na(r.geweke_z) << ',' << number_or_na(r.ess) << ','
        << (r.psrf ? number_or_na(*r.psrf) : "NA") << '\n';
}

void write_summary_csv(std::ostream& out, const SummaryTable& summary) {
  out << "block,variable,mean,sd,lo,hi,significant\n";
  for (const auto& r : summary.rows)
    out << parameter_block_name(r.tag.block) << ',' << r.tag.variable << ',' << csv::format_exact(r.mean) << ','
        << csv::format_exact(r.sd) << ',' << csv::format_exact(r.lo) << ',' << csv::format_exact(r.hi) << ','
        << (r.significant ? 1 : 0) << '\n';
}

namespace {

std::string two_decimals(double v) {
  std::string s = fmt::format("{:.2f}", v);
  if (s == "-0.00") s = "0.00";
  return s;
}

// Mean with a trailing '*' when significant, padded so columns align.
std::string marked(const ParameterSummary& s) { return two_decimals(s.mean) + (s.significant ? "*" : " "); }

struct TableBuilder {
  std::ostringstream text;
  std::ostringstream csv;

  void csv_row(const char* block, const std::string& variable, const ParameterSummary& s) {
    csv << block << ',' << variable << ',' << two_decimals(s.mean) << ',' << two_decimals(s.sd) << ','
        << two_decimals(s.lo) << ',' << two_decimals(s.hi) << ',' << (s.significant ? 1 : 0) << '\n';
  }

  void pair_row(const std::string& label, const ParameterSummary* o, const ParameterSummary* d) {
    text << fmt::format("{:<24}", label);
    auto cell = [&](const ParameterSummary* s) {
      if (s)
        text << fmt::format("{:>10}{:>10}", marked(*s), two_decimals(s->sd));
      else
        text << fmt::format("{:>10}{:>10}", "", "");
    };
    cell(o);
    text << "  ";
    cell(d);
    text << '\n';
  }

  void single_row(const std::string& label, const ParameterSummary& s) {
    text << fmt::format("{:<24}{:>10}{:>10}\n", label, marked(s), two_decimals(s.sd));
  }
};

}  // namespace

RenderedTable render_table(const SummaryTable& summary) {
  // Pair origin and destination rows by variable, keeping first-seen order.
  std::vector<std::string> order, lag_order;
  std::map<std::string, const ParameterSummary*> origin, dest, origin_lag, dest_lag;
  std::vector<const ParameterSummary*> distance;
  const ParameterSummary* intercept = nullptr;
  const ParameterSummary *rho_o = nullptr, *rho_d = nullptr, *phi_o = nullptr, *phi_d = nullptr;
  auto note = [](std::vector<std::string>& seq, const std::string& v) {
    if (std::find(seq.begin(), seq.end(), v) == seq.end()) seq.push_back(v);
  };
  for (const auto& r : summary.rows) {
    const std::string& v = r.tag.variable;
    switch (r.tag.block) {
      case ParameterBlock::intercept: intercept = &r; break;
      case ParameterBlock::origin:
        if (v == "rho") rho_o = &r;
        else if (v == "phi2") phi_o = &r;
        else { origin[v] = &r; note(order, v); }
        break;
      case ParameterBlock::destination:
        if (v == "rho") rho_d = &r;
        else if (v == "phi2") phi_d = &r;
        else { dest[v] = &r; note(order, v); }
        break;
      case ParameterBlock::origin_lag: origin_lag[v] = &r; note(lag_order, v); break;
      case ParameterBlock::destination_lag: dest_lag[v] = &r; note(lag_order, v); break;
      case ParameterBlock::distance: distance.push_back(&r); break;
      case ParameterBlock::theta_o:
      case ParameterBlock::theta_d: break;
    }
  }
  auto lookup = [](const std::map<std::string, const ParameterSummary*>& m, const std::string& v) {
    auto it = m.find(v);
    return it == m.end() ? nullptr : it->second;
  };

  TableBuilder b;
  b.csv << "block,variable,mean,sd,lo,hi,significant\n";
  b.text << fmt::format("{:<24}{:>20}  {:>20}\n", "", "Origin", "Destination");
  b.text << fmt::format("{:<24}{:>10}{:>10}  {:>10}{:>10}\n", "Variable", "Mean", "Std.Dev.", "Mean", "Std.Dev.");
  for (const auto& v : order) {
    const auto* o = lookup(origin, v);
    const auto* d = lookup(dest, v);
    b.pair_row(v, o, d);
    if (o) b.csv_row("origin", v, *o);
    if (d) b.csv_row("destination", v, *d);
  }
  for (const auto& v : lag_order) {
    const auto* o = lookup(origin_lag, v);
    const auto* d = lookup(dest_lag, v);
    b.pair_row("W " + v, o, d);
    if (o) b.csv_row("origin_lag", v, *o);
    if (d) b.csv_row("destination_lag", v, *d);
  }
  if (rho_o || rho_d) {
    b.pair_row("rho", rho_o, rho_d);
    if (rho_o) b.csv_row("origin", "rho", *rho_o);
    if (rho_d) b.csv_row("destination", "rho", *rho_d);
  }
  if (phi_o || phi_d) {
    b.pair_row("phi2", phi_o, phi_d);
    if (phi_o) b.csv_row("origin", "phi2", *phi_o);
    if (phi_d) b.csv_row("destination", "phi2", *phi_d);
  }
  if (!distance.empty()) {
    b.text << '\n' << fmt::format("{:<24}{:>10}{:>10}\n", "Distance", "Mean", "Std.Dev.");
    for (const auto* s : distance) {
      b.single_row(s->tag.variable, *s);
      b.csv_row("distance", s->tag.variable, *s);
    }
  }
  if (intercept) {
    b.text << '\n';
    b.single_row("Intercept", *intercept);
    b.csv_row("intercept", intercept->tag.variable, *intercept);
  }
  b.text << '\n'
         << fmt::format("* {:.0f}% credible interval excludes zero; {} pooled draws\n", 100.0 * summary.level,
                        summary.draws);
  return {b.text.str(), b.csv.str()};
}

}  // namespace spagrav
