#include "spagrav/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <unordered_set>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;

std::string at_line(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

}  // namespace

double great_circle_km(GeoPoint a, GeoPoint b) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double phi1 = a.lat_deg * deg;
  const double phi2 = b.lat_deg * deg;
  const double dphi = (b.lat_deg - a.lat_deg) * deg;
  const double dlambda = (b.lon_deg - a.lon_deg) * deg;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

RegionSet::RegionSet(std::vector<std::string> ids, std::vector<std::string> countries,
                     std::vector<GeoPoint> centroids, std::vector<std::string> covariate_names,
                     Eigen::MatrixXd covariates)
    : ids_(std::move(ids)),
      countries_(std::move(countries)),
      centroids_(std::move(centroids)),
      covariate_names_(std::move(covariate_names)),
      covariates_(std::move(covariates)) {
  const std::size_t n = ids_.size();
  if (countries_.size() != n || centroids_.size() != n)
    throw InputError("RegionSet: ids, countries and centroids differ in length");
  if (n < 2) throw InputError("RegionSet: at least two regions are required");
  if (static_cast<std::size_t>(covariates_.rows()) != n ||
      static_cast<std::size_t>(covariates_.cols()) != covariate_names_.size())
    throw InputError("RegionSet: covariate matrix must be n x p_X with one name per column");
  for (std::size_t i = 0; i < n; ++i) {
    if (ids_[i].empty()) throw InputError("RegionSet: empty region id at index " + std::to_string(i));
    auto [it, inserted] = index_.emplace(ids_[i], i);
    if (!inserted)
      throw InputError("RegionSet: duplicate region id '" + ids_[i] + "' at indices " +
                       std::to_string(it->second) + " and " + std::to_string(i));
    if (!std::isfinite(centroids_[i].lon_deg) || !std::isfinite(centroids_[i].lat_deg))
      throw InputError("RegionSet: non-finite centroid for region '" + ids_[i] + "'");
  }
  if (!covariates_.allFinite()) throw InputError("RegionSet: covariate matrix has missing entries");
  std::set<std::string_view> distinct(countries_.begin(), countries_.end());
  country_count_ = distinct.size();
}

std::optional<std::size_t> RegionSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

RegionSet RegionSet::with_covariate(std::string name, const Eigen::VectorXd& column) const {
  if (static_cast<std::size_t>(column.size()) != size())
    throw InputError("with_covariate: column length does not match region count");
  Eigen::MatrixXd x(covariates_.rows(), covariates_.cols() + 1);
  x.leftCols(covariates_.cols()) = covariates_;
  x.col(covariates_.cols()) = column;
  auto names = covariate_names_;
  names.push_back(std::move(name));
  return RegionSet(ids_, countries_, centroids_, std::move(names), std::move(x));
}

RegionSet load_regions(const std::filesystem::path& path, const RegionSchema& schema) {
  const csv::Table t = csv::read(path);
  const std::size_t c_id = t.require_column("region_id");
  const std::size_t c_country = t.require_column("country_code");
  const std::size_t c_lon = t.require_column("lon");
  const std::size_t c_lat = t.require_column("lat");

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  if (schema.covariates.empty()) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      if (j == c_id || j == c_country || j == c_lon || j == c_lat) continue;
      cov_cols.push_back(j);
      cov_names.push_back(t.header[j]);
    }
  } else {
    for (const auto& name : schema.covariates) {
      cov_cols.push_back(t.require_column(name));
      cov_names.push_back(name);
    }
  }

  const std::size_t n = t.rows.size();
  std::vector<std::string> ids, countries;
  std::vector<GeoPoint> centroids;
  Eigen::MatrixXd x(n, cov_cols.size());
  std::unordered_map<std::string, std::size_t> first_line;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = t.rows[i];
    const std::string where = at_line(t.source, row.line);
    const std::string& id = row.cells[c_id];
    if (id.empty()) throw InputError(where + ": empty region_id");
    auto [it, inserted] = first_line.emplace(id, row.line);
    if (!inserted)
      throw InputError(t.source + ": duplicate region_id '" + id + "' on rows " +
                       std::to_string(it->second) + " and " + std::to_string(row.line));
    ids.push_back(id);
    countries.push_back(row.cells[c_country]);
    centroids.push_back({csv::parse_double(row.cells[c_lon], where + " (lon)"),
                         csv::parse_double(row.cells[c_lat], where + " (lat)")});
    for (std::size_t j = 0; j < cov_cols.size(); ++j)
      x(i, j) = csv::parse_double(row.cells[cov_cols[j]], where + " (" + cov_names[j] + ")");
  }
  return RegionSet(std::move(ids), std::move(countries), std::move(centroids), std::move(cov_names),
                   std::move(x));
}

std::vector<FlowRecord> load_flows(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_o = t.require_column("origin_id");
  const std::size_t c_d = t.require_column("dest_id");
  const std::size_t c_n = t.require_column("count");
  std::vector<FlowRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    const std::string where = at_line(t.source, row.line);
    const long long count = csv::parse_integer(row.cells[c_n], where + " (count)");
    if (count < 0) throw InputError(where + ": negative flow count " + std::to_string(count));
    out.push_back({row.cells[c_o], row.cells[c_d], count, row.line});
  }
  return out;
}

bool admissible_pair(const RegionSet& regions, std::size_t origin, std::size_t dest) {
  return origin != dest && regions.country(origin) != regions.country(dest);
}

DyadFrame build_dyads(const RegionSet& regions, std::span<const FlowRecord> flows,
                      const DyadOptions& options) {
  const std::size_t n = regions.size();
  DyadFrame frame;

  // Listed flows keyed by (origin, dest).
  std::map<std::pair<std::size_t, std::size_t>, std::int64_t> listed;
  for (const auto& f : flows) {
    const std::string where = "flow row " + std::to_string(f.line);
    auto o = regions.find(f.origin_id);
    if (!o) throw InputError(where + ": unknown origin region '" + f.origin_id + "'");
    auto d = regions.find(f.dest_id);
    if (!d) throw InputError(where + ": unknown destination region '" + f.dest_id + "'");
    if (f.count < 0) throw InputError(where + ": negative flow count");
    if (!admissible_pair(regions, *o, *d)) {
      if (f.count != 0)
        frame.warnings.push_back(where + ": dropped " + (*o == *d ? "own-region" : "own-country") +
                                 " flow " + f.origin_id + "->" + f.dest_id + " with count " +
                                 std::to_string(f.count));
      continue;
    }
    if (!listed.emplace(std::make_pair(*o, *d), f.count).second)
      throw InputError(where + ": pair " + f.origin_id + "->" + f.dest_id + " listed twice");
  }

  if (options.mode == DyadMode::dense) {
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t d = 0; d < n; ++d) {
        if (!admissible_pair(regions, o, d)) continue;
        auto it = listed.find({o, d});
        frame.origin.push_back(o);
        frame.dest.push_back(d);
        frame.flow.push_back(it == listed.end() ? 0 : it->second);
      }
  } else {
    for (const auto& [key, count] : listed) {
      frame.origin.push_back(key.first);
      frame.dest.push_back(key.second);
      frame.flow.push_back(count);
    }
  }
  if (frame.size() == 0)
    frame.warnings.push_back("no admissible dyads: every region pair shares a country");

  frame.covariates.resize(static_cast<Eigen::Index>(frame.size()), 0);
  if (options.include_distance) {
    frame.covariate_names.push_back("distance");
    frame.covariates.resize(static_cast<Eigen::Index>(frame.size()), 1);
    for (std::size_t i = 0; i < frame.size(); ++i)
      frame.covariates(static_cast<Eigen::Index>(i), 0) =
          great_circle_km(regions.centroid(frame.origin[i]), regions.centroid(frame.dest[i]));
  }
  if (options.covariates_file) attach_dyad_covariates(frame, regions, *options.covariates_file);
  return frame;
}

DyadFrame build_dyads(const RegionSet& regions, const std::filesystem::path& flows,
                      const DyadOptions& options) {
  const auto records = load_flows(flows);
  return build_dyads(regions, std::span<const FlowRecord>(records), options);
}

void attach_dyad_covariates(DyadFrame& dyads, const RegionSet& regions,
                            const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_o = t.require_column("origin_id");
  const std::size_t c_d = t.require_column("dest_id");
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (j != c_o && j != c_d) cols.push_back(j);

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> row_of;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = at_line(t.source, row.line);
    auto o = regions.find(row.cells[c_o]);
    auto d = regions.find(row.cells[c_d]);
    if (!o || !d) throw InputError(where + ": unknown region in dyad covariate row");
    if (!row_of.emplace(std::make_pair(*o, *d), r).second)
      throw InputError(where + ": duplicate dyad covariate row");
  }

  const auto base = static_cast<Eigen::Index>(dyads.covariate_count());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(dyads.size()), base + static_cast<Eigen::Index>(cols.size()));
  x.leftCols(base) = dyads.covariates;
  for (std::size_t i = 0; i < dyads.size(); ++i) {
    auto it = row_of.find({dyads.origin[i], dyads.dest[i]});
    if (it == row_of.end())
      throw InputError(t.source + ": no covariate row for dyad " + regions.id(dyads.origin[i]) + "->" +
                       regions.id(dyads.dest[i]));
    const auto& row = t.rows[it->second];
    for (std::size_t j = 0; j < cols.size(); ++j)
      x(static_cast<Eigen::Index>(i), base + static_cast<Eigen::Index>(j)) = csv::parse_double(
          row.cells[cols[j]], at_line(t.source, row.line) + " (" + t.header[cols[j]] + ")");
  }
  for (auto j : cols) dyads.covariate_names.push_back(t.header[j]);
  dyads.covariates = std::move(x);
}

std::vector<PanelRecord> load_panel(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_id = t.require_column("region_id");
  const std::size_t c_year = t.require_column("year");
  const std::size_t c_value = t.require_column("value");
  std::vector<PanelRecord> out;
  for (const auto& row : t.rows) {
    const std::string where = at_line(t.source, row.line);
    const auto year = csv::parse_integer(row.cells[c_year], where + " (year)");
    out.push_back({row.cells[c_id], static_cast<int>(year),
                   csv::parse_double(row.cells[c_value], where + " (value)")});
  }
  return out;
}

std::vector<double> knowledge_stock_path(std::span<const double> inflows, double depreciation) {
  if (!(depreciation >= 0.0 && depreciation < 1.0))
    throw InputError("knowledge_stock: depreciation must lie in [0, 1)");
  std::vector<double> stock;
  stock.reserve(inflows.size());
  double k = 0.0;
  for (std::size_t t = 0; t < inflows.size(); ++t) {
    if (!(inflows[t] >= 0.0)) throw InputError("knowledge_stock: negative inflow");
    k = t == 0 ? inflows[t] : (1.0 - depreciation) * k + inflows[t];
    stock.push_back(k);
  }
  return stock;
}

std::map<std::string, double> knowledge_stock(std::span<const PanelRecord> series, double depreciation) {
  std::map<std::string, std::map<int, double>> by_region;
  for (const auto& rec : series) {
    if (!(rec.value >= 0.0))
      throw InputError("knowledge_stock: negative value for region '" + rec.region_id + "' in " +
                       std::to_string(rec.period));
    if (!by_region[rec.region_id].emplace(rec.period, rec.value).second)
      throw InputError("knowledge_stock: duplicate period " + std::to_string(rec.period) +
                       " for region '" + rec.region_id + "'");
  }
  std::map<std::string, double> out;
  for (const auto& [id, periods] : by_region) {
    std::vector<double> values;
    int expected = periods.begin()->first;
    for (const auto& [period, value] : periods) {
      if (period != expected)
        throw InputError("knowledge_stock: gap before period " + std::to_string(period) +
                         " for region '" + id + "'");
      ++expected;
      values.push_back(value);
    }
    out[id] = knowledge_stock_path(values, depreciation).back();
  }
  return out;
}

}  // namespace spagrav
