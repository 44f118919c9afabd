#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spagrav {

struct GeoPoint {
  double lon_deg = 0.0;
  double lat_deg = 0.0;
};

// Haversine distance on a sphere of mean Earth radius.
double great_circle_km(GeoPoint a, GeoPoint b);

// The n regions of the study area with their region-level covariates.
// Immutable once constructed; the constructor enforces unique ids, finite
// coordinates and a complete covariate matrix.
class RegionSet {
 public:
  RegionSet(std::vector<std::string> ids, std::vector<std::string> countries,
            std::vector<GeoPoint> centroids, std::vector<std::string> covariate_names,
            Eigen::MatrixXd covariates);

  std::size_t size() const { return ids_.size(); }
  std::size_t covariate_count() const { return covariate_names_.size(); }
  std::size_t country_count() const { return country_count_; }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& countries() const { return countries_; }
  const std::vector<GeoPoint>& centroids() const { return centroids_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }

  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::string& country(std::size_t i) const { return countries_[i]; }
  GeoPoint centroid(std::size_t i) const { return centroids_[i]; }

  std::optional<std::size_t> find(std::string_view id) const;

  // Copy with one more covariate column appended.
  RegionSet with_covariate(std::string name, const Eigen::VectorXd& column) const;

 private:
  std::vector<std::string> ids_;
  std::vector<std::string> countries_;
  std::vector<GeoPoint> centroids_;
  std::vector<std::string> covariate_names_;
  Eigen::MatrixXd covariates_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t country_count_ = 0;
};

// Which covariate columns to read from a regions file, in order. An empty
// list takes every column after `lat`.
struct RegionSchema {
  std::vector<std::string> covariates;
};

RegionSet load_regions(const std::filesystem::path& path, const RegionSchema& schema = {});

struct FlowRecord {
  std::string origin_id;
  std::string dest_id;
  std::int64_t count = 0;
  std::size_t line = 0;
};

std::vector<FlowRecord> load_flows(const std::filesystem::path& path);

// Dense mode enumerates every admissible ordered pair and fills unlisted
// pairs with zero flow; sparse mode keeps only listed pairs.
enum class DyadMode { dense, sparse };

struct DyadOptions {
  DyadMode mode = DyadMode::dense;
  // Append the great-circle distance (km) between centroids as a dyad
  // covariate named "distance".
  bool include_distance = false;
  // Optional `origin_id,dest_id,<columns...>` file; must cover every dyad.
  std::optional<std::filesystem::path> covariates_file;
};

// Origin-destination pairs with own-region and own-country pairs removed.
// Rows are ordered by (origin index, destination index).
struct DyadFrame {
  std::vector<std::size_t> origin;
  std::vector<std::size_t> dest;
  std::vector<std::int64_t> flow;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // N x p_D
  std::vector<std::string> warnings;

  std::size_t size() const { return origin.size(); }
  std::size_t covariate_count() const { return covariate_names.size(); }
};

bool admissible_pair(const RegionSet& regions, std::size_t origin, std::size_t dest);

DyadFrame build_dyads(const RegionSet& regions, std::span<const FlowRecord> flows,
                      const DyadOptions& options = {});
DyadFrame build_dyads(const RegionSet& regions, const std::filesystem::path& flows,
                      const DyadOptions& options = {});

// Attach dyad covariates from an `origin_id,dest_id,<columns...>` table.
void attach_dyad_covariates(DyadFrame& dyads, const RegionSet& regions,
                            const std::filesystem::path& path);

struct PanelRecord {
  std::string region_id;
  int period = 0;
  double value = 0.0;
};

std::vector<PanelRecord> load_panel(const std::filesystem::path& path);

// Perpetual inventory: K_1 = P_1, K_t = (1 - r) K_{t-1} + P_t.
std::vector<double> knowledge_stock_path(std::span<const double> inflows, double depreciation = 0.10);

// Final-period knowledge stock per region id. Periods must be contiguous
// per region and values non-negative.
std::map<std::string, double> knowledge_stock(std::span<const PanelRecord> series,
                                              double depreciation = 0.10);

}  // namespace spagrav
