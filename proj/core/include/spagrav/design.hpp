#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "spagrav/domain.hpp"
#include "spagrav/spatial.hpp"

namespace spagrav {

enum class Transform { level, log };

// Per-column transforms keyed by covariate name (region or dyad column).
// Unlisted columns stay in levels.
using TransformSpec = std::map<std::string, Transform>;

Transform parse_transform(const std::string& name);

enum class ColumnBlock { intercept, origin, destination, distance, origin_lag, destination_lag };

const char* block_name(ColumnBlock block);

// Stacked design Z = [1, X_o, X_d, D, W_o X_o, W_d X_d] with the dyad to
// region maps that stand in for the dummy matrices V_o and V_d.
struct DesignMatrices {
  Eigen::MatrixXd z;
  std::vector<std::size_t> origin_map;
  std::vector<std::size_t> dest_map;
  std::vector<std::string> column_names;  // variable name, shared across blocks
  std::vector<ColumnBlock> column_blocks;
  std::vector<std::string> region_ids;
  std::size_t region_count = 0;
  std::size_t p_x = 0;
  std::size_t p_d = 0;

  std::size_t rows() const { return static_cast<std::size_t>(z.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(z.cols()); }
  // Parameter label such as "beta_o[gva]" or "alpha0".
  std::string parameter_name(std::size_t column) const;
};

DesignMatrices assemble_designs(const RegionSet& regions, const DyadFrame& dyads, const SpatialSystem& origin_lag,
                                const SpatialSystem& dest_lag, const TransformSpec& transforms = {});

inline DesignMatrices assemble_designs(const RegionSet& regions, const DyadFrame& dyads, const SpatialSystem& spatial,
                                       const TransformSpec& transforms = {}) {
  return assemble_designs(regions, dyads, spatial, spatial, transforms);
}

}  // namespace spagrav
