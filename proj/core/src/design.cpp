#include "spagrav/design.hpp"

#include <cmath>
#include <set>

#include "spagrav/error.hpp"

namespace spagrav {

Transform parse_transform(const std::string& name) {
  if (name == "log") return Transform::log;
  if (name == "level" || name == "identity") return Transform::level;
  throw InputError("unknown transform '" + name + "' (expected log or level)");
}

const char* block_name(ColumnBlock block) {
  switch (block) {
    case ColumnBlock::intercept: return "intercept";
    case ColumnBlock::origin: return "origin";
    case ColumnBlock::destination: return "destination";
    case ColumnBlock::distance: return "distance";
    case ColumnBlock::origin_lag: return "origin_lag";
    case ColumnBlock::destination_lag: return "destination_lag";
  }
  return "unknown";
}

std::string DesignMatrices::parameter_name(std::size_t column) const {
  const std::string& v = column_names[column];
  switch (column_blocks[column]) {
    case ColumnBlock::intercept: return "alpha0";
    case ColumnBlock::origin: return "beta_o[" + v + "]";
    case ColumnBlock::destination: return "beta_d[" + v + "]";
    case ColumnBlock::distance: return "gamma_D[" + v + "]";
    case ColumnBlock::origin_lag: return "delta_o[" + v + "]";
    case ColumnBlock::destination_lag: return "delta_d[" + v + "]";
  }
  return v;
}

namespace {

void apply_transforms(Eigen::MatrixXd& x, const std::vector<std::string>& names, const TransformSpec& transforms,
                      const char* what) {
  for (std::size_t j = 0; j < names.size(); ++j) {
    auto it = transforms.find(names[j]);
    if (it == transforms.end() || it->second == Transform::level) continue;
    auto col = x.col(static_cast<Eigen::Index>(j));
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (!(col[i] > 0.0))
        throw InputError(std::string("log transform of ") + what + " column '" + names[j] + "' hit non-positive value " +
                         std::to_string(col[i]) + " at row " + std::to_string(i));
      col[i] = std::log(col[i]);
    }
  }
}

}  // namespace

DesignMatrices assemble_designs(const RegionSet& regions, const DyadFrame& dyads, const SpatialSystem& origin_lag,
                                const SpatialSystem& dest_lag, const TransformSpec& transforms) {
  const std::size_t n = regions.size();
  if (origin_lag.size() != n || dest_lag.size() != n)
    throw InputError("assemble_designs: weight matrices do not match the region count");
  {
    std::set<std::string> known(regions.covariate_names().begin(), regions.covariate_names().end());
    known.insert(dyads.covariate_names.begin(), dyads.covariate_names.end());
    for (const auto& [name, t] : transforms)
      if (!known.count(name)) throw InputError("transform names unknown column '" + name + "'");
  }

  Eigen::MatrixXd x = regions.covariates();
  apply_transforms(x, regions.covariate_names(), transforms, "region");
  Eigen::MatrixXd d = dyads.covariates;
  apply_transforms(d, dyads.covariate_names, transforms, "dyad");
  const Eigen::MatrixXd wx_o = region_lag(origin_lag, x);
  const Eigen::MatrixXd wx_d = region_lag(dest_lag, x);

  const auto p_x = static_cast<Eigen::Index>(regions.covariate_count());
  const auto p_d = static_cast<Eigen::Index>(dyads.covariate_count());
  const auto rows = static_cast<Eigen::Index>(dyads.size());

  DesignMatrices out;
  out.region_count = n;
  out.region_ids = regions.ids();
  out.p_x = static_cast<std::size_t>(p_x);
  out.p_d = static_cast<std::size_t>(p_d);
  out.origin_map = dyads.origin;
  out.dest_map = dyads.dest;
  out.z.resize(rows, 1 + 4 * p_x + p_d);

  out.z.col(0).setOnes();
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto o = static_cast<Eigen::Index>(dyads.origin[static_cast<std::size_t>(i)]);
    const auto de = static_cast<Eigen::Index>(dyads.dest[static_cast<std::size_t>(i)]);
    out.z.block(i, 1, 1, p_x) = x.row(o);
    out.z.block(i, 1 + p_x, 1, p_x) = x.row(de);
    out.z.block(i, 1 + 2 * p_x + p_d, 1, p_x) = wx_o.row(o);
    out.z.block(i, 1 + 3 * p_x + p_d, 1, p_x) = wx_d.row(de);
  }
  if (p_d > 0) out.z.block(0, 1 + 2 * p_x, rows, p_d) = d;

  out.column_names.push_back("(Intercept)");
  out.column_blocks.push_back(ColumnBlock::intercept);
  auto add = [&](const std::vector<std::string>& names, ColumnBlock block) {
    for (const auto& name : names) {
      out.column_names.push_back(name);
      out.column_blocks.push_back(block);
    }
  };
  add(regions.covariate_names(), ColumnBlock::origin);
  add(regions.covariate_names(), ColumnBlock::destination);
  add(dyads.covariate_names, ColumnBlock::distance);
  add(regions.covariate_names(), ColumnBlock::origin_lag);
  add(regions.covariate_names(), ColumnBlock::destination_lag);
  return out;
}

}  // namespace spagrav
