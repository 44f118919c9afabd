#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "spagrav/csv.hpp"
#include "spagrav/design.hpp"
#include "spagrav/domain.hpp"
#include "spagrav/error.hpp"
#include "spagrav/spatial.hpp"
#include "support.hpp"

using namespace spagrav;
using spagrav::test::TempDir;
using spagrav::test::write_file;

namespace {

RegionSet four_regions() {
  Eigen::MatrixXd x(4, 1);
  x << 1.0, 2.0, 3.0, 4.0;
  return RegionSet({"A1", "A2", "B1", "B2"}, {"A", "A", "B", "B"},
                   {{0.0, 50.0}, {1.0, 50.0}, {5.0, 50.0}, {6.0, 50.0}}, {"x"}, x);
}

std::size_t brute_force_dyads(const RegionSet& r) {
  std::size_t count = 0;
  for (std::size_t o = 0; o < r.size(); ++o)
    for (std::size_t d = 0; d < r.size(); ++d)
      if (o != d && r.country(o) != r.country(d)) ++count;
  return count;
}

}  // namespace

TEST_CASE("csv: shortest round-trip formatting") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, -0.0, 123456789.0}) {
    const std::string s = csv::format_exact(v);
    CHECK(csv::parse_double(s, "t") == v);
  }
  CHECK(csv::format_exact(0.5) == "0.5");
  CHECK_THROWS_AS(csv::parse_double("abc", "t"), InputError);
  CHECK_THROWS_AS(csv::parse_integer("2.5", "t"), InputError);
}

TEST_CASE("csv: comments, quotes and missing columns") {
  std::istringstream in("# meta=1\na,b\n\"x,y\",2\n");
  const csv::Table t = csv::parse(in, "mem");
  REQUIRE(t.rows.size() == 1);
  CHECK(t.comments.size() == 1);
  CHECK(t.rows[0].cells[0] == "x,y");
  CHECK_THROWS_AS(t.require_column("zzz"), InputError);
}

TEST_CASE("load_regions: three regions, two covariates") {
  TempDir dir("regions");
  write_file(dir / "r.csv",
             "region_id,country_code,lon,lat,gva,density\n"
             "AT13,AT,16.37,48.21,10.5,4.1\n"
             "DE21,DE,11.58,48.14,12.0,3.2\n"
             "FR10,FR,2.35,48.86,15.2,5.0\n");
  const RegionSet r = load_regions(dir / "r.csv");
  CHECK(r.size() == 3);
  CHECK(r.covariate_count() == 2);
  CHECK(r.covariate_names() == std::vector<std::string>{"gva", "density"});
  CHECK(r.covariates()(1, 0) == doctest::Approx(12.0));

  // A declared schema selects and orders columns.
  const RegionSet s = load_regions(dir / "r.csv", {{"density"}});
  CHECK(s.covariate_count() == 1);
  CHECK(s.covariates()(2, 0) == doctest::Approx(5.0));
}

TEST_CASE("load_regions: duplicate id names the id and both rows") {
  TempDir dir("dup");
  write_file(dir / "r.csv",
             "region_id,country_code,lon,lat,x\n"
             "AT13,AT,16.37,48.21,1\n"
             "DE21,DE,11.58,48.14,2\n"
             "AT13,AT,16.0,48.0,3\n");
  try {
    load_regions(dir / "r.csv");
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("AT13") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
}

TEST_CASE("load_regions: missing column and bad cell are reported") {
  TempDir dir("bad");
  write_file(dir / "a.csv", "region_id,country_code,lon\nA,X,1\n");
  CHECK_THROWS_AS(load_regions(dir / "a.csv"), InputError);
  write_file(dir / "b.csv", "region_id,country_code,lon,lat,x\nA,X,1,2,oops\nB,Y,1,2,3\n");
  try {
    load_regions(dir / "b.csv");
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_regions: 266 regions") {
  TempDir dir("big");
  std::ostringstream s;
  s << "region_id,country_code,lon,lat,x\n";
  for (int i = 0; i < 266; ++i) s << "R" << i << ",C" << i % 27 << ',' << (i % 40) * 0.7 << ',' << 40 + i % 19 << ",1\n";
  write_file(dir / "r.csv", s.str());
  CHECK(load_regions(dir / "r.csv").size() == 266);
}

TEST_CASE("build_dyads: four regions in two countries") {
  const RegionSet r = four_regions();
  const DyadFrame f = build_dyads(r, std::span<const FlowRecord>{});
  CHECK(f.size() == 8);
  CHECK(f.size() == brute_force_dyads(r));
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(f.origin[i] != f.dest[i]);
    CHECK(r.country(f.origin[i]) != r.country(f.dest[i]));
    CHECK(f.flow[i] == 0);
  }
}

TEST_CASE("build_dyads: single country gives no dyads and a warning") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 1);
  const RegionSet r({"a", "b", "c"}, {"X", "X", "X"}, {{0, 0}, {1, 0}, {2, 0}}, {"x"}, x);
  const DyadFrame f = build_dyads(r, std::span<const FlowRecord>{});
  CHECK(f.size() == 0);
  CHECK_FALSE(f.warnings.empty());
}

TEST_CASE("build_dyads: listed flows, sparse mode and errors") {
  const RegionSet r = four_regions();
  std::vector<FlowRecord> flows{{"A1", "B2", 5, 2}, {"A1", "A2", 3, 3}};
  const DyadFrame dense = build_dyads(r, flows);
  bool found = false;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (r.id(dense.origin[i]) == "A1" && r.id(dense.dest[i]) == "B2") {
      CHECK(dense.flow[i] == 5);
      found = true;
    }
  CHECK(found);
  // The own-country flow is reported and dropped.
  CHECK(dense.warnings.size() == 1);
  CHECK(dense.warnings[0].find("own-country") != std::string::npos);

  const DyadFrame sparse = build_dyads(r, flows, {DyadMode::sparse});
  CHECK(sparse.size() == 1);

  std::vector<FlowRecord> unknown{{"A1", "ZZ", 1, 2}};
  CHECK_THROWS_AS(build_dyads(r, unknown), InputError);
  std::vector<FlowRecord> negative{{"A1", "B1", -1, 2}};
  CHECK_THROWS_AS(build_dyads(r, negative), InputError);
  std::vector<FlowRecord> twice{{"A1", "B1", 1, 2}, {"A1", "B1", 2, 3}};
  CHECK_THROWS_AS(build_dyads(r, twice), InputError);
}

TEST_CASE("load_flows: non-integer counts are rejected") {
  TempDir dir("flows");
  write_file(dir / "f.csv", "origin_id,dest_id,count\nA1,B1,2.5\n");
  CHECK_THROWS_AS(load_flows(dir / "f.csv"), InputError);
}

TEST_CASE("build_dyads: dense count matches brute-force enumeration") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const std::size_t n = 2 + seed * 7 % 29;
    const RegionSet r = test::random_regions(n, 1 + seed % 5, 1, seed);
    CHECK(build_dyads(r, std::span<const FlowRecord>{}).size() == brute_force_dyads(r));
  }
}

TEST_CASE("dyad covariate file must cover every dyad") {
  const RegionSet r = four_regions();
  TempDir dir("dcov");
  std::ostringstream s;
  s << "origin_id,dest_id,lang\n";
  const DyadFrame f = build_dyads(r, std::span<const FlowRecord>{});
  for (std::size_t i = 0; i < f.size(); ++i) s << r.id(f.origin[i]) << ',' << r.id(f.dest[i]) << ',' << i << '\n';
  write_file(dir / "d.csv", s.str());
  DyadOptions opt;
  opt.covariates_file = dir / "d.csv";
  opt.include_distance = true;
  const DyadFrame g = build_dyads(r, std::span<const FlowRecord>{}, opt);
  CHECK(g.covariate_names == std::vector<std::string>{"distance", "lang"});
  CHECK(g.covariates(3, 1) == 3.0);
  CHECK(g.covariates(0, 0) > 0.0);

  write_file(dir / "short.csv", "origin_id,dest_id,lang\nA1,B1,1\n");
  opt.covariates_file = dir / "short.csv";
  CHECK_THROWS_AS(build_dyads(r, std::span<const FlowRecord>{}, opt), InputError);
}

TEST_CASE("knowledge_stock: examples") {
  auto final_stock = [](std::vector<double> p, double r) {
    std::vector<PanelRecord> s;
    for (std::size_t t = 0; t < p.size(); ++t) s.push_back({"X", 2000 + static_cast<int>(t), p[t]});
    return knowledge_stock(s, r).at("X");
  };
  CHECK(final_stock({10, 5}, 0.10) == doctest::Approx(14.0));
  CHECK(knowledge_stock_path(std::vector<double>{10, 5}, 0.10) == std::vector<double>{10.0, 14.0});
  CHECK(final_stock({0, 0, 0}, 0.10) == 0.0);
  CHECK(final_stock({100}, 0.10) == 100.0);
}

TEST_CASE("knowledge_stock: recursion properties") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  std::vector<double> p(30);
  for (double& v : p) v = u(rng);
  const auto cum = knowledge_stock_path(p, 0.0);
  double s = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    s += p[t];
    CHECK(cum[t] == doctest::Approx(s).epsilon(1e-14));
  }
  for (double r : {0.05, 0.1, 0.37}) {
    const auto k = knowledge_stock_path(p, r);
    for (std::size_t t = 1; t < p.size(); ++t) CHECK(k[t] - p[t] == doctest::Approx((1.0 - r) * k[t - 1]).epsilon(1e-12));
  }
}

TEST_CASE("knowledge_stock: gaps and negative values are errors") {
  std::vector<PanelRecord> gap{{"X", 2000, 1.0}, {"X", 2002, 1.0}};
  CHECK_THROWS_AS(knowledge_stock(gap), InputError);
  std::vector<PanelRecord> neg{{"X", 2000, -1.0}};
  CHECK_THROWS_AS(knowledge_stock(neg), InputError);
  CHECK_THROWS_AS(knowledge_stock_path(std::vector<double>{1.0}, 1.0), InputError);
}

TEST_CASE("assemble_designs: zero weight matrix gives zero lags") {
  const RegionSet r = four_regions();
  const DyadFrame f = build_dyads(r, std::span<const FlowRecord>{});
  WeightMatrix w(4, 4);
  const SpatialSystem zero(w);
  const DesignMatrices d = assemble_designs(r, f, zero);
  CHECK(d.cols() == 1 + 4 * 1 + 0);
  CHECK(d.z.col(3).isZero());
  CHECK(d.z.col(4).isZero());
  CHECK(d.parameter_name(0) == "alpha0");
  CHECK(d.parameter_name(1) == "beta_o[x]");
  CHECK(d.parameter_name(3) == "delta_o[x]");
}

TEST_CASE("assemble_designs: origin and destination columns expand region rows") {
  const RegionSet r = test::random_regions(12, 3, 2, 11);
  const SpatialSystem s = knn_weights(r, 3);
  DyadFrame f = build_dyads(r, std::span<const FlowRecord>{}, {DyadMode::dense, true});
  const DesignMatrices d = assemble_designs(r, f, s);
  const Eigen::MatrixXd lag = s.weights() * r.covariates();
  REQUIRE(d.cols() == 1 + 4 * 2 + 1);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto o = static_cast<Eigen::Index>(d.origin_map[i]);
    const auto de = static_cast<Eigen::Index>(d.dest_map[i]);
    CHECK(d.z(ii, 0) == 1.0);
    CHECK(d.z.block(ii, 1, 1, 2) == r.covariates().row(o));
    CHECK(d.z.block(ii, 3, 1, 2) == r.covariates().row(de));
    CHECK(d.z(ii, 5) == f.covariates(ii, 0));
    CHECK((d.z.block(ii, 6, 1, 2) - lag.row(o)).norm() < 1e-15);
    CHECK((d.z.block(ii, 8, 1, 2) - lag.row(de)).norm() < 1e-15);
  }
}

TEST_CASE("assemble_designs: nearest-neighbour lag on three regions") {
  Eigen::MatrixXd x(3, 1);
  x << 1.0, 2.0, 3.0;
  // Region b sits nearer to c than to a.
  const RegionSet r({"a", "b", "c"}, {"X", "Y", "Z"}, {{0.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}}, {"x"}, x);
  const SpatialSystem s = knn_weights(r, 1);
  const Eigen::MatrixXd lag = region_lag(s, x);
  CHECK(lag(0, 0) == 2.0);
  CHECK(lag(1, 0) == 3.0);
  CHECK(lag(2, 0) == 2.0);
}

TEST_CASE("assemble_designs: log transforms and their failure") {
  const RegionSet r = four_regions();
  const DyadFrame f = build_dyads(r, std::span<const FlowRecord>{});
  const SpatialSystem s = knn_weights(r, 1);
  const DesignMatrices d = assemble_designs(r, f, s, {{"x", Transform::log}});
  for (std::size_t i = 0; i < d.rows(); ++i)
    CHECK(d.z(static_cast<Eigen::Index>(i), 1) == std::log(r.covariates()(static_cast<Eigen::Index>(d.origin_map[i]), 0)));

  Eigen::MatrixXd x(4, 1);
  x << 1.0, 0.0, 3.0, 4.0;
  const RegionSet bad(r.ids(), r.countries(), r.centroids(), {"x"}, x);
  CHECK_THROWS_AS(assemble_designs(bad, f, s, {{"x", Transform::log}}), InputError);
  CHECK_THROWS_AS(assemble_designs(r, f, s, {{"nope", Transform::log}}), InputError);
}

TEST_CASE("assemble_designs: permuting dyads permutes design rows") {
  const RegionSet r = test::random_regions(10, 3, 2, 5);
  const SpatialSystem s = knn_weights(r, 3);
  const DyadFrame f = build_dyads(r, std::span<const FlowRecord>{});
  std::vector<std::size_t> perm(f.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  DyadFrame g = f;
  for (std::size_t i = 0; i < f.size(); ++i) {
    g.origin[i] = f.origin[perm[i]];
    g.dest[i] = f.dest[perm[i]];
    g.flow[i] = f.flow[perm[i]];
  }
  const DesignMatrices a = assemble_designs(r, f, s);
  const DesignMatrices b = assemble_designs(r, g, s);
  for (std::size_t i = 0; i < f.size(); ++i)
    CHECK(b.z.row(static_cast<Eigen::Index>(i)) == a.z.row(static_cast<Eigen::Index>(perm[i])));
}

TEST_CASE("RegionSet invariants") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 1);
  CHECK_THROWS_AS(RegionSet({"a", "a"}, {"X", "Y"}, {{0, 0}, {1, 1}}, {"x"}, x), InputError);
  CHECK_THROWS_AS(RegionSet({"a", "b"}, {"X", "Y"}, {{0, 0}, {NAN, 1}}, {"x"}, x), InputError);
  x(1, 0) = NAN;
  CHECK_THROWS_AS(RegionSet({"a", "b"}, {"X", "Y"}, {{0, 0}, {1, 1}}, {"x"}, x), InputError);
}
