#include <doctest.h>

#include <sstream>

#include "spagrav/config.hpp"
#include "spagrav/error.hpp"
#include "support.hpp"

using namespace spagrav;

namespace {

RunConfig parse(const std::string& text, const std::filesystem::path& base, const std::vector<ConfigOverride>& ov = {}) {
  std::istringstream in(text);
  return parse_config(in, base, ov, "test.ini");
}

const char* kBasic =
    "[data]\n"
    "regions = regions.csv\n"
    "flows = flows.csv\n"
    "covariates = gva, rd\n"
    "[transforms]\n"
    "gva = log\n"
    "[spatial]\n"
    "k = 3\n"
    "grid_resolution = 500\n"
    "[sampler]\n"
    "rho_update = metropolis\n"
    "[schedule]\n"
    "total = 2000\n"
    "burn_in = 1000\n"
    "thin = 2\n"
    "chains = 3\n"
    "seed = 11\n";

}  // namespace

TEST_CASE("config: sections map onto the run settings") {
  test::TempDir dir("config");
  const RunConfig c = parse(kBasic, dir.path());
  CHECK(c.regions == dir / "regions.csv");
  CHECK(c.flows == dir / "flows.csv");
  CHECK(c.covariates == std::vector<std::string>{"gva", "rd"});
  CHECK(c.transforms.at("gva") == Transform::log);
  CHECK(c.k == 3);
  CHECK(c.grid_resolution == 500);
  CHECK(c.sampler.rho_update == RhoUpdate::metropolis);
  CHECK(c.sampler.recenter_effects);
  CHECK(c.sampler.update_rho);
  CHECK(c.sampler.ridge_moves);
  CHECK(c.schedule.total == 2000);
  CHECK(c.schedule.thin == 2);
  CHECK(c.chains == 3);
  const auto s = c.chain_schedules();
  REQUIRE(s.size() == 3);
  CHECK(s[0].seed == 11);
  CHECK(s[2].seed == 13);
  CHECK(c.priors.ig_s == 5.0);
  CHECK(c.priors.ig_v == 0.05);
}

TEST_CASE("config: overrides win and are validated") {
  test::TempDir dir("config");
  const auto ov = parse_overrides({"spatial.k=5", "schedule.seeds=4,9,1", "sampler.update_rho=false",
                                    "sampler.ridge_moves=false"});
  const RunConfig c = parse(kBasic, dir.path(), ov);
  CHECK(c.k == 5);
  CHECK(!c.sampler.update_rho);
  CHECK(!c.sampler.ridge_moves);
  CHECK(c.chain_schedules()[1].seed == 9);
  CHECK_THROWS_AS(parse_overrides({"spatial.k"}), InputError);
  CHECK_THROWS_AS(parse(kBasic, dir.path(), parse_overrides({"spatial.nope=1"})), InputError);
  CHECK_THROWS_AS(parse(kBasic, dir.path(), parse_overrides({"schedule.seeds=1,2"})), InputError);
}

TEST_CASE("config: unknown keys, sections and bad values are rejected") {
  test::TempDir dir("config");
  auto with = [&](const std::string& assignment) { return parse(kBasic, dir.path(), parse_overrides({assignment})); };
  CHECK_THROWS_AS(parse(std::string(kBasic) + "[bogus]\nx = 1\n", dir.path()), InputError);
  CHECK_THROWS_AS(parse(std::string(kBasic) + "[output]\nneighbours = 3\n", dir.path()), InputError);
  CHECK_THROWS_AS(parse("[data]\nflows = f.csv\n", dir.path()), InputError);
  CHECK_THROWS_AS(with("sampler.recenter=maybe"), InputError);
  CHECK_THROWS_AS(with("spatial.logdet=lu"), InputError);
  try {
    with("sampler.rho_update=gibbs");
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("gibbs") != std::string::npos);
  }
}

TEST_CASE("config: validation catches missing files and an inconsistent schedule") {
  test::TempDir dir("config");
  RunConfig c = parse(kBasic, dir.path());
  CHECK_THROWS_AS(c.validate(), InputError);
  test::write_file(dir / "regions.csv", "region_id,country,lon,lat\nA,X,0,0\n");
  test::write_file(dir / "flows.csv", "origin_id,dest_id,count\n");
  CHECK_NOTHROW(c.validate());
  c.schedule.burn_in = 1001;
  CHECK_THROWS_AS(c.validate(), InputError);
  c.schedule.burn_in = 1000;
  c.grid_resolution = 99;
  CHECK_THROWS_AS(c.validate(), InputError);
  c.grid_resolution = 2000;
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("config hash: stable, content-based, blind to seeds and chain count") {
  test::TempDir dir("config");
  test::write_file(dir / "regions.csv", "region_id,country,lon,lat\nA,X,0,0\n");
  test::write_file(dir / "flows.csv", "origin_id,dest_id,count\n");
  const RunConfig a = parse(kBasic, dir.path());
  const std::string h = config_hash(a);
  CHECK(h.size() == 16);
  CHECK(config_hash(parse(kBasic, dir.path())) == h);
  CHECK(config_hash(parse(kBasic, dir.path(), parse_overrides({"schedule.seed=99", "schedule.chains=1"}))) == h);
  CHECK(config_hash(parse(kBasic, dir.path(), parse_overrides({"spatial.k=4"}))) != h);
  CHECK(config_hash(parse(kBasic, dir.path(), parse_overrides({"schedule.total=3000"}))) != h);
  test::write_file(dir / "flows.csv", "origin_id,dest_id,count\nA,A,1\n");
  CHECK(config_hash(parse(kBasic, dir.path())) != h);
}

TEST_CASE("simulation spec: defaults, preset and overrides") {
  std::istringstream plain("[simulate]\nn = 30\ncountries = 3\nrho_o = 0.2\n");
  const SimulationSpec s = parse_simulation_spec(plain);
  CHECK(s.n == 30);
  CHECK(s.countries == 3);
  CHECK(s.rho_o == 0.2);
  CHECK(s.rho_d == SimulationSpec{}.rho_d);

  std::istringstream demo("[simulate]\npreset = demo\n");
  const SimulationSpec d = parse_simulation_spec(demo, parse_overrides({"simulate.seed=5"}));
  const SimulationSpec ref = demo_spec();
  CHECK(d.n == ref.n);
  CHECK(d.covariate_names == ref.covariate_names);
  CHECK(d.seed == 5);

  std::istringstream bad("[simulate]\npreset = huge\n");
  CHECK_THROWS_AS(parse_simulation_spec(bad), InputError);
}
