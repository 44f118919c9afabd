#include "spagrav/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

namespace pt = boost::property_tree;

std::vector<ConfigOverride> parse_overrides(const std::vector<std::string>& assignments) {
  std::vector<ConfigOverride> out;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq)
      throw InputError("override '" + a + "' is not of the form section.key=value");
    out.emplace_back(a.substr(0, eq), a.substr(eq + 1));
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  return out;
}

// Typed access to a parsed INI tree that rejects keys it does not know.
class Reader {
 public:
  Reader(pt::ptree tree, std::string source, std::set<std::string> known_sections)
      : tree_(std::move(tree)), source_(std::move(source)), sections_(std::move(known_sections)) {}

  std::optional<std::string> text(const std::string& key) {
    used_.insert(key);
    auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (!v) return std::nullopt;
    std::string t = trim(*v);
    if (t.empty()) return std::nullopt;
    return t;
  }

  std::string text_or(const std::string& key, const std::string& fallback) { return text(key).value_or(fallback); }

  double number(const std::string& key, double fallback) {
    auto t = text(key);
    return t ? csv::parse_double(*t, where(key)) : fallback;
  }

  template <typename Int>
  Int integer(const std::string& key, Int fallback) {
    auto t = text(key);
    if (!t) return fallback;
    const long long v = csv::parse_integer(*t, where(key));
    if (v < 0 && std::is_unsigned_v<Int>) throw InputError(where(key) + ": must not be negative");
    return static_cast<Int>(v);
  }

  bool flag(const std::string& key, bool fallback) {
    auto t = text(key);
    if (!t) return fallback;
    std::string v = *t;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw InputError(where(key) + ": expected true or false, got '" + *t + "'");
  }

  // Keys of a free-form section such as [transforms].
  std::vector<std::pair<std::string, std::string>> section(const std::string& name) {
    std::vector<std::pair<std::string, std::string>> out;
    if (auto s = tree_.get_child_optional(pt::ptree::path_type(name, '.')))
      for (const auto& [k, v] : *s) {
        used_.insert(name + "." + k);
        out.emplace_back(k, trim(v.data()));
      }
    return out;
  }

  // Every key in the tree must have been read.
  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (!sections_.count(section)) throw InputError(source_ + ": unknown section [" + section + "]");
      for (const auto& [key, value] : body)
        if (!used_.count(section + "." + key)) throw InputError(source_ + ": unknown key '" + key + "' in [" + section + "]");
    }
  }

  std::string where(const std::string& key) const { return source_ + ": " + key; }

 private:
  pt::ptree tree_;
  std::string source_;
  std::set<std::string> sections_;
  std::set<std::string> used_;
};

pt::ptree read_tree(std::istream& in, const std::vector<ConfigOverride>& overrides, const std::string& source) {
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InputError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [key, value] : overrides) tree.put(pt::ptree::path_type(key, '.'), value);
  return tree;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

Eigen::VectorXd number_list(const std::string& text, const std::string& where) {
  const auto cells = split_list(text);
  Eigen::VectorXd v(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) v[static_cast<Eigen::Index>(i)] = csv::parse_double(cells[i], where);
  return v;
}

std::string content_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

std::string join_numbers(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + csv::format_exact(v[i]);
  return s;
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir,
                       const std::vector<ConfigOverride>& overrides, const std::string& source) {
  Reader r(read_tree(in, overrides, source), source,
           {"data", "transforms", "spatial", "sampler", "priors", "schedule", "output", "mixture", "simulate"});
  RunConfig c;
  auto required_path = [&](const std::string& key) {
    auto t = r.text(key);
    if (!t) throw InputError(source + ": missing required key " + key);
    return resolve(base_dir, *t);
  };
  auto optional_path = [&](const std::string& key) -> std::optional<std::filesystem::path> {
    auto t = r.text(key);
    if (!t) return std::nullopt;
    return resolve(base_dir, *t);
  };
  c.regions = required_path("data.regions");
  c.flows = optional_path("data.flows").value_or(std::filesystem::path{});
  c.dyad_covariates = optional_path("data.dyad_covariates");
  c.weights = optional_path("data.weights");
  c.panel = optional_path("data.panel");
  c.panel_name = r.text_or("data.panel_name", c.panel_name);
  c.depreciation = r.number("data.depreciation", c.depreciation);
  c.covariates = split_list(r.text_or("data.covariates", ""));
  const std::string mode = r.text_or("data.dyad_mode", "dense");
  if (mode == "dense") c.dyad_mode = DyadMode::dense;
  else if (mode == "sparse") c.dyad_mode = DyadMode::sparse;
  else throw InputError(r.where("data.dyad_mode") + ": expected dense or sparse");
  c.include_distance = r.flag("data.include_distance", false);

  for (const auto& [name, value] : r.section("transforms")) c.transforms[name] = parse_transform(value);

  c.k = r.integer<int>("spatial.k", c.k);
  c.grid_resolution = r.integer<std::size_t>("spatial.grid_resolution", c.grid_resolution);
  const std::string logdet = r.text_or("spatial.logdet", "exact");
  if (logdet == "exact") c.logdet = LogDetMethod::exact;
  else if (logdet == "approximate") c.logdet = LogDetMethod::approximate;
  else throw InputError(r.where("spatial.logdet") + ": expected exact or approximate");

  c.sampler.rho_update = parse_rho_update(r.text_or("sampler.rho_update", "griddy"));
  c.sampler.recenter_effects = r.flag("sampler.recenter", c.sampler.recenter_effects);
  c.sampler.update_rho = r.flag("sampler.update_rho", c.sampler.update_rho);
  c.sampler.ridge_moves = r.flag("sampler.ridge_moves", c.sampler.ridge_moves);
  c.sampler.initial_proposal_scale = r.number("sampler.proposal_scale", c.sampler.initial_proposal_scale);
  c.sampler.target_low = r.number("sampler.acceptance_low", c.sampler.target_low);
  c.sampler.target_high = r.number("sampler.acceptance_high", c.sampler.target_high);
  c.sampler.adapt_window = r.integer<std::size_t>("sampler.adapt_window", c.sampler.adapt_window);
  c.sampler.check_invariants = r.flag("sampler.check_invariants", c.sampler.check_invariants);

  if (auto t = r.text("priors.gamma_mean")) c.priors.gamma_mean = number_list(*t, r.where("priors.gamma_mean"));
  if (auto t = r.text("priors.gamma_variance"))
    c.priors.gamma_variance = number_list(*t, r.where("priors.gamma_variance"));
  c.priors.ig_s = r.number("priors.ig_rate", c.priors.ig_s);
  c.priors.ig_v = r.number("priors.ig_shape", c.priors.ig_v);

  c.schedule.total = r.integer<std::size_t>("schedule.total", c.schedule.total);
  c.schedule.burn_in = r.integer<std::size_t>("schedule.burn_in", c.schedule.burn_in);
  c.schedule.thin = r.integer<std::size_t>("schedule.thin", c.schedule.thin);
  c.schedule.seed = r.integer<std::uint64_t>("schedule.seed", c.schedule.seed);
  c.chains = r.integer<std::size_t>("schedule.chains", c.chains);
  for (const auto& s : split_list(r.text_or("schedule.seeds", "")))
    c.seeds.push_back(static_cast<std::uint64_t>(csv::parse_integer(s, r.where("schedule.seeds"))));

  if (auto t = r.text("output.directory")) c.output_dir = resolve(base_dir, *t);
  c.mixture_table = optional_path("mixture.table");
  r.section("simulate");  // read by the simulate command
  r.reject_unknown();

  if (c.chains == 0) throw InputError(source + ": schedule.chains must be at least 1");
  if (!c.seeds.empty() && c.seeds.size() != c.chains)
    throw InputError(source + ": schedule.seeds lists " + std::to_string(c.seeds.size()) + " seeds for " +
                     std::to_string(c.chains) + " chains");
  c.schedule.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  return parse_config(in, path.parent_path(), overrides, path.string());
}

void RunConfig::validate() const {
  auto exists = [](const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::is_regular_file(p)) throw InputError(std::string(what) + " file not found: " + p.string());
  };
  exists(regions, "regions");
  exists(flows, "flows");
  if (dyad_covariates) exists(*dyad_covariates, "dyad covariates");
  if (weights) exists(*weights, "weights");
  if (panel) exists(*panel, "panel");
  if (mixture_table) exists(*mixture_table, "mixture table");
  if (k < 1) throw InputError("spatial.k must be at least 1");
  if (grid_resolution < 100) throw InputError("spatial.grid_resolution must be at least 100");
  if (!(depreciation >= 0.0 && depreciation < 1.0)) throw InputError("data.depreciation must lie in [0, 1)");
  schedule.validate();
  if (chains == 0) throw InputError("schedule.chains must be at least 1");
}

std::vector<Schedule> RunConfig::chain_schedules() const {
  std::vector<Schedule> out;
  for (std::size_t c = 0; c < chains; ++c) {
    Schedule s = schedule;
    s.seed = seeds.empty() ? schedule.seed + c : seeds[c];
    out.push_back(s);
  }
  return out;
}

std::string RunConfig::canonical() const {
  std::ostringstream out;
  auto file = [&](const char* key, const std::optional<std::filesystem::path>& p) {
    out << key << '=' << (p ? content_hash(*p) : "none") << '\n';
  };
  file("regions", regions);
  file("flows", flows);
  file("dyad_covariates", dyad_covariates);
  file("weights", weights);
  file("panel", panel);
  out << "panel_name=" << (panel ? panel_name : "") << '\n'
      << "depreciation=" << csv::format_exact(depreciation) << '\n';
  out << "covariates=";
  for (std::size_t i = 0; i < covariates.size(); ++i) out << (i ? "," : "") << covariates[i];
  out << '\n'
      << "dyad_mode=" << (dyad_mode == DyadMode::dense ? "dense" : "sparse") << '\n'
      << "include_distance=" << include_distance << '\n';
  for (const auto& [name, t] : transforms) out << "transform." << name << '=' << (t == Transform::log ? "log" : "level") << '\n';
  out << "k=" << k << '\n'
      << "grid_resolution=" << grid_resolution << '\n'
      << "logdet=" << (logdet == LogDetMethod::exact ? "exact" : "approximate") << '\n'
      << "rho_update=" << rho_update_name(sampler.rho_update) << '\n'
      << "recenter=" << sampler.recenter_effects << '\n'
      << "update_rho=" << sampler.update_rho << '\n'
      << "ridge_moves=" << sampler.ridge_moves << '\n'
      << "proposal_scale=" << csv::format_exact(sampler.initial_proposal_scale) << '\n'
      << "acceptance=" << csv::format_exact(sampler.target_low) << ',' << csv::format_exact(sampler.target_high) << '\n'
      << "adapt_window=" << sampler.adapt_window << '\n'
      << "gamma_mean=" << join_numbers(priors.gamma_mean) << '\n'
      << "gamma_variance=" << join_numbers(priors.gamma_variance) << '\n'
      << "ig_rate=" << csv::format_exact(priors.ig_s) << '\n'
      << "ig_shape=" << csv::format_exact(priors.ig_v) << '\n'
      << "total=" << schedule.total << '\n'
      << "burn_in=" << schedule.burn_in << '\n'
      << "thin=" << schedule.thin << '\n';
  return out.str();
}

std::string config_hash(const RunConfig& config) { return hex64(fnv1a64(config.canonical())); }

SimulationSpec parse_simulation_spec(std::istream& in, const std::vector<ConfigOverride>& overrides,
                                     const std::string& source) {
  pt::ptree tree = read_tree(in, overrides, source);
  // A fit config may carry a [simulate] section; only that section is read.
  pt::ptree only;
  if (auto s = tree.get_child_optional("simulate")) only.put_child("simulate", *s);
  Reader r(std::move(only), source, {"simulate"});
  const std::string preset = r.text_or("simulate.preset", "default");
  SimulationSpec s;
  if (preset == "demo") s = demo_spec();
  else if (preset != "default") throw InputError(r.where("simulate.preset") + ": expected default or demo");
  s.n = r.integer<std::size_t>("simulate.n", s.n);
  s.countries = r.integer<std::size_t>("simulate.countries", s.countries);
  s.p_x = r.integer<std::size_t>("simulate.p_x", s.p_x);
  s.p_d = r.integer<std::size_t>("simulate.p_d", s.p_d);
  s.k = r.integer<int>("simulate.k", s.k);
  if (auto t = r.text("simulate.covariate_names")) s.covariate_names = split_list(*t);
  if (auto t = r.text("simulate.dyad_covariate_names")) s.dyad_covariate_names = split_list(*t);
  const auto gamma_text = r.text("simulate.gamma");
  if (gamma_text) s.gamma = number_list(*gamma_text, r.where("simulate.gamma"));
  s.log_distance = r.flag("simulate.log_distance", s.log_distance);
  s.rho_o = r.number("simulate.rho_o", s.rho_o);
  s.rho_d = r.number("simulate.rho_d", s.rho_d);
  s.phi2_o = r.number("simulate.phi2_o", s.phi2_o);
  s.phi2_d = r.number("simulate.phi2_d", s.phi2_d);
  s.seed = r.integer<std::uint64_t>("simulate.seed", s.seed);
  s.lon_min = r.number("simulate.lon_min", s.lon_min);
  s.lon_max = r.number("simulate.lon_max", s.lon_max);
  s.lat_min = r.number("simulate.lat_min", s.lat_min);
  s.lat_max = r.number("simulate.lat_max", s.lat_max);
  r.reject_unknown();
  // Presets fix their own names; changing p_x or p_d drops them.
  if (!s.covariate_names.empty() && s.covariate_names.size() != s.p_x) s.covariate_names.clear();
  if (!s.dyad_covariate_names.empty() && s.dyad_covariate_names.size() != s.p_d) s.dyad_covariate_names.clear();
  if (!gamma_text && static_cast<std::size_t>(s.gamma.size()) != 1 + 4 * s.p_x + s.p_d)
    s.gamma.resize(0);
  s.validate();
  return s;
}

SimulationSpec load_simulation_spec(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  return parse_simulation_spec(in, overrides, path.string());
}

FitInputs prepare_inputs(const RunConfig& config) {
  config.validate();
  std::vector<std::string> warnings;
  RegionSchema schema;
  for (const auto& name : config.covariates)
    if (!config.panel || name != config.panel_name) schema.covariates.push_back(name);
  RegionSet regions = load_regions(config.regions, schema);
  if (config.panel) {
    const auto panel = load_panel(*config.panel);
    const auto stock = knowledge_stock(panel, config.depreciation);
    Eigen::VectorXd column(static_cast<Eigen::Index>(regions.size()));
    for (std::size_t i = 0; i < regions.size(); ++i) {
      auto it = stock.find(regions.id(i));
      if (it == stock.end())
        throw InputError(config.panel->string() + ": no series for region '" + regions.id(i) + "'");
      column[static_cast<Eigen::Index>(i)] = it->second;
    }
    regions = regions.with_covariate(config.panel_name, column);
  }

  DyadOptions options;
  options.mode = config.dyad_mode;
  options.include_distance = config.include_distance;
  options.covariates_file = config.dyad_covariates;
  DyadFrame dyads = build_dyads(regions, config.flows, options);
  warnings.insert(warnings.end(), dyads.warnings.begin(), dyads.warnings.end());
  if (dyads.size() == 0) throw InputError("no admissible dyads to fit");

  std::optional<SpatialSystem> spatial;
  if (config.weights)
    spatial.emplace(load_weight_triplets(*config.weights, regions, &warnings));
  else
    spatial.emplace(knn_weights(regions, config.k));
  LogDetOptions lo;
  lo.resolution = config.grid_resolution;
  lo.method = config.logdet;
  LogDetGrid grid = build_logdet_grid(*spatial, lo);
  warnings.insert(warnings.end(), grid.warnings.begin(), grid.warnings.end());
  spatial->set_logdet_grid(std::move(grid));

  DesignMatrices designs = assemble_designs(regions, dyads, *spatial, config.transforms);
  return {std::move(regions), std::move(dyads), std::move(*spatial), std::move(designs), std::move(warnings)};
}

MixtureTable resolve_mixture_table(const std::optional<std::filesystem::path>& explicit_path,
                                   std::vector<std::string>* warnings) {
  if (explicit_path) return MixtureTable::load(*explicit_path);
  if (const char* env = std::getenv("SPAGRAV_MIXTURE_TABLE"); env && *env) return MixtureTable::load(env);
  for (const char* dir : {SPAGRAV_BUILD_DATA_DIR, SPAGRAV_INSTALL_DATA_DIR}) {
    const std::filesystem::path p = std::filesystem::path(dir) / "mixture_table_v1.csv";
    if (std::filesystem::is_regular_file(p)) return MixtureTable::load(p);
  }
  if (warnings) warnings->push_back("no mixture table found; fitting one now (slow)");
  return fit_mixture_table(100, {}, warnings);
}

}  // namespace spagrav
