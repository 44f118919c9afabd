#include "spagrav/chain_io.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "spagrav/csv.hpp"
#include "spagrav/error.hpp"

namespace spagrav {

namespace {

constexpr const char* kDrawsMagic = "spagrav draws";
constexpr const char* kCheckpointMagic = "spagrav checkpoint v1";

std::map<std::string, std::string> metadata_map(const std::vector<std::string>& comments) {
  std::map<std::string, std::string> out;
  for (const auto& c : comments) {
    auto eq = c.find('=');
    if (eq != std::string::npos) out[c.substr(0, eq)] = c.substr(eq + 1);
  }
  return out;
}

std::size_t to_size(const std::string& s, const std::string& where) {
  const long long v = csv::parse_integer(s, where);
  if (v < 0) throw InputError(where + ": negative value");
  return static_cast<std::size_t>(v);
}

std::uint64_t to_u64(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  std::istringstream in(s);
  if (!(in >> v) || !in.eof()) throw InputError(where + ": expected an unsigned integer, got '" + s + "'");
  return v;
}

}  // namespace

void write_draws(std::ostream& out, const ChainOutput& chain) {
  const ChainMetadata& m = chain.metadata;
  out << "# " << kDrawsMagic << '\n'
      << "# chain=" << m.chain << '\n'
      << "# seed=" << m.schedule.seed << '\n'
      << "# total=" << m.schedule.total << '\n'
      << "# burn_in=" << m.schedule.burn_in << '\n'
      << "# thin=" << m.schedule.thin << '\n'
      << "# config_hash=" << m.config_hash << '\n'
      << "# mixture_checksum=" << m.mixture_checksum << '\n'
      << "# rho_update=" << m.rho_update << '\n'
      << "# overflow_events=" << m.overflow_events << '\n'
      << "# acceptance_o=" << csv::format_exact(m.acceptance_o) << '\n'
      << "# acceptance_d=" << csv::format_exact(m.acceptance_d) << '\n';
  out << "sweep";
  for (const auto& name : chain.parameter_names) out << ',' << name;
  out << '\n';
  for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
    out << chain.sweeps[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < chain.draws.cols(); ++c) out << ',' << csv::format_exact(chain.draws(r, c));
    out << '\n';
  }
}

ChainOutput read_draws(std::istream& in, const std::string& source) {
  const csv::Table t = csv::parse(in, source);
  if (t.comments.empty() || t.comments.front() != kDrawsMagic) throw InputError(source + ": not a draw store");
  const auto meta = metadata_map(t.comments);
  auto get = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw InputError(source + ": missing metadata '" + key + "'");
    return it->second;
  };
  if (t.header.empty() || t.header.front() != "sweep") throw InputError(source + ": first column must be 'sweep'");

  ChainOutput c;
  c.metadata.chain = to_size(get("chain"), source);
  c.metadata.schedule.seed = to_u64(get("seed"), source);
  c.metadata.schedule.total = to_size(get("total"), source);
  c.metadata.schedule.burn_in = to_size(get("burn_in"), source);
  c.metadata.schedule.thin = to_size(get("thin"), source);
  c.metadata.config_hash = get("config_hash");
  c.metadata.mixture_checksum = get("mixture_checksum");
  c.metadata.rho_update = get("rho_update");
  c.metadata.overflow_events = to_u64(get("overflow_events"), source);
  c.metadata.acceptance_o = csv::parse_double(get("acceptance_o"), source);
  c.metadata.acceptance_d = csv::parse_double(get("acceptance_d"), source);
  c.parameter_names.assign(t.header.begin() + 1, t.header.end());
  c.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(c.parameter_names.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = source + ":" + std::to_string(t.rows[r].line);
    c.sweeps.push_back(to_size(t.rows[r].cells[0], where));
    for (std::size_t k = 0; k < c.parameter_names.size(); ++k)
      c.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          csv::parse_double(t.rows[r].cells[k + 1], where);
  }
  return c;
}

void save_draws(const std::filesystem::path& path, const ChainOutput& chain) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_draws(out, chain);
  if (!out) throw InputError("failed writing " + path.string());
}

ChainOutput load_draws(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_draws(in, path.string());
}

namespace {

void put_vector(std::ostream& out, const char* key, const Eigen::VectorXd& v) {
  out << key << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << csv::format_exact(v[i]);
  out << '\n';
}

void put_scalar(std::ostream& out, const char* key, double v) { out << key << ' ' << csv::format_exact(v) << '\n'; }

void put_proposal(std::ostream& out, const char* key, const RhoProposal& p) {
  out << key << ' ' << csv::format_exact(p.scale) << ' ' << p.window_proposed << ' ' << p.window_accepted << ' '
      << p.proposed << ' ' << p.accepted << '\n';
}

// Line-oriented reader: every line starts with its key.
class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::istringstream next(const std::string& key) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) break;
    }
    std::istringstream fields(line);
    std::string got;
    fields >> got;
    if (got != key) fail("expected '" + key + "', found '" + got + "'");
    return fields;
  }

  std::string rest(const std::string& key) {
    auto f = next(key);
    std::string value;
    std::getline(f >> std::ws, value);
    return value;
  }

  double number(std::istringstream& f) {
    std::string tok;
    if (!(f >> tok)) fail("missing number");
    return csv::parse_double(tok, where());
  }

  std::size_t count(std::istringstream& f) {
    std::uint64_t v = 0;
    if (!(f >> v)) fail("missing count");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t u64(std::istringstream& f) {
    std::uint64_t v = 0;
    if (!(f >> v)) fail("missing integer");
    return v;
  }

  Eigen::VectorXd vector(const std::string& key) {
    auto f = next(key);
    const std::size_t n = count(f);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = number(f);
    return v;
  }

  double scalar(const std::string& key) {
    auto f = next(key);
    return number(f);
  }

  RhoProposal proposal(const std::string& key) {
    auto f = next(key);
    RhoProposal p;
    p.scale = number(f);
    p.window_proposed = u64(f);
    p.window_accepted = u64(f);
    p.proposed = u64(f);
    p.accepted = u64(f);
    return p;
  }

  [[noreturn]] void fail(const std::string& what) const { throw InputError(where() + ": " + what); }
  std::string where() const { return source_ + ":" + std::to_string(line_); }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const CheckpointFile& file) {
  const ChainCheckpoint& cp = file.checkpoint;
  const ChainState& s = cp.state;
  out << kCheckpointMagic << '\n'
      << "config_hash " << file.config_hash << '\n'
      << "chain " << file.chain << '\n'
      << "schedule " << file.schedule.total << ' ' << file.schedule.burn_in << ' ' << file.schedule.thin << ' '
      << file.schedule.seed << '\n'
      << "completed " << cp.completed_sweeps << '\n'
      << "rng " << cp.rng_state << '\n';
  put_vector(out, "gamma", s.gamma);
  put_vector(out, "theta_o", s.theta_o);
  put_vector(out, "theta_d", s.theta_d);
  put_scalar(out, "rho_o", s.rho_o);
  put_scalar(out, "rho_d", s.rho_d);
  put_scalar(out, "phi2_o", s.phi2_o);
  put_scalar(out, "phi2_d", s.phi2_d);
  put_proposal(out, "proposal_o", s.proposal_o);
  put_proposal(out, "proposal_d", s.proposal_d);
  out << "overflow " << s.overflow_events << '\n';
  put_vector(out, "tau", s.augmented.tau);
  out << "indicator " << s.augmented.indicator.size();
  for (int k : s.augmented.indicator) out << ' ' << k;
  out << '\n';
  put_vector(out, "omega", s.augmented.omega);
  put_vector(out, "working_response", s.augmented.working_response);
  out << "draws " << cp.draws.size() << ' ' << (cp.draws.empty() ? 0 : cp.draws.front().size()) << '\n';
  for (std::size_t r = 0; r < cp.draws.size(); ++r) {
    out << "d " << cp.sweeps[r];
    for (double v : cp.draws[r]) out << ' ' << csv::format_exact(v);
    out << '\n';
  }
  out << "end\n";
}

CheckpointFile read_checkpoint(std::istream& in, const std::string& source) {
  std::string magic;
  std::getline(in, magic);
  if (!magic.empty() && magic.back() == '\r') magic.pop_back();
  if (magic != kCheckpointMagic) throw InputError(source + ": not a checkpoint file");
  LineReader r(in, source);
  CheckpointFile file;
  file.config_hash = r.rest("config_hash");
  {
    auto f = r.next("chain");
    file.chain = r.count(f);
  }
  {
    auto f = r.next("schedule");
    file.schedule.total = r.count(f);
    file.schedule.burn_in = r.count(f);
    file.schedule.thin = r.count(f);
    file.schedule.seed = r.u64(f);
  }
  ChainCheckpoint& cp = file.checkpoint;
  {
    auto f = r.next("completed");
    cp.completed_sweeps = r.count(f);
  }
  cp.rng_state = r.rest("rng");
  ChainState& s = cp.state;
  s.gamma = r.vector("gamma");
  s.theta_o = r.vector("theta_o");
  s.theta_d = r.vector("theta_d");
  s.rho_o = r.scalar("rho_o");
  s.rho_d = r.scalar("rho_d");
  s.phi2_o = r.scalar("phi2_o");
  s.phi2_d = r.scalar("phi2_d");
  s.proposal_o = r.proposal("proposal_o");
  s.proposal_d = r.proposal("proposal_d");
  {
    auto f = r.next("overflow");
    s.overflow_events = r.u64(f);
  }
  s.augmented.tau = r.vector("tau");
  {
    auto f = r.next("indicator");
    const std::size_t n = r.count(f);
    s.augmented.indicator.resize(n);
    for (auto& k : s.augmented.indicator)
      if (!(f >> k)) r.fail("short indicator list");
  }
  s.augmented.omega = r.vector("omega");
  s.augmented.working_response = r.vector("working_response");
  {
    auto f = r.next("draws");
    const std::size_t rows = r.count(f);
    const std::size_t cols = r.count(f);
    for (std::size_t i = 0; i < rows; ++i) {
      auto d = r.next("d");
      cp.sweeps.push_back(r.count(d));
      std::vector<double> row(cols);
      for (auto& v : row) v = r.number(d);
      cp.draws.push_back(std::move(row));
    }
  }
  r.next("end");
  return file;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_checkpoint(out, file);
  if (!out) throw InputError("failed writing " + path.string());
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_checkpoint(in, path.string());
}

}  // namespace spagrav
