#include "ggpm/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ggpm {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out << content;
    if (!out.good()) throw Error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("rename failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DomainError("cannot parse number '" + s + "' in " + where);
  }
}

}  // namespace

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DomainError("empty data file '" + path + "'");
  const auto header = split_csv_line(line);
  int y_col = -1, eta_col = -1;
  std::vector<int> feature_cols;
  Dataset d;
  d.path = path;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    const std::string name = trim(header[j]);
    if (name == "y") y_col = j;
    else if (name == "eta") eta_col = j;
    else {
      feature_cols.push_back(j);
      d.feature_names.push_back(name);
    }
  }
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DomainError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " columns, got " +
                        std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (size_t j = 0; j < cells.size(); ++j) {
      row[j] = parse_double(trim(cells[j]), path + ":" + std::to_string(line_no));
      if (!std::isfinite(row[j]))
        throw DomainError(path + ":" + std::to_string(line_no) + ": non-finite value");
    }
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  const int nf = static_cast<int>(feature_cols.size());
  if (nf == 0) throw DomainError(path + ": no feature columns");
  d.x.resize(n, nf);
  if (y_col >= 0) {
    d.y.resize(n);
    d.has_y = true;
  }
  if (eta_col >= 0) {
    d.eta.resize(n);
    d.has_eta = true;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nf; ++j) d.x(i, j) = rows[i][feature_cols[j]];
    if (y_col >= 0) d.y[i] = rows[i][y_col];
    if (eta_col >= 0) d.eta[i] = rows[i][eta_col];
  }
  return d;
}

void save_dataset_csv(const std::string& path, const Dataset& data) {
  std::ostringstream out;
  for (size_t j = 0; j < data.feature_names.size(); ++j) {
    if (j) out << ",";
    out << data.feature_names[j];
  }
  if (data.has_y) out << ",y";
  if (data.has_eta) out << ",eta";
  out << "\n";
  for (int i = 0; i < data.x.rows(); ++i) {
    for (int j = 0; j < data.x.cols(); ++j) {
      if (j) out << ",";
      out << format_double(data.x(i, j));
    }
    if (data.has_y) out << "," << format_double(data.y[i]);
    if (data.has_eta) out << "," << format_double(data.eta[i]);
    out << "\n";
  }
  atomic_write(path, out.str());
}

void validate_dataset(const Dataset& data, const Likelihood& lik) {
  if (!data.has_y) throw DomainError(data.path + ": missing output column 'y'");
  for (int i = 0; i < data.y.size(); ++i) {
    if (!lik.support().contains(data.y[i]))
      throw DomainError(data.path + ": row " + std::to_string(i + 2) + ": output " +
                        format_double(data.y[i]) + " outside " + lik.id() + " support (" +
                        lik.support().describe() + ")");
  }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

struct IniData {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::map<std::string, int> lines;  // "section.key" -> line number
};

IniData parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open config file '" + path + "'");
  IniData ini;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    const auto hash = s.find('#');
    if (hash != std::string::npos) s = trim(s.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw DomainError(path + ":" + std::to_string(line_no) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw DomainError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    ini.sections[section][key] = value;
    ini.lines[section + "." + key] = line_no;
  }
  return ini;
}

class ConfigReader {
 public:
  ConfigReader(IniData ini, std::string path) : ini_(std::move(ini)), path_(std::move(path)) {}

  std::optional<std::string> get(const std::string& sec, const std::string& key) const {
    auto s = ini_.sections.find(sec);
    if (s == ini_.sections.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  }
  std::string where(const std::string& sec, const std::string& key) const {
    auto it = ini_.lines.find(sec + "." + key);
    return path_ + (it != ini_.lines.end() ? ":" + std::to_string(it->second) : "");
  }
  void read(const std::string& sec, const std::string& key, std::string& out) const {
    if (auto v = get(sec, key)) out = *v;
  }
  void read(const std::string& sec, const std::string& key, double& out) const {
    if (auto v = get(sec, key)) out = parse_double(*v, where(sec, key));
  }
  void read(const std::string& sec, const std::string& key, int& out) const {
    if (auto v = get(sec, key)) out = static_cast<int>(parse_double(*v, where(sec, key)));
  }
  void read(const std::string& sec, const std::string& key, bool& out) const {
    if (auto v = get(sec, key)) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else throw DomainError(where(sec, key) + ": expected true/false");
    }
  }
  void read(const std::string& sec, const std::string& key, std::vector<double>& out) const {
    if (auto v = get(sec, key)) {
      out.clear();
      std::istringstream ss(*v);
      std::string tok;
      while (ss >> tok) out.push_back(parse_double(tok, where(sec, key)));
    }
  }

 private:
  IniData ini_;
  std::string path_;
};

}  // namespace

RunConfig load_config(const std::string& path) {
  const ConfigReader r(parse_ini(path), path);
  RunConfig c;
  std::string version;
  r.read("", "ggpm_config_version", version);
  if (version != "1")
    throw DomainError(path + ": missing or unsupported ggpm_config_version (expected 1)");

  r.read("likelihood", "id", c.likelihood_id);
  r.read("likelihood", "dispersion", c.dispersion);
  r.read("likelihood", "n_trials", c.n_trials);
  r.read("likelihood", "offset", c.offset);
  r.read("likelihood", "clamp_unit_interval", c.clamp_unit_interval);
  r.read("kernel", "kind", c.kernel_kind);
  r.read("kernel", "log_hyperparams", c.kernel_log_hyperparams);
  r.read("kernel", "jitter", c.kernel_jitter);
  r.read("engine", "id", c.engine_id);
  r.read("fit", "strategy", c.fit_strategy);
  r.read("fit", "n_random", c.n_random);
  r.read("fit", "top_k", c.top_k);
  r.read("fit", "dedup_dist", c.dedup_dist);
  r.read("fit", "start_lo", c.start_lo);
  r.read("fit", "start_hi", c.start_hi);
  r.read("fit", "max_iter", c.opt_max_iter);
  r.read("fit", "gtol", c.opt_gtol);
  r.read("numerics", "quad_order", c.quad_order);
  r.read("numerics", "quad_adaptive", c.quad_adaptive);
  r.read("numerics", "quad_tol", c.quad_tol);
  r.read("numerics", "ep_tol", c.ep_tol);
  r.read("numerics", "ep_damping", c.ep_damping);
  r.read("numerics", "ep_max_sweeps", c.ep_max_sweeps);
  r.read("numerics", "newton_tol", c.newton_tol);
  r.read("numerics", "newton_max_iter", c.newton_max_iter);
  r.read("numerics", "kld_gtol", c.kld_gtol);
  r.read("numerics", "kld_max_iter", c.kld_max_iter);
  if (auto v = r.get("run", "seed")) {
    c.seed = static_cast<std::uint64_t>(std::stoull(*v));
    c.seed_set = true;
  }

  engine_from_string(c.engine_id);
  fit_strategy_from_string(c.fit_strategy);
  bool known = false;
  for (const auto& id : likelihood_catalog()) known = known || id == c.likelihood_id;
  if (!known) throw DomainError(path + ": unknown likelihood id '" + c.likelihood_id + "'");
  KernelSpec::parse(c.kernel_kind);
  return c;
}

Likelihood RunConfig::make_lik() const {
  return make_likelihood(likelihood_id, dispersion, n_trials, offset);
}

KernelSpec RunConfig::make_kernel() const {
  KernelSpec k = KernelSpec::parse(kernel_kind);
  if (!kernel_log_hyperparams.empty()) {
    Vec h(kernel_log_hyperparams.size());
    for (size_t i = 0; i < kernel_log_hyperparams.size(); ++i) h[i] = kernel_log_hyperparams[i];
    k.set_flat_log_hyperparams(h);
  }
  std::function<void(KernelSpec&)> set_jit = [&](KernelSpec& ks) {
    ks.jitter_rel = kernel_jitter;
    for (auto& p : ks.parts) set_jit(p);
  };
  set_jit(k);
  return k;
}

InferOpts RunConfig::make_infer_opts() const {
  InferOpts o;
  o.quad = {quad_order, quad_adaptive, quad_tol, 2049};
  o.ep.tol = ep_tol;
  o.ep.damping = ep_damping;
  o.ep.max_sweeps = ep_max_sweeps;
  o.newton.tol = newton_tol;
  o.newton.max_iter = newton_max_iter;
  o.kld.gtol = kld_gtol;
  o.kld.max_iter = kld_max_iter;
  return o;
}

FitOpts RunConfig::make_fit_opts() const {
  FitOpts f;
  f.n_random = n_random;
  f.top_k = top_k;
  f.dedup_dist = dedup_dist;
  f.start_lo = start_lo;
  f.start_hi = start_hi;
  f.seed = seed;
  f.optimizer.max_iter = opt_max_iter;
  f.optimizer.gtol = opt_gtol;
  f.infer = make_infer_opts();
  return f;
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

void save_model(const std::string& path, const ModelFile& mf) {
  if (!mf.posterior.common) throw Error("model posterior lacks the common (W, t) form");
  std::ostringstream out;
  const GgpmModel& m = mf.model;
  out << "ggpm_model_version 1\n";
  out << "likelihood " << m.lik.id() << "\n";
  out << "dispersion " << format_double(m.lik.dispersion()) << "\n";
  out << "n_trials " << m.lik.n_trials() << "\n";
  out << "offset " << format_double(m.lik.count_offset()) << "\n";
  out << "engine " << engine_to_string(m.engine) << "\n";
  out << "kernel " << m.kernel.describe() << "\n";
  const Vec kh = m.kernel.flat_log_hyperparams();
  out << "kernel_log_hyperparams";
  for (int i = 0; i < kh.size(); ++i) out << " " << format_double(kh[i]);
  out << "\n";
  out << "kernel_jitter " << format_double(mf.config.kernel_jitter) << "\n";
  out << "quad_order " << mf.config.quad_order << "\n";
  out << "quad_adaptive " << (mf.config.quad_adaptive ? 1 : 0) << "\n";
  out << "quad_tol " << format_double(mf.config.quad_tol) << "\n";
  out << "log_marginal " << format_double(mf.log_marginal) << "\n";
  out << "n " << m.y.size() << "\n";
  out << "d " << m.x.cols() << "\n";
  out << "site_prec";
  for (int i = 0; i < mf.posterior.common->site_prec.size(); ++i)
    out << " " << format_double(mf.posterior.common->site_prec[i]);
  out << "\nsite_nu";
  for (int i = 0; i < mf.posterior.common->nu.size(); ++i)
    out << " " << format_double(mf.posterior.common->nu[i]);
  out << "\ndata\n";
  for (int i = 0; i < m.y.size(); ++i) {
    for (int j = 0; j < m.x.cols(); ++j) out << format_double(m.x(i, j)) << " ";
    out << format_double(m.y[i]) << "\n";
  }
  atomic_write(path, out.str());
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open model file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line == "data") break;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw DomainError(path + ": malformed model line '" + line + "'");
    kv[line.substr(0, sp)] = trim(line.substr(sp + 1));
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DomainError(path + ": missing model field '" + key + "'");
    return it->second;
  };
  if (need("ggpm_model_version") != "1")
    throw DomainError(path + ": unsupported model version " + need("ggpm_model_version"));

  ModelFile mf;
  mf.model.lik = make_likelihood(need("likelihood"), parse_double(need("dispersion"), path),
                                 static_cast<int>(parse_double(need("n_trials"), path)),
                                 parse_double(need("offset"), path));
  mf.model.kernel = KernelSpec::parse(need("kernel"));
  mf.model.engine = engine_from_string(need("engine"));
  mf.config.likelihood_id = mf.model.lik.id();
  mf.config.kernel_kind = need("kernel");
  mf.config.kernel_jitter = parse_double(need("kernel_jitter"), path);
  mf.config.quad_order = static_cast<int>(parse_double(need("quad_order"), path));
  mf.config.quad_adaptive = need("quad_adaptive") == "1";
  mf.config.quad_tol = parse_double(need("quad_tol"), path);
  mf.log_marginal = parse_double(need("log_marginal"), path);
  const int n = static_cast<int>(parse_double(need("n"), path));
  const int d = static_cast<int>(parse_double(need("d"), path));

  auto parse_vec = [&](const std::string& text, int len) {
    Vec v(len);
    std::istringstream ss(text);
    for (int i = 0; i < len; ++i)
      if (!(ss >> v[i])) throw DomainError(path + ": short vector field");
    return v;
  };
  {
    std::istringstream ss(need("kernel_log_hyperparams"));
    std::vector<double> h;
    double t;
    while (ss >> t) h.push_back(t);
    Vec hv(h.size());
    for (size_t i = 0; i < h.size(); ++i) hv[i] = h[i];
    mf.model.kernel.set_flat_log_hyperparams(hv);
    std::function<void(KernelSpec&)> set_jit = [&](KernelSpec& ks) {
      ks.jitter_rel = mf.config.kernel_jitter;
      for (auto& p : ks.parts) set_jit(p);
    };
    set_jit(mf.model.kernel);
  }

  CommonForm cf;
  cf.site_prec = parse_vec(need("site_prec"), n);
  cf.nu = parse_vec(need("site_nu"), n);
  mf.posterior.common = cf;

  mf.model.x.resize(n, d);
  mf.model.y.resize(n);
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw DomainError(path + ": truncated data block");
    std::istringstream ss(line);
    for (int j = 0; j < d; ++j)
      if (!(ss >> mf.model.x(i, j))) throw DomainError(path + ": bad data row");
    if (!(ss >> mf.model.y[i])) throw DomainError(path + ": bad data row");
  }
  return mf;
}

}  // namespace ggpm
