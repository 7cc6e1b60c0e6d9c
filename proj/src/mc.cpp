#include "pfe/mc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "pfe/benchmarks.hpp"
#include "pfe/diagnostics.hpp"
#include "pfe/random.hpp"

namespace pfe {

using nlohmann::json;

std::vector<int> McConfig::resolved_n() const {
  if (n_grid) return *n_grid;
  return {part == McPart::Part2 ? 200 : 500};
}

std::vector<int> McConfig::resolved_t() const {
  if (t_grid) return *t_grid;
  return {50};
}

McConfig mc_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  McConfig c;
  static const std::vector<std::string> known = {"dgps",   "methods",         "n_grid",   "t_grid",         "reps",
                                                 "base_seed", "part",         "rho_ew_grid", "truth_overrides", "h_linear",
                                                 "exclusion_test", "h_degree", "acf_degree", "grid", "profile_grid"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("unknown mc config field '" + k + "'");
  if (j.contains("dgps")) c.dgps = j["dgps"].get<std::vector<std::string>>();
  if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
  if (j.contains("n_grid")) c.n_grid = j["n_grid"].get<std::vector<int>>();
  if (j.contains("t_grid")) c.t_grid = j["t_grid"].get<std::vector<int>>();
  if (j.contains("reps")) c.reps = j["reps"].get<int>();
  if (j.contains("base_seed")) c.base_seed = j["base_seed"].get<std::uint64_t>();
  if (j.contains("part")) {
    const std::string p = j["part"].get<std::string>();
    if (p == "part1" || p == "Part1" || p == "1") c.part = McPart::Part1;
    else if (p == "part2" || p == "Part2" || p == "2") c.part = McPart::Part2;
    else throw std::invalid_argument("part must be part1 or part2");
  }
  if (j.contains("rho_ew_grid")) c.rho_ew_grid = j["rho_ew_grid"].get<std::vector<double>>();
  if (j.contains("truth_overrides")) c.truth_overrides = j["truth_overrides"].get<std::map<std::string, double>>();
  if (j.contains("h_linear")) c.h_linear = j["h_linear"].get<bool>();
  if (j.contains("exclusion_test")) c.exclusion_test = j["exclusion_test"].get<bool>();
  if (j.contains("h_degree")) c.h_degree = j["h_degree"].get<int>();
  if (j.contains("acf_degree")) c.acf_degree = j["acf_degree"].get<int>();
  if (j.contains("profile_grid")) c.profile_grid = j["profile_grid"].get<bool>();
  if (j.contains("grid")) {
    Grid g;
    for (const auto& pt : j["grid"]) g.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
    c.grid = g;
  }
  if (c.reps < 1) throw std::invalid_argument("reps must be positive");
  for (const auto& d : c.dgps) parse_dgp(d);
  for (const auto& m : c.methods)
    if (m != "proposed" && m != "acf" && m != "acf-mod" && m != "gnr")
      throw std::invalid_argument("unknown method '" + m + "'");
  return c;
}

std::vector<McCell> mc_cells(const McConfig& cfg) {
  std::vector<McCell> cells;
  for (const auto& d : cfg.dgps) {
    const DgpId id = parse_dgp(d);
    std::vector<double> rhos = id == DgpId::CiViolation ? cfg.rho_ew_grid : std::vector<double>{0.0};
    for (double r : rhos)
      for (int n : cfg.resolved_n())
        for (int t : cfg.resolved_t()) {
          McCell c;
          c.id = id;
          c.rho_ew = r;
          c.n = n;
          c.t = t;
          c.dgp = dgp_name(id);
          if (id == DgpId::CiViolation) {
            std::ostringstream os;
            os << c.dgp << ':' << r;
            c.dgp = os.str();
          }
          cells.push_back(c);
        }
  }
  return cells;
}

DgpConfig cell_dgp_config(const McConfig& cfg, const McCell& cell, int rep) {
  DgpConfig d;
  d.dgp = cell.id;
  d.n_firms = cell.n;
  d.t_obs = cell.t;
  d.rho_ew = cell.rho_ew;
  d.seed = replicate_seed(cfg.base_seed, static_cast<std::uint64_t>(rep));
  VectorXd f = d.truth.flat();
  for (const auto& [name, v] : cfg.truth_overrides) f[d.truth.index_of(name)] = v;
  d.truth.set_flat(f);
  if (cfg.h_linear) d.proc.h2 = 0.0;
  return d;
}

namespace {

void put_betas(RepRecord& r, double bk, double bl, double bm, double be, double bw) {
  r.estimates["beta_k"] = bk;
  r.estimates["beta_l"] = bl;
  r.estimates["beta_m"] = bm;
  r.estimates["beta_e"] = be;
  r.estimates["beta_w"] = bw;
}

bool all_finite(const RepRecord& r) {
  for (const auto& [k, v] : r.estimates)
    if (!std::isfinite(v)) return false;
  return true;
}

RepRecord fit_proposed(const McConfig& cfg, const CenteredPanel& c, const ParamVector& truth) {
  RepRecord r;
  r.method = "proposed";
  const BlockAbFit ab = fit_block_ab(c);
  const ParamVector& th = ab.theta;
  r.estimates["beta_m"] = th.beta_m;
  r.estimates["beta_e"] = th.beta_e;
  r.estimates["beta_w"] = th.beta_w;
  r.estimates["gamma_omega"] = th.gamma_omega;
  r.estimates["delta_omega"] = th.delta_omega;
  r.estimates["zeta_omega"] = th.zeta_omega;
  r.extras["j_stat_ab"] = ab.gmm.j_stat;
  r.extras["degenerate"] = ab.degenerate;
  r.converged = ab.gmm.converged;
  if (cfg.exclusion_test) {
    const ExclusionRecovery ex = exclusion_recovery(c, ab);
    r.extras["wald_stat"] = ex.wald_stat;
    r.extras["wald_p"] = ex.wald_p;
  }
  if (cfg.part == McPart::Part2) {
    const Grid grid = cfg.grid ? *cfg.grid : cfg.profile_grid ? default_grid() : Grid{{truth.rho_v, truth.alpha}};
    const BlockCFit bc = fit_block_c(c, ab, grid, cfg.h_degree);
    r.estimates["beta_k"] = bc.theta.beta_k;
    r.estimates["beta_l"] = bc.theta.beta_l;
    r.extras["rho_v"] = bc.rho_v;
    r.extras["alpha"] = bc.alpha;
    r.extras["weak"] = bc.weak;
    for (Eigen::Index i = 0; i < bc.rho_t_stats.size(); ++i)
      r.extras["rho" + std::to_string(i + 1) + "_t"] = bc.rho_t_stats[i];
  }
  return r;
}

RepRecord fit_bench(const std::string& method, const McConfig& cfg, const Simulation& sim) {
  RepRecord r;
  r.method = method;
  BenchFit f;
  if (method == "acf") f = fit_acf(sim.panel, cfg.acf_degree);
  else if (method == "acf-mod") f = fit_acf_mod(sim.panel, shock_columns(sim.truth, sim.panel), cfg.acf_degree);
  else f = fit_gnr(sim.panel);
  put_betas(r, f.beta_k, f.beta_l, f.beta_m, f.beta_e, f.beta_w);
  r.extras["first_stage_r2"] = f.first_stage_r2;
  r.converged = f.converged;
  return r;
}

}  // namespace

std::vector<RepRecord> run_replication(const McConfig& cfg, const McCell& cell, int cell_index, int rep) {
  std::vector<RepRecord> out;
  Simulation sim;
  std::string sim_error;
  const DgpConfig dc = cell_dgp_config(cfg, cell, rep);
  try {
    sim = simulate(dc);
  } catch (const std::exception& e) {
    sim_error = e.what();
  }
  std::optional<CenteredPanel> centered;
  for (const auto& m : cfg.methods) {
    RepRecord r;
    r.method = m;
    if (sim_error.empty()) {
      try {
        if (m == "proposed") {
          if (!centered) centered = demean(sim.panel);
          r = fit_proposed(cfg, *centered, dc.truth);
        } else {
          r = fit_bench(m, cfg, sim);
        }
        r.converged = r.converged && all_finite(r);
      } catch (const std::exception& e) {
        r.converged = false;
        r.error = e.what();
      }
    } else {
      r.error = sim_error;
    }
    r.cell = cell_index;
    r.rep = rep;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

double pairwise_sum(const double* x, size_t n) {
  if (n <= 8) {
    double s = 0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

}  // namespace

Moments summarize(const std::vector<double>& est, double truth) {
  Moments m;
  const size_t n = est.size();
  if (n == 0) return {NAN, NAN, NAN};
  std::vector<double> dev(n), sq(n);
  for (size_t i = 0; i < n; ++i) dev[i] = est[i] - truth;
  m.bias = pairwise_sum(dev.data(), n) / n;
  for (size_t i = 0; i < n; ++i) sq[i] = dev[i] * dev[i];
  m.rmse = std::sqrt(pairwise_sum(sq.data(), n) / n);
  for (size_t i = 0; i < n; ++i) sq[i] = (dev[i] - m.bias) * (dev[i] - m.bias);
  m.sd = n > 1 ? std::sqrt(pairwise_sum(sq.data(), n) / (n - 1)) : 0.0;
  return m;
}

std::vector<McRow> aggregate(const McConfig& cfg, const std::vector<McCell>& cells, const std::vector<RepRecord>& recs) {
  std::vector<McRow> rows;
  static const std::vector<std::string> order = {"beta_k",      "beta_l",      "beta_m",    "beta_e",
                                                 "beta_w",      "gamma_omega", "delta_omega", "zeta_omega"};
  for (size_t ci = 0; ci < cells.size(); ++ci) {
    const ParamVector truth = cell_dgp_config(cfg, cells[ci], 0).truth;
    const VectorXd tf = truth.flat();
    for (const auto& method : cfg.methods) {
      std::vector<const RepRecord*> mine;
      for (const auto& r : recs)
        if (r.cell == static_cast<int>(ci) && r.method == method) mine.push_back(&r);
      int n_ok = 0;
      for (const auto* r : mine) n_ok += r->converged;
      const int n_fail = static_cast<int>(mine.size()) - n_ok;
      for (const auto& par : order) {
        std::vector<double> est;
        bool present = false;
        for (const auto* r : mine) {
          auto it = r->estimates.find(par);
          if (it == r->estimates.end()) continue;
          present = true;
          if (r->converged) est.push_back(it->second);
        }
        if (!present) continue;
        McRow row;
        row.dgp = cells[ci].dgp;
        row.method = method;
        row.parameter = par;
        row.n = cells[ci].n;
        row.t = cells[ci].t;
        row.truth = tf[truth.index_of(par)];
        const Moments m = summarize(est, row.truth);
        row.bias = m.bias;
        row.sd = m.sd;
        row.rmse = m.rmse;
        row.n_converged = n_ok;
        row.n_failed = n_fail;
        row.flagged = n_fail > 0.2 * static_cast<double>(mine.size());
        rows.push_back(row);
      }
    }
  }
  return rows;
}

McTable run_mc(const McConfig& cfg, int jobs) {
  McTable t;
  t.cells = mc_cells(cfg);
  const int n_tasks = static_cast<int>(t.cells.size()) * cfg.reps;
  std::vector<std::vector<RepRecord>> slots(n_tasks);
  if (jobs <= 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<int> next{0};
  std::mutex log_mu;
  auto worker = [&]() {
    for (int k = next++; k < n_tasks; k = next++) {
      const int ci = k / cfg.reps, rep = k % cfg.reps;
      slots[k] = run_replication(cfg, t.cells[ci], ci, rep);
      for (const auto& r : slots[k])
        if (!r.error.empty()) {
          std::lock_guard<std::mutex> lk(log_mu);
          std::cerr << "cell " << t.cells[ci].dgp << " N=" << t.cells[ci].n << " T=" << t.cells[ci].t << " rep " << rep
                    << ' ' << r.method << ": " << r.error << '\n';
        }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 1; i < std::min(jobs, n_tasks); ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& s : slots)
    for (auto& r : s) t.records.push_back(std::move(r));
  t.rows = aggregate(cfg, t.cells, t.records);
  return t;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

void emit_table(const McTable& t, const std::string& format, std::ostream& out) {
  if (t.rows.empty()) throw std::invalid_argument("emit_table: empty table");
  if (format == "csv") {
    out << "dgp,method,parameter,N,T,bias,sd,rmse,n_converged,n_failed,flagged\n";
    for (const auto& r : t.rows)
      out << r.dgp << ',' << r.method << ',' << r.parameter << ',' << r.n << ',' << r.t << ',' << num(r.bias) << ','
          << num(r.sd) << ',' << num(r.rmse) << ',' << r.n_converged << ',' << r.n_failed << ',' << (r.flagged ? 1 : 0)
          << '\n';
  } else if (format == "json") {
    json arr = json::array();
    for (const auto& r : t.rows) {
      json o = json::object();
      o["dgp"] = r.dgp;
      o["method"] = r.method;
      o["parameter"] = r.parameter;
      o["N"] = r.n;
      o["T"] = r.t;
      o["bias"] = r.bias;
      o["sd"] = r.sd;
      o["rmse"] = r.rmse;
      o["n_converged"] = r.n_converged;
      o["n_failed"] = r.n_failed;
      o["flagged"] = r.flagged;
      arr.push_back(o);
    }
    out << arr.dump(2) << '\n';
  } else if (format == "markdown" || format == "md") {
    out << "| dgp | method | parameter | N | T | bias | sd | rmse | n_converged | n_failed | flagged |\n";
    out << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : t.rows)
      out << "| " << r.dgp << " | " << r.method << " | " << r.parameter << " | " << r.n << " | " << r.t << " | "
          << num(r.bias) << " | " << num(r.sd) << " | " << num(r.rmse) << " | " << r.n_converged << " | " << r.n_failed
          << " | " << (r.flagged ? "yes" : "no") << " |\n";
  } else {
    throw std::invalid_argument("unknown table format '" + format + "'");
  }
}

void emit_records(const McTable& t, std::ostream& out) {
  out << "dgp,N,T,rep,method,converged,key,value\n";
  for (const auto& r : t.records) {
    const McCell& c = t.cells[r.cell];
    auto line = [&](const std::string& k, double v) {
      out << c.dgp << ',' << c.n << ',' << c.t << ',' << r.rep << ',' << r.method << ',' << (r.converged ? 1 : 0) << ','
          << k << ',' << num(v) << '\n';
    };
    for (const auto& [k, v] : r.estimates) line(k, v);
    for (const auto& [k, v] : r.extras) line(k, v);
  }
}

}  // namespace pfe
