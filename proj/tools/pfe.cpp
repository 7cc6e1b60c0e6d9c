#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "pfe/benchmarks.hpp"
#include "pfe/diagnostics.hpp"
#include "pfe/dgp.hpp"
#include "pfe/mc.hpp"
#include "pfe/proposed.hpp"

using namespace pfe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  return f;
}

Grid read_grid(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open grid file '" + path + "'");
  Grid g;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line)
      if (c == ',' || c == '\t' || c == ';') c = ' ';
    std::istringstream ls(line);
    double r, a;
    if (!(ls >> r >> a)) continue;  // header or junk
    g.emplace_back(r, a);
  }
  if (g.empty()) throw std::runtime_error("grid file has no (rho_v, alpha) rows");
  return g;
}

json named(const ParamVector& th) {
  json o = json::object();
  const auto names = th.flat_names();
  const VectorXd f = th.flat();
  for (size_t i = 0; i < names.size(); ++i) o[names[i]] = f[i];
  return o;
}

ParamVector from_named(const json& o) {
  ParamVector th;
  int nr = 0, nh = 0;
  for (const auto& [k, v] : o.items()) {
    if (k.rfind("rho", 0) == 0 && k != "rho_v") ++nr;
    if (k.rfind("h_m", 0) == 0) ++nh;
  }
  th.rho = VectorXd::Zero(nr);
  th.h_m = th.h_e = th.h_w = VectorXd::Zero(nh);
  VectorXd f = th.flat();
  const auto names = th.flat_names();
  for (size_t i = 0; i < names.size(); ++i) f[i] = o.at(names[i]).get<double>();
  th.set_flat(f);
  return th;
}

json gmm_json(const GmmResult& g) {
  json o = json::object();
  o["free"] = g.free_names;
  json se = json::object();
  for (const auto& n : g.free_names) se[n] = g.se(n);
  o["se"] = se;
  json V = json::array();
  for (Eigen::Index i = 0; i < g.vcov.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < g.vcov.cols(); ++j) row.push_back(g.vcov(i, j));
    V.push_back(row);
  }
  o["vcov"] = V;
  o["j_stat"] = g.j_stat;
  o["df"] = g.df;
  o["converged"] = g.converged;
  o["sigma_ridged"] = g.sigma_ridged;
  o["jacobian_rank_deficient"] = g.jacobian_rank_deficient;
  return o;
}

GmmResult gmm_from_json(const json& o, const ParamVector& th) {
  GmmResult g;
  g.theta_hat = th;
  g.free_names = o.at("free").get<std::vector<std::string>>();
  for (const auto& n : g.free_names) g.free_index.push_back(th.index_of(n));
  const int k = static_cast<int>(g.free_names.size());
  g.vcov.resize(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) g.vcov(i, j) = o.at("vcov").at(i).at(j).get<double>();
  g.j_stat = o.value("j_stat", 0.0);
  g.df = o.value("df", 0);
  g.converged = o.value("converged", false);
  return g;
}

void write_omega(const std::string& path, const Panel& p, const VectorXd& omega) {
  auto f = open_out(path);
  f << "firm,year,omega_hat\n" << std::setprecision(17);
  for (int i = 0; i < p.n_obs(); ++i) f << p.firm[i] << ',' << p.year[i] << ',' << omega[i] << '\n';
}

int cmd_simulate(const std::string& dgp, int n, int t, std::uint64_t seed, double rho_ew, const std::string& out,
                 const std::string& truth_out) {
  DgpConfig cfg;
  cfg.dgp = parse_dgp(dgp);
  cfg.n_firms = n;
  cfg.t_obs = t;
  cfg.seed = seed;
  cfg.rho_ew = rho_ew;
  const Simulation sim = simulate(cfg);
  auto f = open_out(out);
  write_panel(f, sim.panel);
  if (!truth_out.empty()) {
    auto g = open_out(truth_out);
    write_truth(g, sim);
  }
  std::cerr << "wrote " << sim.panel.n_obs() << " rows for " << sim.panel.n_firms() << " firms to " << out << '\n';
  return 0;
}

struct EstimateArgs {
  std::string in, method = "proposed", blocks = "ab", grid_file, out = "report.json", truth, omega_out;
  int h_degree = 3, acf_degree = 3;
};

int cmd_estimate(const EstimateArgs& a) {
  const Panel p = load_panel_file(a.in);
  json rep = json::object();
  rep["panel"] = a.in;
  rep["method"] = a.method;
  rep["n_firms"] = p.n_firms();
  rep["n_obs"] = p.n_obs();
  json diag = json::object();
  ParamVector est;

  if (a.method == "proposed") {
    const CenteredPanel c = demean(p);
    const BlockAbFit ab = fit_block_ab(c);
    est = ab.theta;
    rep["blocks"] = a.blocks;
    rep["block_ab"] = gmm_json(ab.gmm);
    rep["block_ab"]["theta"] = named(ab.theta);
    diag["scale_ratios"] = {{"gamma_omega", ab.scale_ratios.gamma_omega},
                            {"delta_omega", ab.scale_ratios.delta_omega},
                            {"zeta_omega", ab.scale_ratios.zeta_omega}};
    diag["profile_iterations"] = ab.profile_iterations;
    diag["profile_converged"] = ab.profile_converged;
    diag["degenerate"] = ab.degenerate;
    rep["j_stat"] = ab.gmm.j_stat;
    rep["df"] = ab.gmm.df;
    rep["converged"] = ab.gmm.converged;
    json se = rep["block_ab"]["se"];
    if (a.blocks == "abc") {
      const Grid grid = a.grid_file.empty() ? default_grid() : read_grid(a.grid_file);
      const BlockCFit bc = fit_block_c(c, ab, grid, a.h_degree);
      est = bc.theta;
      rep["block_c"] = gmm_json(bc.gmm);
      const BlockCStrength s = blockc_strength(bc);
      json prof = json::array();
      for (const auto& g : bc.profile_grid) prof.push_back({g.rho_v, g.alpha, g.j_stat, g.ok});
      diag["block_c"] = {{"rho_v", bc.rho_v},
                         {"alpha", bc.alpha},
                         {"rho_t_stats", std::vector<double>(s.t_stats.data(), s.t_stats.data() + s.t_stats.size())},
                         {"weak", s.weak},
                         {"profile", prof}};
      for (const auto& [k, v] : rep["block_c"]["se"].items()) se[k] = v;
    } else if (a.blocks != "ab") {
      throw std::invalid_argument("--blocks must be ab or abc");
    }
    rep["se"] = se;
  } else {
    BenchFit f;
    if (a.method == "acf") {
      f = fit_acf(p, a.acf_degree);
    } else if (a.method == "acf-mod") {
      if (a.truth.empty()) throw std::invalid_argument("acf-mod needs --truth with the simulated shocks");
      std::ifstream tf(a.truth);
      if (!tf) throw std::runtime_error("cannot open '" + a.truth + "'");
      f = fit_acf_mod(p, load_truth_shocks(tf, p), a.acf_degree);
    } else if (a.method == "gnr") {
      f = fit_gnr(p);
    } else {
      throw std::invalid_argument("unknown method '" + a.method + "'");
    }
    est.beta_k = f.beta_k, est.beta_l = f.beta_l, est.beta_m = f.beta_m, est.beta_e = f.beta_e, est.beta_w = f.beta_w;
    rep["markov_stage"] = gmm_json(f.gmm);
    rep["se"] = rep["markov_stage"]["se"];
    rep["j_stat"] = f.gmm.j_stat;
    rep["df"] = f.gmm.df;
    rep["converged"] = f.converged;
    diag["first_stage_r2"] = f.first_stage_r2;
  }
  json theta = json::object();
  for (const char* n : {"beta_k", "beta_l", "beta_m", "beta_e", "beta_w"}) theta[n] = est.flat()[est.index_of(n)];
  if (a.method == "proposed") {
    for (const char* n : {"gamma_omega", "delta_omega", "zeta_omega", "beta0"}) theta[n] = est.flat()[est.index_of(n)];
    if (a.blocks == "abc") {
      theta["alpha"] = est.alpha;
      theta["rho_v"] = est.rho_v;
      for (Eigen::Index i = 0; i < est.rho.size(); ++i) theta["rho" + std::to_string(i + 1)] = est.rho[i];
    }
  }
  rep["theta"] = theta;
  rep["diagnostics"] = diag;

  const std::string omega_path =
      a.omega_out.empty() ? (fs::path(a.out).replace_extension("").string() + "_omega.csv") : a.omega_out;
  VectorXd omega = recover_productivity(p, est);
  omega.array() -= est.beta0;
  write_omega(omega_path, p, omega);
  rep["omega_csv"] = omega_path;

  auto f = open_out(a.out);
  f << std::setprecision(17) << rep.dump(2) << '\n';
  std::cerr << a.method << ": beta_m=" << est.beta_m << " beta_e=" << est.beta_e << " beta_w=" << est.beta_w
            << " J=" << rep["j_stat"].get<double>() << '\n';
  return 0;
}

int cmd_diagnose(const std::string& in, const std::string& panel_path, const std::string& out, int treat_start,
                 int did_degree, const std::string& which) {
  const json rep = json::parse(read_file(in));
  const std::string path = panel_path.empty() ? rep.at("panel").get<std::string>() : panel_path;
  const Panel p = load_panel_file(path);
  json d = json::object();
  d["report"] = in;
  if (rep.at("method") == "proposed") {
    const CenteredPanel c = demean(p);
    BlockAbFit ab;
    ab.theta = from_named(rep.at("block_ab").at("theta"));
    ab.gmm = gmm_from_json(rep.at("block_ab"), ab.theta);
    const ExclusionRecovery ex =
        exclusion_recovery(c, ab, which == "marginal" ? ExclusionCase::Marginal : ExclusionCase::Joint);
    json per = json::array();
    for (const auto& r : ex.per_input)
      per.push_back({{"input", input_name(r.input)},
                     {"beta_k", r.beta_k},
                     {"beta_l", r.beta_l},
                     {"se_k", r.se_k},
                     {"se_l", r.se_l}});
    json pairs = json::array();
    for (const auto& q : ex.pairs)
      pairs.push_back({{"pair", input_name(q.first) + "," + input_name(q.second)},
                       {"d_k", q.d_k},
                       {"se_k", q.se_k},
                       {"d_l", q.d_l},
                       {"se_l", q.se_l}});
    d["exclusion"] = {{"case", which},
                      {"per_input", per},
                      {"pairs", pairs},
                      {"wald_stat", ex.wald_stat},
                      {"wald_df", ex.wald_df},
                      {"wald_p", ex.wald_p}};
    if (rep.contains("diagnostics") && rep["diagnostics"].contains("block_c")) {
      const json& bc = rep["diagnostics"]["block_c"];
      d["block_c"] = {{"rho_t_stats", bc.at("rho_t_stats")}, {"weak", bc.at("weak")}};
    }
  }
  if (p.d) {
    std::ifstream of(rep.at("omega_csv").get<std::string>());
    if (!of) throw std::runtime_error("cannot open the productivity file named in the report");
    std::string line;
    std::getline(of, line);
    std::map<std::pair<int, int>, double> w;
    while (std::getline(of, line)) {
      std::istringstream ls(line);
      std::string a, b, v;
      std::getline(ls, a, ',');
      std::getline(ls, b, ',');
      std::getline(ls, v, ',');
      w[{std::stoi(a), std::stoi(b)}] = std::stod(v);
    }
    VectorXd omega(p.n_obs());
    for (int i = 0; i < p.n_obs(); ++i) omega[i] = w.at({p.firm[i], p.year[i]});
    const bool ab_only = rep.at("method") == "proposed" && rep.value("blocks", "ab") == "ab";
    const int deg = did_degree >= 0 ? did_degree : (ab_only ? 3 : 0);
    const DidResult r = did_att(omega, p, treat_start, deg);
    d["did"] = {{"att_hat", r.att_hat},
                {"se", r.se},
                {"pre_trend_max", r.pre_trend_max},
                {"used_poly_kl", r.used_poly_kl},
                {"n_treated_firms", r.n_treated_firms},
                {"n_control_firms", r.n_control_firms}};
  }
  auto f = open_out(out);
  f << std::setprecision(17) << d.dump(2) << '\n';
  return 0;
}

int cmd_mc(const std::string& config, const std::string& out_dir, int jobs) {
  const McConfig cfg = mc_config_from_json(read_file(config));
  const McTable t = run_mc(cfg, jobs);
  fs::create_directories(out_dir);
  for (const auto& [fmt, ext] : {std::pair{"csv", "csv"}, {"json", "json"}, {"markdown", "md"}}) {
    std::ofstream f(fs::path(out_dir) / (std::string("mc_table.") + ext));
    emit_table(t, fmt, f);
  }
  std::ofstream r(fs::path(out_dir) / "replications.csv");
  emit_records(t, r);
  emit_table(t, "markdown", std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Production function estimation with input-specific demand shocks"};
  app.require_subcommand(1);

  std::string dgp = "ar1", sim_out = "panel.csv", truth_out;
  int n = 200, t = 50;
  std::uint64_t seed = 1;
  double rho_ew = 0;
  auto* sim = app.add_subcommand("simulate", "simulate a panel from one of the data generating processes");
  sim->add_option("--dgp", dgp, "ar1|ar2|po|ci")->check(CLI::IsMember({"ar1", "ar2", "po", "ci"}));
  sim->add_option("--n", n, "firms")->check(CLI::PositiveNumber);
  sim->add_option("--t", t, "observed periods per firm")->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed);
  sim->add_option("--rho-ew", rho_ew, "shock correlation for the ci DGP")->check(CLI::Range(0.0, 0.999999));
  sim->add_option("--out", sim_out);
  sim->add_option("--truth-out", truth_out);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "estimate the production function");
  est->add_option("--in", ea.in)->required();
  est->add_option("--method", ea.method)->check(CLI::IsMember({"proposed", "acf", "acf-mod", "gnr"}));
  est->add_option("--blocks", ea.blocks)->check(CLI::IsMember({"ab", "abc"}));
  est->add_option("--h-degree", ea.h_degree)->check(CLI::Range(1, 6));
  est->add_option("--acf-degree", ea.acf_degree)->check(CLI::Range(1, 4));
  est->add_option("--grid-file", ea.grid_file);
  est->add_option("--truth", ea.truth, "truth CSV from simulate (acf-mod only)");
  est->add_option("--omega-out", ea.omega_out);
  est->add_option("--out", ea.out);

  std::string d_in, d_panel, d_out = "diagnostics.json";
  int treat_start = 0, did_degree = -1;
  auto* dia = app.add_subcommand("diagnose", "exclusion diagnostics and DiD on recovered productivity");
  dia->add_option("--in", d_in)->required();
  dia->add_option("--panel", d_panel);
  dia->add_option("--out", d_out);
  dia->add_option("--treat-start", treat_start, "first treated year; 0 uses the per-row flag");
  dia->add_option("--did-degree", did_degree, "degree of the (k, l) polynomial controls");
  std::string ex_case = "joint";
  dia->add_option("--case", ex_case, "joint: each input excludes (k, l); marginal: m excludes k, e excludes l")
      ->check(CLI::IsMember({"joint", "marginal"}));

  std::string mc_cfg, mc_out = "tables";
  int jobs = 1;
  auto* mc = app.add_subcommand("mc", "Monte Carlo tables");
  mc->add_option("--config", mc_cfg)->required();
  mc->add_option("--out", mc_out);
  mc->add_option("--jobs", jobs);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(dgp, n, t, seed, rho_ew, sim_out, truth_out);
    if (*est) return cmd_estimate(ea);
    if (*dia) return cmd_diagnose(d_in, d_panel, d_out, treat_start, did_degree, ex_case);
    if (*mc) return cmd_mc(mc_cfg, mc_out, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
