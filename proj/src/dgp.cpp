#include "pfe/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pfe/random.hpp"

namespace pfe {

DgpId parse_dgp(const std::string& s) {
  if (s == "ar1" || s == "dgp1" || s == "1") return DgpId::AR1;
  if (s == "ar2" || s == "dgp2" || s == "2") return DgpId::AR2;
  if (s == "po" || s == "dgp3" || s == "3") return DgpId::PotentialOutcome;
  if (s == "ci" || s == "dgp4" || s == "4") return DgpId::CiViolation;
  throw std::invalid_argument("unknown dgp '" + s + "'");
}

std::string dgp_name(DgpId id) {
  switch (id) {
    case DgpId::AR1: return "ar1";
    case DgpId::AR2: return "ar2";
    case DgpId::PotentialOutcome: return "po";
    case DgpId::CiViolation: return "ci";
  }
  return "?";
}

ParamVector default_truth() {
  ParamVector t;
  t.beta0 = 0.1;
  t.beta_k = 0.2, t.beta_l = 0.3, t.beta_m = 0.3, t.beta_e = 0.15, t.beta_w = 0.1;
  t.gamma_k = 0.45, t.gamma_l = 0.65, t.gamma_omega = 2.2;
  t.delta_k = 0.40, t.delta_l = 0.60, t.delta_omega = 2.0;
  t.zeta_k = 0.50, t.zeta_l = 0.70, t.zeta_omega = 1.8;
  t.alpha = 0.4, t.rho_v = 0.3;
  return t;
}

DgpConfig::DgpConfig() : truth(default_truth()) {}

double h_fn(const ProcessParams& pp, double v) { return pp.h1 * v + pp.h2 * v * v; }

double h_inverse(const ProcessParams& pp, double target) {
  if (std::abs(pp.h2) < 1e-14) return target / pp.h1;
  double disc = std::max(pp.h1 * pp.h1 + 4.0 * pp.h2 * target, 0.0);
  return (-pp.h1 + std::sqrt(disc)) / (2.0 * pp.h2);
}

namespace {

// labor such that the CES index of (k, l) equals v
double labor_from_index(double v, double k, double alpha, double rho) {
  if (std::abs(rho) < 1e-8) return (v - alpha * k) / (1.0 - alpha);
  double x = std::exp(rho * v) - alpha * std::exp(rho * k);
  x = std::max(x, 1e-6 * std::exp(rho * v));
  return std::log(x / (1.0 - alpha)) / rho;
}

}  // namespace

Simulation simulate(const DgpConfig& cfg) {
  if (cfg.n_firms < 1 || cfg.t_obs < 1) throw std::invalid_argument("simulate: n_firms and t_obs must be >= 1");
  if (cfg.rho_ew < 0 || cfg.rho_ew >= 1) throw std::invalid_argument("simulate: rho_ew must be in [0, 1)");
  if (cfg.burn_in < 0 || (cfg.dgp == DgpId::AR2 && cfg.burn_in < 2))
    throw std::invalid_argument("simulate: invalid burn_in");
  const ProcessParams& pp = cfg.proc;
  const ParamVector& th = cfg.truth;
  const int N = cfg.n_firms, T = cfg.t_obs, TT = cfg.burn_in + cfg.t_obs;
  const bool po = cfg.dgp == DgpId::PotentialOutcome;
  const double rho_ew = cfg.dgp == DgpId::CiViolation ? cfg.rho_ew : 0.0;
  const double sd_in = pp.shock_sd * std::sqrt(1.0 - pp.shock_ar * pp.shock_ar);
  const double h_anchor = h_fn(pp, pp.v_anchor);

  Simulation sim;
  Panel& p = sim.panel;
  TruthRecord& tr = sim.truth;
  const int n = N * T;
  p.firm.resize(n);
  p.year.resize(n);
  p.y.resize(n), p.k.resize(n), p.l.resize(n), p.m.resize(n), p.e.resize(n), p.w.resize(n);
  p.z.resize(n, 0);
  if (po) p.d = VectorXd(n);
  for (MatrixXd* mtx : {&tr.omega, &tr.tau, &tr.nu, &tr.eta, &tr.eps}) mtx->resize(N, T);
  if (po) {
    tr.d.resize(N, T);
    tr.omega0.resize(N, T);
    tr.omega1.resize(N, T);
  }

  for (int j = 0; j < N; ++j) {
    Rng rng(replicate_seed(cfg.seed ^ 0x5DEECE66DULL, static_cast<std::uint64_t>(j)));
    const double b = rng.normal(0.0, pp.sigma_b);
    double om = 0, om_lag = 0, o0 = 0, o1 = 0;
    bool treated = false;
    double tau = rng.normal(0.0, pp.shock_sd), nu = rng.normal(0.0, pp.shock_sd), eta = rng.normal(0.0, pp.shock_sd);
    double lw = 0;
    double k = pp.k_init + b;
    double l = labor_from_index(h_inverse(pp, h_anchor), k, th.alpha, th.rho_v);
    for (int t = 0; t < TT; ++t) {
      switch (cfg.dgp) {
        case DgpId::AR1:
        case DgpId::CiViolation:
          om = pp.ar1_rho * om + rng.normal(0.0, pp.ar1_sd);
          break;
        case DgpId::AR2: {
          double next = pp.ar2_rho1 * om + pp.ar2_rho2 * om_lag + rng.normal(0.0, pp.ar2_sd);
          om_lag = om;
          om = next;
          break;
        }
        case DgpId::PotentialOutcome: {
          double n0 = pp.po_rho0 * o0 + rng.normal(0.0, pp.po_sd0);
          double n1 = pp.po_rho1 * (treated ? o1 : o0) + pp.po_shift + rng.normal(0.0, pp.po_sd1);
          o0 = n0;
          o1 = n1;
          treated = o0 > 0;
          om = treated ? o1 : o0;
          break;
        }
      }
      tau = pp.shock_ar * tau + rng.normal(0.0, sd_in);
      if (cfg.dgp == DgpId::CiViolation) {
        double c = rng.normal(), en = rng.normal(), eh = rng.normal();
        double own = std::sqrt(1.0 - rho_ew * rho_ew);
        nu = pp.shock_ar * nu + sd_in * (own * en + rho_ew * c);
        eta = pp.shock_ar * eta + sd_in * (own * eh + rho_ew * c);
      } else {
        nu = pp.shock_ar * nu + rng.normal(0.0, sd_in);
        eta = pp.shock_ar * eta + rng.normal(0.0, sd_in);
      }
      lw = pp.wage_rho * lw + rng.normal(0.0, pp.wage_sd);
      const double eps = rng.normal(0.0, pp.sigma_eps);

      const double m = th.gamma_k * k + th.gamma_l * l + th.gamma_omega * om + tau;
      const double e = th.delta_k * k + th.delta_l * l + th.delta_omega * om + nu;
      const double w = th.zeta_k * k + th.zeta_l * l + th.zeta_omega * om + eta;
      const double y = th.beta0 + th.beta_k * k + th.beta_l * l + th.beta_m * m + th.beta_e * e + th.beta_w * w + om + eps;

      if (t >= cfg.burn_in) {
        const int s = t - cfg.burn_in;
        const int i = j * T + s;
        p.firm[i] = j + 1;
        p.year[i] = s + 1;
        p.y[i] = y, p.k[i] = k, p.l[i] = l, p.m[i] = m, p.e[i] = e, p.w[i] = w;
        tr.omega(j, s) = om, tr.tau(j, s) = tau, tr.nu(j, s) = nu, tr.eta(j, s) = eta, tr.eps(j, s) = eps;
        if (po) {
          (*p.d)[i] = treated ? 1.0 : 0.0;
          tr.d(j, s) = treated ? 1.0 : 0.0;
          tr.omega0(j, s) = o0;
          tr.omega1(j, s) = o1;
        }
      }

      // next-period primary inputs under the AR(1) belief
      const double forecast = pp.belief_rho * om;
      const double invest = std::exp(b + pp.inv_forecast * forecast + pp.inv_capital * k + pp.inv_wage * lw);
      k = std::log((1.0 - pp.depreciation) * std::exp(k) + invest);
      const double v = h_inverse(pp, forecast + h_anchor);
      l = labor_from_index(v, k, th.alpha, th.rho_v);
    }
  }
  return sim;
}

MatrixXd shock_columns(const TruthRecord& t, const Panel& p) {
  MatrixXd out(p.n_obs(), 3);
  for (int i = 0; i < p.n_obs(); ++i) {
    const long j = p.firm[i] - 1, s = p.year[i] - 1;
    if (j < 0 || s < 0 || j >= t.tau.rows() || s >= t.tau.cols())
      throw DataError("panel row outside the simulated firm-year range");
    out(i, 0) = t.tau(j, s);
    out(i, 1) = t.nu(j, s);
    out(i, 2) = t.eta(j, s);
  }
  return out;
}

void write_truth(std::ostream& out, const Simulation& sim) {
  const TruthRecord& t = sim.truth;
  const bool po = t.d.size() > 0;
  out << "firm,year,omega,tau,nu,eta,eps";
  if (po) out << ",d,omega0,omega1";
  out << '\n' << std::setprecision(17);
  const Panel& p = sim.panel;
  for (int i = 0; i < p.n_obs(); ++i) {
    const long j = p.firm[i] - 1, s = p.year[i] - 1;
    out << p.firm[i] << ',' << p.year[i] << ',' << t.omega(j, s) << ',' << t.tau(j, s) << ',' << t.nu(j, s) << ','
        << t.eta(j, s) << ',' << t.eps(j, s);
    if (po) out << ',' << t.d(j, s) << ',' << t.omega0(j, s) << ',' << t.omega1(j, s);
    out << '\n';
  }
}

MatrixXd load_truth_shocks(std::istream& in, const Panel& p) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("truth file is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) header.push_back(f);
  }
  auto col = [&](const std::string& name) {
    for (size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    throw DataError("truth file lacks column '" + name + "'");
  };
  const int cf = col("firm"), cy = col("year"), ct = col("tau"), cn = col("nu"), ce = col("eta");
  std::map<std::pair<long, long>, Eigen::Vector3d> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (f.size() < header.size()) throw DataError("short row in truth file");
    rows[{std::stol(f[cf]), std::stol(f[cy])}] = {std::stod(f[ct]), std::stod(f[cn]), std::stod(f[ce])};
  }
  MatrixXd out(p.n_obs(), 3);
  for (int i = 0; i < p.n_obs(); ++i) {
    auto it = rows.find({p.firm[i], p.year[i]});
    if (it == rows.end()) throw DataError("truth file has no row for a panel firm-year");
    out.row(i) = it->second.transpose();
  }
  return out;
}

}  // namespace pfe
