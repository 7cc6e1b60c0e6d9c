#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pfe/panel.hpp"

namespace pfe {

enum class DgpId { AR1, AR2, PotentialOutcome, CiViolation };

DgpId parse_dgp(const std::string& s);  // ar1|ar2|po|ci (also dgp1..dgp4)
std::string dgp_name(DgpId id);

struct ProcessParams {
  double ar1_rho = 0.8, ar1_sd = 0.2;
  double ar2_rho1 = 0.6, ar2_rho2 = 0.3, ar2_sd = 0.15;
  double po_rho0 = 0.8, po_sd0 = 0.2, po_rho1 = 0.5, po_shift = 0.15, po_sd1 = 0.25;
  double belief_rho = 0.8;
  double shock_ar = 0.5, shock_sd = 0.15;  // stationary sd of tau, nu, eta
  double sigma_eps = 0.05;
  double wage_rho = 0.3, wage_sd = 0.1;
  double depreciation = 0.2;
  double sigma_b = 0.6;
  double inv_forecast = 0.5, inv_capital = 0.1, inv_wage = 0.5;
  double k_init = 1.8;
  // E[omega | k, l] = h(v) - h(v_anchor), h(v) = h1 v + h2 v^2
  double h1 = 0.5, h2 = 0.1;
  double v_anchor = 2.5;
};

struct DgpConfig {
  DgpId dgp = DgpId::AR1;
  int n_firms = 200;
  int t_obs = 50;
  int burn_in = 30;
  double rho_ew = 0.0;
  std::uint64_t seed = 1;
  ParamVector truth;
  ProcessParams proc;
  DgpConfig();
};

struct TruthRecord {
  MatrixXd omega, tau, nu, eta, eps;  // firms x periods
  MatrixXd d, omega0, omega1;         // PotentialOutcome only
};

struct Simulation {
  Panel panel;
  TruthRecord truth;
};

ParamVector default_truth();
Simulation simulate(const DgpConfig& cfg);

// (tau, nu, eta) as an n x 3 matrix aligned with panel rows, matched on (firm, year).
MatrixXd shock_columns(const TruthRecord& t, const Panel& p);
void write_truth(std::ostream& out, const Simulation& sim);
// Reads a truth CSV and returns (tau, nu, eta) aligned with the rows of p.
MatrixXd load_truth_shocks(std::istream& in, const Panel& p);

double h_fn(const ProcessParams& pp, double v);
double h_inverse(const ProcessParams& pp, double target);

}  // namespace pfe
