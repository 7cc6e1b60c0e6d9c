#pragma once

#include <utility>
#include <vector>

#include "pfe/gmm.hpp"
#include "pfe/panel.hpp"

namespace pfe {

struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScaleRatios {
  double gamma_omega = 0, delta_omega = 0, zeta_omega = 0;
};

// gamma = Cov(m,e)/Cov(y,e), delta = Cov(m,e)/Cov(y,m), zeta = Cov(e,w)/Cov(y,e), divisor n.
ScaleRatios scale_ratios(const Residuals& r);

// u1 = delta_w m - gamma_w e on (k, l, basis, w); u2 = zeta_w m - gamma_w w on (k, l, basis, e);
// u3 = gamma_w y - m on (k, l, basis, e, w).
std::vector<MomentSpec> block_a_moments(const CenteredPanel& p);

// (e - delta_w y) against m partialled on (k, l, basis), and u3 against the previous period's
// partialled e. The lag moment separates productivity from the less persistent demand shocks.
std::vector<MomentSpec> block_b_moments(const CenteredPanel& p);

// x residualized on (1, k, l, basis) and shifted one year within firm; zero where no lag exists.
VectorXd lagged_partialled(const CenteredPanel& p, const VectorXd& x);

// Location shift omega -> omega - c_k k - c_l l expressed on the parameters:
// beta_k += c_k, gamma_k += gamma_omega c_k, and likewise for e, w and for l.
ParamVector delta_kl_transform(const ParamVector& th, double c_k, double c_l);

struct AbOptions {
  int max_profile_iter = 200;
  double profile_tol = 1e-8;
  OptimOptions optim;
};

struct BlockAbFit {
  ParamVector theta;  // beta_k = beta_l = 0 normalization
  GmmResult gmm;
  ScaleRatios scale_ratios;
  int profile_iterations = 0;
  bool profile_converged = false;
  bool degenerate = false;
};

ParamVector ab_starting_values(const CenteredPanel& p);
std::vector<std::string> ab_parameter_names(const ParamVector& th);
BlockAbFit fit_block_ab(const CenteredPanel& p, const AbOptions& opt = {});

double ces_index(double k, double l, double alpha, double rho_v);
VectorXd ces_index(const VectorXd& k, const VectorXd& l, double alpha, double rho_v);

using Grid = std::vector<std::pair<double, double>>;  // (rho_v, alpha)
Grid default_grid();

struct GridPoint {
  double rho_v = 0, alpha = 0, j_stat = 0;
  bool ok = false;
};

struct BlockCFit {
  ParamVector theta;  // A+B estimates with beta_k, beta_l, alpha, rho_v, rho filled in
  std::vector<GridPoint> profile_grid;
  double rho_v = 0, alpha = 0;
  VectorXd rho_t_stats;
  bool weak = false;
  GmmResult gmm;  // over beta_k, beta_l, rho1..rho_degree
};

BlockCFit fit_block_c(const CenteredPanel& p, const BlockAbFit& ab, const Grid& grid, int h_degree = 3);

VectorXd recover_productivity(const Panel& p, const ParamVector& th);
double intercept_recovery(const CenteredPanel& p, const ParamVector& th);
double markup(double beta_m, double s_m);

}  // namespace pfe
