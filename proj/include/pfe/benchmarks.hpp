#pragma once

#include <string>

#include "pfe/gmm.hpp"
#include "pfe/panel.hpp"

namespace pfe {

enum class BenchMethod { ACF, ACF_MOD, GNR };

std::string bench_name(BenchMethod m);

struct BenchFit {
  BenchMethod method = BenchMethod::ACF;
  double beta_k = 0, beta_l = 0, beta_m = 0, beta_e = 0, beta_w = 0;
  double first_stage_r2 = 0;
  bool converged = false;
  GmmResult gmm;
};

// Rows i with a same-firm observation in the previous year, paired with that previous row.
struct LagPairs {
  std::vector<int> cur, prev;
};
LagPairs lag_pairs(const Panel& p);

BenchFit fit_acf(const Panel& p, int first_stage_degree = 3, const OptimOptions& opt = {});

// shocks: n x 3 columns (tau, nu, eta) aligned with the panel rows.
BenchFit fit_acf_mod(const Panel& p, const MatrixXd& shocks, int first_stage_degree = 3,
                     const OptimOptions& opt = {});

BenchFit fit_gnr(const Panel& p, const OptimOptions& opt = {});

}  // namespace pfe
