#pragma once

#include <array>
#include <string>
#include <vector>

#include "pfe/proposed.hpp"

namespace pfe {

enum class InputId { M = 0, E = 1, W = 2 };
std::string input_name(InputId h);

// Demand loadings of one input from an A+B parameter vector: (k slope, l slope, productivity scale).
struct Loadings {
  double a_k = 0, a_l = 0, a_omega = 0;
};
Loadings input_loadings(const ParamVector& th, InputId h);

struct InputRecovery {
  InputId input = InputId::M;
  double beta_k = 0, beta_l = 0, se_k = 0, se_l = 0;
};

struct PairDiscrepancy {
  InputId first = InputId::M, second = InputId::E;
  double d_k = 0, d_l = 0, se_k = 0, se_l = 0;
};

enum class ExclusionCase { Joint, Marginal };

struct ProxyAssignment {
  InputId for_k = InputId::M;  // input whose demand excludes k (marginal case)
  InputId for_l = InputId::E;  // input whose demand excludes l (marginal case)
  InputId wald_k_first = InputId::M, wald_k_second = InputId::E;
  InputId wald_l_first = InputId::M, wald_l_second = InputId::W;
};

struct ExclusionRecovery {
  std::vector<InputRecovery> per_input;  // joint: m, e, w; marginal: one record holding both proxies
  std::vector<PairDiscrepancy> pairs;    // (m,e), (m,w), (e,w)
  double wald_stat = 0;
  int wald_df = 2;
  double wald_p = 1;
};

// d_k = a_k(second)/a_omega(second) - a_k(first)/a_omega(first), same for l.
double pair_dk(const ParamVector& th, InputId first, InputId second);
double pair_dl(const ParamVector& th, InputId first, InputId second);

ExclusionRecovery exclusion_recovery(const CenteredPanel& p, const BlockAbFit& ab,
                                     ExclusionCase which = ExclusionCase::Joint, const ProxyAssignment& assign = {});

struct DidResult {
  double att_hat = 0, se = 0;
  double pre_trend_max = 0;
  bool used_poly_kl = false;
  int n_treated_firms = 0, n_control_firms = 0;
};

// treat_start > 0: regressor is treated firm x (year >= treat_start), a firm is treated when d = 1 in any
// row. treat_start <= 0: the per-row flag d is the regressor. Two-way firm and year effects are
// swept out; controls_poly_degree > 0 adds a complete polynomial in (k, l).
DidResult did_att(const VectorXd& omega_hat, const Panel& p, int treat_start, int controls_poly_degree);

struct BlockCStrength {
  VectorXd rho, rho_se, t_stats;
  bool weak = false;
  std::vector<GridPoint> profile;
};
BlockCStrength blockc_strength(const BlockCFit& fit);

}  // namespace pfe
