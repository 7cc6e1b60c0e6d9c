#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pfe/optimize.hpp"
#include "pfe/panel.hpp"

namespace pfe {

enum class BlockTag { A, B, C, BENCH };

struct MomentSpec {
  std::string name;
  std::function<VectorXd(const CenteredPanel&, const ParamVector&)> residual_fn;
  // Instruments without a constant column. Left empty for a scalar moment (instrument 1).
  std::function<MatrixXd(const CenteredPanel&)> instrument_fn;
  BlockTag tag = BlockTag::A;
};

class MomentSystem {
 public:
  MomentSystem(std::vector<MomentSpec> specs, const CenteredPanel& p);

  int n_moments() const { return n_moments_; }
  int n_firms() const { return panel_->n_firms(); }
  int n_obs() const { return panel_->n_obs(); }
  const CenteredPanel& panel() const { return *panel_; }
  const std::vector<MomentSpec>& specs() const { return specs_; }
  const std::vector<int>& block_sizes() const { return sizes_; }

  MatrixXd per_firm(const ParamVector& th) const;  // N x M time-averaged moments
  VectorXd g_n(const ParamVector& th) const;

 private:
  std::vector<MomentSpec> specs_;
  const CenteredPanel* panel_;
  std::vector<MatrixXd> instruments_;
  std::vector<int> sizes_;
  int n_moments_ = 0;
};

// Maps between the free sub-vector and a full ParamVector.
struct FreeParams {
  ParamVector base;
  std::vector<int> index;
  FreeParams(const ParamVector& th, const std::vector<bool>& mask);
  FreeParams(const ParamVector& th, const std::vector<std::string>& names);
  VectorXd get(const ParamVector& th) const;
  ParamVector with(const VectorXd& x) const;
  int size() const { return static_cast<int>(index.size()); }
};

struct GmmResult {
  ParamVector theta_hat;
  std::vector<int> free_index;  // flat indices of the estimated parameters
  std::vector<std::string> free_names;
  MatrixXd vcov;                // over free parameters, already divided by N
  double j_stat = 0;
  int df = 0;
  bool converged = false;
  bool sigma_ridged = false;
  bool jacobian_rank_deficient = false;
  int n_firms = 0, n_obs = 0;
  double objective_value = 0;
  VectorXd g;
  MatrixXd jacobian, weight, sigma;

  double se(const std::string& name) const;
  double cov(const std::string& a, const std::string& b) const;
};

struct MinimizeResult {
  ParamVector theta;
  double objective = 0;
  bool converged = false;
};

MatrixXd first_step_weight(const MomentSystem& sys, const ParamVector& th);
MatrixXd long_run_covariance(const MomentSystem& sys, const ParamVector& th);

// Minimizes g' W g over the free parameters: Levenberg-Marquardt on chol(W)' g, then a
// simplex polish unless the objective is already at numerical zero.
MinimizeResult minimize_objective(const MomentSystem& sys, const FreeParams& fp, const MatrixXd& W,
                                  const OptimOptions& opt = {});

GmmResult two_step_estimate(const MomentSystem& sys, const ParamVector& theta0, const std::vector<bool>& free_mask,
                            const OptimOptions& opt = {});

// V/N with Sigma from per-firm averaged moments and G the finite-difference Jacobian of g_N.
MatrixXd clustered_sandwich(const MomentSystem& sys, const FreeParams& fp, const ParamVector& theta_hat,
                            const MatrixXd& W, MatrixXd* jacobian_out = nullptr, MatrixXd* sigma_out = nullptr);

struct DeltaResult {
  VectorXd values, ses;
  MatrixXd vcov;
};

DeltaResult delta_method(const std::function<VectorXd(const ParamVector&)>& fn, const GmmResult& res);

struct LinearGmmResult {
  VectorXd coef;
  MatrixXd vcov;  // divided by N
  MatrixXd weight;
  VectorXd g;
  double j_stat = 0;
  int df = 0;
  bool sigma_ridged = false;
};

// Two-step GMM for E[Z'(y - X b)] = 0 with firm-averaged moments. firm_adjust, when given (N x q),
// is added to the per-firm moments when forming the covariance, to carry first-stage influence.
LinearGmmResult linear_two_step(const MatrixXd& X, const VectorXd& y, const MatrixXd& Z,
                                const std::vector<FirmRange>& groups, const MatrixXd* firm_adjust = nullptr);

}  // namespace pfe
