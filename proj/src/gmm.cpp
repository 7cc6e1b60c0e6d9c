#include "pfe/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pfe/linalg.hpp"

namespace pfe {

MomentSystem::MomentSystem(std::vector<MomentSpec> specs, const CenteredPanel& p)
    : specs_(std::move(specs)), panel_(&p) {
  for (const auto& s : specs_) {
    if (s.instrument_fn) {
      MatrixXd Z = s.instrument_fn(p);
      if (Z.rows() != p.n_obs()) throw std::invalid_argument("instrument rows do not match panel for " + s.name);
      instruments_.push_back(std::move(Z));
      sizes_.push_back(static_cast<int>(instruments_.back().cols()));
    } else {
      instruments_.emplace_back();
      sizes_.push_back(1);
    }
    n_moments_ += sizes_.back();
  }
  for (const auto& g : p.groups)
    if (g.len <= 0) throw std::invalid_argument("empty firm group");
}

MatrixXd MomentSystem::per_firm(const ParamVector& th) const {
  const auto& groups = panel_->groups;
  MatrixXd out(static_cast<Eigen::Index>(groups.size()), n_moments_);
  int col = 0;
  for (size_t s = 0; s < specs_.size(); ++s) {
    VectorXd u = specs_[s].residual_fn(*panel_, th);
    const MatrixXd& Z = instruments_[s];
    const int q = sizes_[s];
    for (size_t g = 0; g < groups.size(); ++g) {
      const auto [st, len] = groups[g];
      if (Z.size() == 0) {
        out(g, col) = u.segment(st, len).sum() / len;
      } else {
        out.block(g, col, 1, q) = (u.segment(st, len).transpose() * Z.middleRows(st, len)) / len;
      }
    }
    col += q;
  }
  return out;
}

VectorXd MomentSystem::g_n(const ParamVector& th) const { return per_firm(th).colwise().mean().transpose(); }

FreeParams::FreeParams(const ParamVector& th, const std::vector<bool>& mask) : base(th) {
  if (static_cast<int>(mask.size()) != th.flat_size()) throw std::invalid_argument("free mask size mismatch");
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[i]) index.push_back(i);
}

FreeParams::FreeParams(const ParamVector& th, const std::vector<std::string>& names) : base(th) {
  for (const auto& n : names) index.push_back(th.index_of(n));
}

VectorXd FreeParams::get(const ParamVector& th) const {
  VectorXd f = th.flat(), x(size());
  for (int i = 0; i < size(); ++i) x[i] = f[index[i]];
  return x;
}

ParamVector FreeParams::with(const VectorXd& x) const {
  VectorXd f = base.flat();
  for (int i = 0; i < size(); ++i) f[index[i]] = x[i];
  ParamVector th = base;
  th.set_flat(f);
  return th;
}

double GmmResult::se(const std::string& name) const {
  for (size_t i = 0; i < free_names.size(); ++i)
    if (free_names[i] == name) return std::sqrt(std::max(vcov(i, i), 0.0));
  throw std::invalid_argument("parameter '" + name + "' was not estimated");
}

double GmmResult::cov(const std::string& a, const std::string& b) const {
  int ia = -1, ib = -1;
  for (size_t i = 0; i < free_names.size(); ++i) {
    if (free_names[i] == a) ia = static_cast<int>(i);
    if (free_names[i] == b) ib = static_cast<int>(i);
  }
  if (ia < 0 || ib < 0) throw std::invalid_argument("parameter not estimated");
  return vcov(ia, ib);
}

MatrixXd first_step_weight(const MomentSystem& sys, const ParamVector& th) {
  MatrixXd G = sys.per_firm(th);
  VectorXd mu = G.colwise().mean().transpose();
  MatrixXd W = MatrixXd::Zero(G.cols(), G.cols());
  for (Eigen::Index j = 0; j < G.cols(); ++j) {
    double v = (G.col(j).array() - mu[j]).square().mean();
    W(j, j) = v > 1e-300 ? 1.0 / v : 1.0;
  }
  return W;
}

MatrixXd long_run_covariance(const MomentSystem& sys, const ParamVector& th) {
  MatrixXd G = sys.per_firm(th);
  return G.transpose() * G / static_cast<double>(G.rows());
}

namespace {

MatrixXd upper_factor(const MatrixXd& W) {
  // W = U' U, so |U g|^2 = g' W g
  Eigen::LLT<MatrixXd> llt(W);
  if (llt.info() == Eigen::Success) return llt.matrixU();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(W);
  VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

MinimizeResult minimize_objective(const MomentSystem& sys, const FreeParams& fp, const MatrixXd& W,
                                  const OptimOptions& opt) {
  MatrixXd U = upper_factor(W);
  VecFn r = [&](const VectorXd& x) -> VectorXd { return U * sys.g_n(fp.with(x)); };
  OptimResult lm = levenberg_marquardt(r, fp.get(fp.base), opt);
  MinimizeResult out;
  VectorXd x = lm.x;
  double f = lm.f;
  bool conv = lm.converged;
  if (f > 1e-24) {
    ScalarFn obj = [&](const VectorXd& xx) {
      double v = r(xx).squaredNorm();
      return std::isfinite(v) ? v : 1e300;
    };
    OptimResult nm = nelder_mead(obj, x, 1e-4, opt);
    if (nm.f < f) {
      x = nm.x;
      f = nm.f;
    }
    conv = conv || nm.converged;
  }
  out.theta = fp.with(x);
  out.objective = f;
  out.converged = conv && std::isfinite(f);
  return out;
}

MatrixXd clustered_sandwich(const MomentSystem& sys, const FreeParams& fp, const ParamVector& theta_hat,
                            const MatrixXd& W, MatrixXd* jacobian_out, MatrixXd* sigma_out) {
  FreeParams at(theta_hat, std::vector<std::string>{});
  at.index = fp.index;
  VecFn gfn = [&](const VectorXd& x) -> VectorXd { return sys.g_n(at.with(x)); };
  MatrixXd G = numerical_jacobian(gfn, at.get(theta_hat));
  if (!G.allFinite()) throw std::runtime_error("clustered_sandwich: non-finite Jacobian");
  MatrixXd S = long_run_covariance(sys, theta_hat);
  MatrixXd bread = (G.transpose() * W * G).completeOrthogonalDecomposition().pseudoInverse();
  MatrixXd meat = G.transpose() * W * S * W * G;
  MatrixXd V = bread * meat * bread / static_cast<double>(sys.n_firms());
  V = 0.5 * (V + V.transpose());
  if (jacobian_out) *jacobian_out = G;
  if (sigma_out) *sigma_out = S;
  return V;
}

GmmResult two_step_estimate(const MomentSystem& sys, const ParamVector& theta0, const std::vector<bool>& free_mask,
                            const OptimOptions& opt) {
  FreeParams fp(theta0, free_mask);
  if (sys.n_moments() < fp.size()) throw std::invalid_argument("two_step_estimate: fewer moments than parameters");
  GmmResult res;
  res.n_firms = sys.n_firms();
  res.n_obs = sys.n_obs();
  res.df = sys.n_moments() - fp.size();
  res.free_index = fp.index;
  auto names = theta0.flat_names();
  for (int i : fp.index) res.free_names.push_back(names[i]);

  MatrixXd W1 = first_step_weight(sys, theta0);
  MinimizeResult s1 = minimize_objective(sys, fp, W1, opt);

  MatrixXd S1 = long_run_covariance(sys, s1.theta);
  bool ridged = false;
  MatrixXd W2 = sym_inverse(S1, &ridged);
  FreeParams fp2(s1.theta, free_mask);
  MinimizeResult s2 = minimize_objective(sys, fp2, W2, opt);
  if (!std::isfinite(s2.objective)) s2 = s1;

  res.theta_hat = s2.theta;
  res.converged = s1.converged && s2.converged;
  res.sigma_ridged = ridged;
  res.weight = W2;
  res.g = sys.g_n(res.theta_hat);
  res.objective_value = res.g.dot(W2 * res.g);
  res.j_stat = sys.n_firms() * res.objective_value;
  res.vcov = clustered_sandwich(sys, fp2, res.theta_hat, W2, &res.jacobian, &res.sigma);
  Eigen::JacobiSVD<MatrixXd> svd(res.jacobian);
  const VectorXd sv = svd.singularValues();
  res.jacobian_rank_deficient = sv.size() == 0 || sv[sv.size() - 1] < 1e-8 * sv[0];
  return res;
}

DeltaResult delta_method(const std::function<VectorXd(const ParamVector&)>& fn, const GmmResult& res) {
  FreeParams fp(res.theta_hat, std::vector<std::string>{});
  fp.index = res.free_index;
  VecFn f = [&](const VectorXd& x) { return fn(fp.with(x)); };
  VectorXd x = fp.get(res.theta_hat);
  DeltaResult out;
  out.values = fn(res.theta_hat);
  MatrixXd J = numerical_jacobian(f, x);
  if (!J.allFinite()) throw std::runtime_error("delta_method: non-finite gradient");
  out.vcov = J * res.vcov * J.transpose();
  out.ses = out.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

LinearGmmResult linear_two_step(const MatrixXd& X, const VectorXd& y, const MatrixXd& Z,
                                const std::vector<FirmRange>& groups, const MatrixXd* firm_adjust) {
  const int N = static_cast<int>(groups.size());
  if (N == 0) throw std::invalid_argument("linear_two_step: no firms");
  if (Z.cols() < X.cols()) throw std::invalid_argument("linear_two_step: fewer instruments than regressors");
  VectorXd wt(X.rows());
  for (const auto& g : groups) wt.segment(g.start, g.len).setConstant(1.0 / (static_cast<double>(N) * g.len));
  const MatrixXd ZwX = Z.transpose() * wt.asDiagonal() * X;
  const VectorXd Zwy = Z.transpose() * wt.asDiagonal() * y;
  auto solve = [&](const MatrixXd& W) -> VectorXd {
    MatrixXd A = ZwX.transpose() * W * ZwX;
    return A.ldlt().solve(ZwX.transpose() * W * Zwy);
  };
  auto firm_moments = [&](const VectorXd& b) {
    VectorXd u = y - X * b;
    MatrixXd G(N, Z.cols());
    for (int j = 0; j < N; ++j) {
      const auto [st, len] = groups[j];
      G.row(j) = u.segment(st, len).transpose() * Z.middleRows(st, len) / len;
    }
    return G;
  };
  bool r1 = false;
  const MatrixXd W1 = sym_inverse(Z.transpose() * wt.asDiagonal() * Z, &r1);
  VectorXd b1 = solve(W1);
  MatrixXd G1 = firm_moments(b1);
  LinearGmmResult out;
  const MatrixXd W2 = sym_inverse(G1.transpose() * G1 / N, &out.sigma_ridged);
  out.coef = solve(W2);
  out.weight = W2;
  out.g = Zwy - ZwX * out.coef;
  out.j_stat = N * out.g.dot(W2 * out.g);
  out.df = static_cast<int>(Z.cols() - X.cols());
  MatrixXd Gf = firm_moments(out.coef);
  if (firm_adjust) Gf += *firm_adjust;
  const MatrixXd S = Gf.transpose() * Gf / N;
  const MatrixXd D = -ZwX;
  const MatrixXd bread = (D.transpose() * W2 * D).inverse();
  out.vcov = bread * D.transpose() * W2 * S * W2 * D * bread / N;
  out.vcov = 0.5 * (out.vcov + out.vcov.transpose());
  return out;
}

}  // namespace pfe
