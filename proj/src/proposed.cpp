#include "pfe/proposed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pfe/linalg.hpp"

namespace pfe {

namespace {

double cov0(const VectorXd& a, const VectorXd& b) {
  const double n = static_cast<double>(a.size());
  return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() / n;
}

MatrixXd kl_basis(const CenteredPanel& p, bool with_constant) {
  const Panel& d = p.data;
  const int nb = static_cast<int>(p.basis.cols());
  MatrixXd X(d.n_obs(), 2 + nb + (with_constant ? 1 : 0));
  int c = 0;
  if (with_constant) X.col(c++).setOnes();
  X.col(c++) = d.k;
  X.col(c++) = d.l;
  if (nb) X.middleCols(c, nb) = p.basis;
  return X;
}

MatrixXd with_extra(const MatrixXd& base, std::initializer_list<const VectorXd*> extra) {
  MatrixXd Z(base.rows(), base.cols() + static_cast<Eigen::Index>(extra.size()));
  Z.leftCols(base.cols()) = base;
  int c = static_cast<int>(base.cols());
  for (const VectorXd* v : extra) Z.col(c++) = *v;
  return Z;
}

VectorXd u1(const Residuals& r, const ParamVector& th) {
  return th.delta_omega * r.m_tilde - th.gamma_omega * r.e_tilde;
}
VectorXd u2(const Residuals& r, const ParamVector& th) {
  return th.zeta_omega * r.m_tilde - th.gamma_omega * r.w_tilde;
}
VectorXd u3(const Residuals& r, const ParamVector& th) { return th.gamma_omega * r.y_tilde - r.m_tilde; }

std::vector<bool> mask_for(const ParamVector& th, const std::vector<std::string>& names) {
  std::vector<bool> mask(th.flat_size(), false);
  for (const auto& n : names) mask[th.index_of(n)] = true;
  return mask;
}

}  // namespace

ScaleRatios scale_ratios(const Residuals& r) {
  const double me = cov0(r.m_tilde, r.e_tilde);
  const double ye = cov0(r.y_tilde, r.e_tilde);
  const double ym = cov0(r.y_tilde, r.m_tilde);
  const double ew = cov0(r.e_tilde, r.w_tilde);
  if (std::abs(ye) < 1e-12 || std::abs(ym) < 1e-12)
    throw DegenerateError("scale_ratios: residual covariance with output is numerically zero");
  return {me / ye, me / ym, ew / ye};
}

std::vector<MomentSpec> block_a_moments(const CenteredPanel&) {
  std::vector<MomentSpec> s;
  s.push_back({"u1",
               [](const CenteredPanel& c, const ParamVector& th) { return u1(residuals(c, th, false), th); },
               [](const CenteredPanel& c) { return with_extra(kl_basis(c, false), {&c.data.w}); }, BlockTag::A});
  s.push_back({"u2",
               [](const CenteredPanel& c, const ParamVector& th) { return u2(residuals(c, th, false), th); },
               [](const CenteredPanel& c) { return with_extra(kl_basis(c, false), {&c.data.e}); }, BlockTag::A});
  s.push_back({"u3",
               [](const CenteredPanel& c, const ParamVector& th) { return u3(residuals(c, th, false), th); },
               [](const CenteredPanel& c) { return with_extra(kl_basis(c, false), {&c.data.e, &c.data.w}); },
               BlockTag::A});
  return s;
}

VectorXd lagged_partialled(const CenteredPanel& p, const VectorXd& x) {
  const Panel& d = p.data;
  MatrixXd B = kl_basis(p, true);
  VectorXd r = x - B * ols(B, x);
  VectorXd out = VectorXd::Zero(r.size());
  for (const auto& g : p.groups)
    for (int t = 1; t < g.len; ++t) {
      const int i = g.start + t;
      if (d.year[i] == d.year[i - 1] + 1) out[i] = r[i - 1];
    }
  return out;
}

std::vector<MomentSpec> block_b_moments(const CenteredPanel&) {
  std::vector<MomentSpec> s;
  s.push_back({"cov_me",
               [](const CenteredPanel& c, const ParamVector& th) {
                 Residuals r = residuals(c, th, false);
                 return VectorXd(r.e_tilde - th.delta_omega * r.y_tilde);
               },
               [](const CenteredPanel& c) {
                 MatrixXd B = kl_basis(c, true);
                 MatrixXd out(c.n_obs(), 1);
                 out.col(0) = c.data.m - B * ols(B, c.data.m);
                 return out;
               },
               BlockTag::B});
  s.push_back({"lag_e",
               [](const CenteredPanel& c, const ParamVector& th) { return u3(residuals(c, th, false), th); },
               [](const CenteredPanel& c) {
                 MatrixXd out(c.n_obs(), 1);
                 out.col(0) = lagged_partialled(c, c.data.e);
                 return out;
               },
               BlockTag::B});
  return s;
}

ParamVector delta_kl_transform(const ParamVector& th, double c_k, double c_l) {
  ParamVector t = th;
  t.beta_k += c_k;
  t.beta_l += c_l;
  t.gamma_k += th.gamma_omega * c_k;
  t.gamma_l += th.gamma_omega * c_l;
  t.delta_k += th.delta_omega * c_k;
  t.delta_l += th.delta_omega * c_l;
  t.zeta_k += th.zeta_omega * c_k;
  t.zeta_l += th.zeta_omega * c_l;
  return t;
}

ParamVector ab_starting_values(const CenteredPanel& p) {
  const Panel& d = p.data;
  const int nb = static_cast<int>(p.basis.cols());
  ParamVector th;
  MatrixXd X = kl_basis(p, false);
  VectorXd cm = ols(X, d.m), ce = ols(X, d.e), cw = ols(X, d.w);
  th.gamma_k = cm[0], th.gamma_l = cm[1];
  th.delta_k = ce[0], th.delta_l = ce[1];
  th.zeta_k = cw[0], th.zeta_l = cw[1];
  th.h_m = cm.tail(nb);
  th.h_e = ce.tail(nb);
  th.h_w = cw.tail(nb);
  MatrixXd F(d.n_obs(), 3);
  F << d.m, d.e, d.w;
  VectorXd b = ols(F, d.y);
  th.beta_m = b[0], th.beta_e = b[1], th.beta_w = b[2];
  th.gamma_omega = th.delta_omega = th.zeta_omega = 1.5;
  th.beta_k = th.beta_l = 0;
  return th;
}

namespace {

std::vector<std::string> slope_names(const ParamVector& th) {
  std::vector<std::string> n = {"beta_m", "beta_e", "beta_w", "gamma_k", "gamma_l",
                                "delta_k", "delta_l", "zeta_k", "zeta_l"};
  for (int i = 0; i < th.h_m.size(); ++i) n.push_back("h_m" + std::to_string(i + 1));
  for (int i = 0; i < th.h_e.size(); ++i) n.push_back("h_e" + std::to_string(i + 1));
  for (int i = 0; i < th.h_w.size(); ++i) n.push_back("h_w" + std::to_string(i + 1));
  return n;
}

}  // namespace

std::vector<std::string> ab_parameter_names(const ParamVector& th) {
  auto n = slope_names(th);
  n.insert(n.begin() + 9, {"gamma_omega", "delta_omega", "zeta_omega"});
  return n;
}

BlockAbFit fit_block_ab(const CenteredPanel& p, const AbOptions& opt) {
  BlockAbFit fit;
  ParamVector th = ab_starting_values(p);
  auto specs = block_a_moments(p);
  for (auto& s : block_b_moments(p)) specs.push_back(std::move(s));
  MomentSystem sys(std::move(specs), p);

  const MatrixXd W = first_step_weight(sys, th);
  const auto slopes = slope_names(th);
  // Given the scales every moment is affine in the slopes, so the slopes concentrate out in closed form.
  auto concentrate = [&](const ParamVector& base, VectorXd* g_out) {
    FreeParams fp(base, slopes);
    const int P = fp.size();
    VectorXd x = VectorXd::Zero(P);
    const VectorXd g0 = sys.g_n(fp.with(x));
    MatrixXd D(g0.size(), P);
    for (int i = 0; i < P; ++i) {
      x.setZero();
      x[i] = 1.0;
      D.col(i) = sys.g_n(fp.with(x)) - g0;
    }
    x = (D.transpose() * W * D).completeOrthogonalDecomposition().solve(-D.transpose() * W * g0);
    if (g_out) *g_out = g0 + D * x;
    return fp.with(x);
  };
  const MatrixXd U = Eigen::LLT<MatrixXd>(W).matrixU();
  FreeParams scales(th, std::vector<std::string>{"gamma_omega", "delta_omega", "zeta_omega"});
  VecFn prof = [&](const VectorXd& s) -> VectorXd {
    VectorXd g;
    concentrate(scales.with(s), &g);
    return U * g;
  };
  OptimOptions po = opt.optim;
  po.max_iter = opt.max_profile_iter;
  po.x_tol = opt.profile_tol;
  OptimResult pr = levenberg_marquardt(prof, scales.get(th), po);
  fit.profile_iterations = pr.iterations;
  fit.profile_converged = pr.converged;
  if (pr.x.allFinite()) th = concentrate(scales.with(pr.x), nullptr);

  fit.gmm = two_step_estimate(sys, th, mask_for(th, ab_parameter_names(th)), opt.optim);
  fit.theta = fit.gmm.theta_hat;
  try {
    fit.scale_ratios = scale_ratios(residuals(p, fit.theta));
  } catch (const DegenerateError&) {
    fit.degenerate = true;
  }
  fit.degenerate = fit.degenerate || fit.gmm.sigma_ridged || fit.gmm.jacobian_rank_deficient;
  fit.theta.beta0 = intercept_recovery(p, fit.theta);
  fit.gmm.theta_hat = fit.theta;
  return fit;
}

double ces_index(double k, double l, double alpha, double rho_v) {
  if (std::abs(rho_v) < 1e-8) return alpha * k + (1.0 - alpha) * l;
  const double a = rho_v * k, b = rho_v * l;
  const double M = std::max(a, b);
  const double s = alpha * std::expm1(a - M) + (1.0 - alpha) * std::expm1(b - M);
  return (M + std::log1p(s)) / rho_v;
}

VectorXd ces_index(const VectorXd& k, const VectorXd& l, double alpha, double rho_v) {
  VectorXd v(k.size());
  for (Eigen::Index i = 0; i < k.size(); ++i) v[i] = ces_index(k[i], l[i], alpha, rho_v);
  return v;
}

Grid default_grid() {
  Grid g;
  for (int r = -10; r <= 10; ++r)
    for (int a = 1; a <= 19; ++a) g.emplace_back(r / 10.0, a * 0.05);
  return g;
}

namespace {

struct CPoint {
  LinearGmmResult lin;
  MatrixXd to_struct;  // maps regression coefficients to (beta_k, beta_l, rho)
  bool ok = false;
};

CPoint fit_c_point(const CenteredPanel& p, const VectorXd& yt, const MatrixXd& Z, double rho_v, double alpha,
                   int degree, const MatrixXd* adjust_builder_if, const MatrixXd* gc1) {
  CPoint out;
  const Panel& d = p.data;
  const Eigen::Index n = d.n_obs();
  VectorXd v = ces_index(VectorXd(d.k.array() + p.k_bar), VectorXd(d.l.array() + p.l_bar), alpha, rho_v);
  MatrixXd B(n, 3);
  B << VectorXd::Ones(n), d.k, d.l;
  std::vector<VectorXd> phis;
  std::vector<int> kept;
  std::vector<VectorXd> proj;
  VectorXd vp = VectorXd::Ones(n);
  for (int deg = 1; deg <= degree; ++deg) {
    vp.array() *= v.array();
    VectorXd c = ols(B, vp);
    VectorXd phi = vp - B * c;
    const double scale = (vp.array() - vp.mean()).matrix().norm();
    proj.push_back(c);
    if (phi.norm() > 1e-8 * std::max(scale, 1e-300)) {
      phis.push_back(std::move(phi));
      kept.push_back(deg);
    }
  }
  MatrixXd X(n, 2 + static_cast<Eigen::Index>(phis.size()));
  X.col(0) = d.k;
  X.col(1) = d.l;
  for (size_t j = 0; j < phis.size(); ++j) X.col(2 + j) = phis[j];
  MatrixXd adj;
  if (adjust_builder_if && gc1) {
    // first-stage influence enters only through ytilde, which does not depend on X
    adj = (*adjust_builder_if) * gc1->transpose();
  }
  out.lin = linear_two_step(X, yt, Z, p.groups, adj.size() ? &adj : nullptr);
  if (!out.lin.coef.allFinite()) return out;
  out.to_struct = MatrixXd::Zero(2 + degree, X.cols());
  out.to_struct(0, 0) = 1;
  out.to_struct(1, 1) = 1;
  for (size_t j = 0; j < kept.size(); ++j) {
    const int deg = kept[j];
    out.to_struct(0, 2 + j) = -proj[deg - 1][1];
    out.to_struct(1, 2 + j) = -proj[deg - 1][2];
    out.to_struct(1 + deg, 2 + j) = 1;
  }
  out.ok = true;
  return out;
}

}  // namespace

BlockCFit fit_block_c(const CenteredPanel& p, const BlockAbFit& ab, const Grid& grid, int h_degree) {
  if (grid.empty()) throw std::invalid_argument("fit_block_c: empty grid");
  if (h_degree < 1) throw std::invalid_argument("fit_block_c: h_degree must be positive");
  const Panel& d = p.data;
  const Residuals r = residuals(p, ab.theta);
  const VectorXd& yt = r.y_tilde;
  MatrixXd Z = poly_features({d.k, d.l}, 3, false);
  Z.rowwise() -= Z.colwise().mean();

  // Per-firm influence of the A+B estimates, pushed through d g_C / d(beta_m, beta_e, beta_w).
  MatrixXd infl, gc1;
  {
    auto specs = block_a_moments(p);
    for (auto& s : block_b_moments(p)) specs.push_back(std::move(s));
    MomentSystem sys(std::move(specs), p);
    const MatrixXd g1 = sys.per_firm(ab.theta);
    const MatrixXd& G = ab.gmm.jacobian;
    const MatrixXd& W = ab.gmm.weight;
    if (G.size() && W.size()) {
      const MatrixXd A = (G.transpose() * W * G).completeOrthogonalDecomposition().pseudoInverse() * G.transpose() * W;
      infl = -(g1 * A.transpose());  // N x P1
      const int N = p.n_firms();
      VectorXd wt(d.n_obs());
      for (const auto& g : p.groups) wt.segment(g.start, g.len).setConstant(1.0 / (static_cast<double>(N) * g.len));
      gc1 = MatrixXd::Zero(Z.cols(), infl.cols());
      const std::pair<const char*, const VectorXd*> inputs[] = {{"beta_m", &d.m}, {"beta_e", &d.e}, {"beta_w", &d.w}};
      for (size_t i = 0; i < ab.gmm.free_names.size(); ++i)
        for (const auto& [name, col] : inputs)
          if (ab.gmm.free_names[i] == name) gc1.col(i) = -(Z.transpose() * wt.asDiagonal() * (*col));
    }
  }

  BlockCFit fit;
  Grid sorted_grid = grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());
  double best_j = std::numeric_limits<double>::infinity();
  CPoint best;
  for (const auto& [rv, a] : sorted_grid) {
    GridPoint gp{rv, a, std::numeric_limits<double>::quiet_NaN(), false};
    if (a > 0 && a < 1 && std::isfinite(rv)) {
      CPoint cp = fit_c_point(p, yt, Z, rv, a, h_degree, nullptr, nullptr);
      if (cp.ok && std::isfinite(cp.lin.j_stat)) {
        gp.j_stat = cp.lin.j_stat;
        gp.ok = true;
        if (gp.j_stat < best_j) {
          best_j = gp.j_stat;
          fit.rho_v = rv;
          fit.alpha = a;
        }
      }
    }
    fit.profile_grid.push_back(gp);
  }
  if (!std::isfinite(best_j)) throw std::runtime_error("fit_block_c: no grid point could be fitted");
  best = fit_c_point(p, yt, Z, fit.rho_v, fit.alpha, h_degree, infl.size() ? &infl : nullptr,
                     gc1.size() ? &gc1 : nullptr);

  const VectorXd st = best.to_struct * best.lin.coef;
  const MatrixXd V = best.to_struct * best.lin.vcov * best.to_struct.transpose();
  fit.theta = ab.theta;
  fit.theta.beta_k = st[0];
  fit.theta.beta_l = st[1];
  fit.theta.rho = st.tail(h_degree);
  fit.theta.alpha = fit.alpha;
  fit.theta.rho_v = fit.rho_v;
  fit.theta.beta0 = intercept_recovery(p, fit.theta);

  GmmResult& g = fit.gmm;
  g.theta_hat = fit.theta;
  g.free_names = {"beta_k", "beta_l"};
  for (int i = 0; i < h_degree; ++i) g.free_names.push_back("rho" + std::to_string(i + 1));
  for (const auto& n : g.free_names) g.free_index.push_back(fit.theta.index_of(n));
  g.vcov = V;
  g.j_stat = best.lin.j_stat;
  g.df = best.lin.df;
  g.converged = true;
  g.sigma_ridged = best.lin.sigma_ridged;
  g.n_firms = p.n_firms();
  g.n_obs = p.n_obs();
  g.objective_value = best.lin.j_stat / p.n_firms();
  g.g = best.lin.g;
  g.weight = best.lin.weight;

  fit.rho_t_stats = VectorXd::Zero(h_degree);
  for (int i = 0; i < h_degree; ++i) {
    const double se = std::sqrt(std::max(V(2 + i, 2 + i), 0.0));
    fit.rho_t_stats[i] = se > 0 ? st[2 + i] / se : 0.0;
  }
  const double t2 = h_degree >= 2 ? std::abs(fit.rho_t_stats[1]) : 0.0;
  const double t3 = h_degree >= 3 ? std::abs(fit.rho_t_stats[2]) : 0.0;
  fit.weak = t2 < 1.96 && t3 < 1.96;
  return fit;
}

VectorXd recover_productivity(const Panel& p, const ParamVector& th) {
  return p.y - th.beta_k * p.k - th.beta_l * p.l - th.beta_m * p.m - th.beta_e * p.e - th.beta_w * p.w;
}

double intercept_recovery(const CenteredPanel& p, const ParamVector& th) {
  return p.y_bar - th.beta_k * p.k_bar - th.beta_l * p.l_bar - th.beta_m * p.m_bar - th.beta_e * p.e_bar -
         th.beta_w * p.w_bar;
}

double markup(double beta_m, double s_m) {
  if (!(s_m > 0)) throw std::invalid_argument("markup: materials share must be positive");
  return beta_m / s_m;
}

}  // namespace pfe
