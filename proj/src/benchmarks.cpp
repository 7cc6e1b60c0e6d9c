#include "pfe/benchmarks.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <stdexcept>

#include "pfe/linalg.hpp"

namespace pfe {

std::string bench_name(BenchMethod m) {
  switch (m) {
    case BenchMethod::ACF: return "acf";
    case BenchMethod::ACF_MOD: return "acf-mod";
    case BenchMethod::GNR: return "gnr";
  }
  return "?";
}

LagPairs lag_pairs(const Panel& p) {
  LagPairs lp;
  for (int i = 1; i < p.n_obs(); ++i)
    if (p.firm[i] == p.firm[i - 1] && p.year[i] == p.year[i - 1] + 1) {
      lp.cur.push_back(i);
      lp.prev.push_back(i - 1);
    }
  return lp;
}

namespace {

const char* kInputNames[5] = {"beta_k", "beta_l", "beta_m", "beta_e", "beta_w"};

MatrixXd inputs(const Panel& p) {
  MatrixXd X(p.n_obs(), 5);
  X << p.k, p.l, p.m, p.e, p.w;
  return X;
}

double r_squared(const VectorXd& y, const VectorXd& fit) {
  const double sst = (y.array() - y.mean()).square().sum();
  return sst > 0 ? 1.0 - (y - fit).squaredNorm() / sst : 0.0;
}

struct Stage1 {
  VectorXd phi;
  double r2 = 0;
};

Stage1 polynomial_stage1(const Panel& p, const MatrixXd* extra, int degree) {
  if (degree < 1) throw std::invalid_argument("first-stage degree must be positive");
  std::vector<VectorXd> cols = {p.k, p.l, p.m, p.e, p.w};
  for (int j = 0; j < p.z.cols(); ++j) cols.push_back(p.z.col(j));
  if (extra)
    for (int j = 0; j < extra->cols(); ++j) cols.push_back(extra->col(j));
  MatrixXd P = poly_features(cols, degree, true);
  if (P.cols() >= p.n_obs()) throw std::invalid_argument("first stage has more regressors than observations");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(P);
  if (qr.rank() < P.cols() && !extra) throw DataError("first-stage regressors are collinear");
  Stage1 s;
  s.phi = P * qr.solve(p.y);
  s.r2 = r_squared(p.y, s.phi);
  return s;
}

// Markov second stage: omega = target - X beta over the free inputs, innovation from a cubic in
// lagged omega, moments innovation x instruments.
GmmResult markov_stage2(const Panel& p, const VectorXd& target, const std::vector<int>& free_inputs,
                        const std::vector<std::pair<int, bool>>& instruments, const OptimOptions& opt) {
  const LagPairs lp = lag_pairs(p);
  const int nc = static_cast<int>(lp.cur.size());
  if (nc < 10) throw DataError("too few observations with a lag for the Markov stage");
  const MatrixXd X = inputs(p);

  CenteredPanel sub;
  sub.data.y = VectorXd::Zero(nc);
  for (int i : lp.cur) {
    sub.data.firm.push_back(p.firm[i]);
    sub.data.year.push_back(p.year[i]);
  }
  sub.groups = sub.data.firms();

  MatrixXd Z(nc, static_cast<Eigen::Index>(instruments.size()));
  for (size_t j = 0; j < instruments.size(); ++j) {
    const auto [col, lagged] = instruments[j];
    for (int r = 0; r < nc; ++r) Z(r, j) = X(lagged ? lp.prev[r] : lp.cur[r], col);
  }
  Z.rowwise() -= Z.colwise().mean();

  auto resid = [&, lp](const CenteredPanel&, const ParamVector& th) -> VectorXd {
    const VectorXd f = th.flat();
    const VectorXd omega = target - X * f.head(5);
    VectorXd cur(nc), lag(nc);
    for (int r = 0; r < nc; ++r) {
      cur[r] = omega[lp.cur[r]];
      lag[r] = omega[lp.prev[r]];
    }
    MatrixXd G(nc, 4);
    G.col(0).setOnes();
    G.col(1) = lag;
    G.col(2) = lag.array().square();
    G.col(3) = lag.array().cube();
    return cur - G * ols(G, cur);
  };
  MomentSystem sys({{"markov", resid, [Z](const CenteredPanel&) { return Z; }, BlockTag::BENCH}}, sub);

  MatrixXd S(p.n_obs(), 1 + free_inputs.size());
  S.col(0).setOnes();
  for (size_t j = 0; j < free_inputs.size(); ++j) S.col(1 + j) = X.col(free_inputs[j]);
  const VectorXd start = ols(S, target);
  ParamVector th0;
  std::vector<bool> mask(th0.flat_size(), false);
  double* fields[5] = {&th0.beta_k, &th0.beta_l, &th0.beta_m, &th0.beta_e, &th0.beta_w};
  for (int c = 0; c < 5; ++c) *fields[c] = 0;
  for (size_t j = 0; j < free_inputs.size(); ++j) {
    *fields[free_inputs[j]] = start[1 + j];
    mask[th0.index_of(kInputNames[free_inputs[j]])] = true;
  }
  return two_step_estimate(sys, th0, mask, opt);
}

void copy_betas(BenchFit& f) {
  const ParamVector& t = f.gmm.theta_hat;
  f.beta_k = t.beta_k, f.beta_l = t.beta_l, f.beta_m = t.beta_m, f.beta_e = t.beta_e, f.beta_w = t.beta_w;
  f.converged = f.gmm.converged && std::isfinite(t.beta_m + t.beta_k + t.beta_l);
}

BenchFit acf_impl(const Panel& p, const MatrixXd* extra, int degree, const OptimOptions& opt, BenchMethod m) {
  BenchFit f;
  f.method = m;
  Stage1 s1 = polynomial_stage1(p, extra, degree);
  f.first_stage_r2 = s1.r2;
  f.gmm = markov_stage2(p, s1.phi, {0, 1, 2, 3, 4}, {{0, false}, {1, false}, {2, true}, {3, true}, {4, true}}, opt);
  copy_betas(f);
  return f;
}

}  // namespace

BenchFit fit_acf(const Panel& p, int first_stage_degree, const OptimOptions& opt) {
  return acf_impl(p, nullptr, first_stage_degree, opt, BenchMethod::ACF);
}

BenchFit fit_acf_mod(const Panel& p, const MatrixXd& shocks, int first_stage_degree, const OptimOptions& opt) {
  if (shocks.rows() != p.n_obs() || shocks.cols() != 3)
    throw std::invalid_argument("fit_acf_mod: needs the simulated (tau, nu, eta) for every row");
  return acf_impl(p, &shocks, first_stage_degree, opt, BenchMethod::ACF_MOD);
}

BenchFit fit_gnr(const Panel& p, const OptimOptions& opt) {
  BenchFit f;
  f.method = BenchMethod::GNR;
  const Eigen::Index n = p.n_obs();
  // log revenue share of materials with unit prices
  const VectorXd share = p.m - p.y;
  if (!share.allFinite()) throw DataError("fit_gnr: nonpositive materials share");
  auto features = [&](const VectorXd& mcol) { return poly_features({p.k, p.l, mcol, p.e, p.w}, 2, true); };
  const MatrixXd P = features(p.m);
  const VectorXd coef = ols(P, share);
  const VectorXd fit = P * coef;
  f.first_stage_r2 = r_squared(share, fit);
  const VectorXd eps = fit - share;
  const double log_scale = std::log(eps.array().exp().mean());
  const VectorXd elasticity = (fit.array() - log_scale).exp();

  // integral of the elasticity over materials, from the sample mean of m
  const double m0 = p.m.mean();
  using Quad = boost::math::quadrature::gauss<double, 10>;
  VectorXd integral = VectorXd::Zero(n);
  const auto& abs = Quad::abscissa();
  const auto& wts = Quad::weights();
  auto add_node = [&](double x, double wgt) {
    const VectorXd half = 0.5 * (p.m.array() - m0);
    const VectorXd mid = 0.5 * (p.m.array() + m0);
    const VectorXd node = mid + x * half;
    const VectorXd val = ((features(node) * coef).array() - log_scale).exp();
    integral.array() += wgt * half.array() * val.array();
  };
  for (size_t i = 0; i < abs.size(); ++i) {
    if (abs[i] == 0.0) {
      add_node(0.0, wts[i]);
    } else {
      add_node(abs[i], wts[i]);
      add_node(-abs[i], wts[i]);
    }
  }
  const VectorXd target = p.y - eps - integral;
  f.gmm = markov_stage2(p, target, {0, 1, 3, 4}, {{0, false}, {1, false}, {3, true}, {4, true}}, opt);
  copy_betas(f);
  f.beta_m = elasticity.mean();
  f.gmm.theta_hat.beta_m = f.beta_m;
  return f;
}

}  // namespace pfe
