#include <doctest.h>

#include <cmath>

#include "pfe/dgp.hpp"
#include "pfe/diagnostics.hpp"
#include "pfe/proposed.hpp"
#include "pfe/random.hpp"

using namespace pfe;

namespace {

CenteredPanel raw_centered(const Panel& p) {
  CenteredPanel c;
  c.data = p;
  c.basis.resize(p.n_obs(), 0);
  c.groups = p.firms();
  return c;
}

Simulation small_sim(int n = 60, int t = 10, std::uint64_t seed = 4) {
  DgpConfig cfg;
  cfg.n_firms = n;
  cfg.t_obs = t;
  cfg.seed = seed;
  return simulate(cfg);
}

std::vector<VectorXd> moment_residuals(const CenteredPanel& c, const ParamVector& th) {
  auto specs = block_a_moments(c);
  for (auto& s : block_b_moments(c)) specs.push_back(s);
  std::vector<VectorXd> out;
  for (const auto& s : specs) out.push_back(s.residual_fn(c, th));
  return out;
}

MomentSystem ab_system(const CenteredPanel& c) {
  auto specs = block_a_moments(c);
  for (auto& s : block_b_moments(c)) specs.push_back(s);
  return MomentSystem(specs, c);
}

}  // namespace

TEST_CASE("CES index") {
  for (double a : {0.1, 0.4, 0.9})
    for (double r : {-1.0, 0.3, 2.0}) CHECK(ces_index(1.7, 1.7, a, r) == doctest::Approx(1.7).epsilon(1e-14));
  CHECK(ces_index(1.0, 2.0, 0.4, 0.0) == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(ces_index(1.0, 0.0, 0.4, 0.3) == doctest::Approx(std::log(0.4 * std::exp(0.3) + 0.6) / 0.3).epsilon(1e-14));

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double k = 3 * rng.normal(), l = 3 * rng.normal(), c = 5 * rng.normal();
    const double a = 0.05 + 0.9 * rng.uniform(), r = 2 * rng.normal();
    CHECK(std::abs(ces_index(k + c, l + c, a, r) - ces_index(k, l, a, r) - c) < 1e-12);
    CHECK(std::abs(ces_index(k, l, a, 1e-9) - (a * k + (1 - a) * l)) < 1e-8);
    CHECK(std::abs(ces_index(k, l, a, -1e-9) - (a * k + (1 - a) * l)) < 1e-8);
  }
  CHECK(std::isfinite(ces_index(400.0, -400.0, 0.5, 50.0)));
  CHECK(ces_index(400.0, -400.0, 0.5, 50.0) == doctest::Approx(400.0 + std::log(0.5) / 50.0));

  // marginal rate of substitution
  for (double k : {0.5, 1.5, 3.0}) {
    const double l = 2.0, a = 0.4, r = 0.3, h = 1e-6;
    const double vk = (ces_index(k + h, l, a, r) - ces_index(k - h, l, a, r)) / (2 * h);
    const double vl = (ces_index(k, l + h, a, r) - ces_index(k, l - h, a, r)) / (2 * h);
    CHECK(vk / vl == doctest::Approx(a / (1 - a) * std::exp(r * (k - l))).epsilon(1e-6));
  }
}

TEST_CASE("default grid") {
  const Grid g = default_grid();
  CHECK(g.size() == 21 * 19);
  bool has_neg1 = false, has_zero = false, has_pos1 = false;
  for (const auto& [r, a] : g) {
    CHECK(a > 0);
    CHECK(a < 1);
    has_neg1 |= std::abs(r + 1) < 1e-12;
    has_zero |= r == 0.0;
    has_pos1 |= std::abs(r - 1) < 1e-12;
  }
  CHECK((has_neg1 && has_zero && has_pos1));
}

TEST_CASE("scale ratios recover loadings from noiseless residuals") {
  Rng rng(2);
  const int n = 500;
  MatrixXd B(n, 4);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) B(i, j) = rng.normal();
  B.rowwise() -= B.colwise().mean();
  // mutually orthogonal columns: productivity and three shocks with zero sample covariance
  Eigen::HouseholderQR<MatrixXd> qr(B);
  const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, 4);
  const VectorXd omega = Q.col(0) * 10, tau = Q.col(1) * 3, nu = Q.col(2) * 3, eta = Q.col(3) * 3;
  Residuals r;
  r.m_tilde = 2.2 * omega + tau;
  r.e_tilde = 2.0 * omega + nu;
  r.w_tilde = 1.8 * omega + eta;
  r.y_tilde = omega;
  const ScaleRatios s = scale_ratios(r);
  CHECK(std::abs(s.gamma_omega - 2.2) < 1e-10);
  CHECK(std::abs(s.delta_omega - 2.0) < 1e-10);
  CHECK(std::abs(s.zeta_omega - 1.8) < 1e-10);

  Residuals z;
  z.m_tilde = z.e_tilde = z.w_tilde = z.y_tilde = VectorXd::Zero(10);
  CHECK_THROWS_AS(scale_ratios(z), DegenerateError);
}

TEST_CASE("Block A errors eliminate productivity") {
  const Simulation sim = small_sim();
  const CenteredPanel c = raw_centered(sim.panel);
  const ParamVector th = default_truth();
  const auto u = moment_residuals(c, th);
  const MatrixXd sh = shock_columns(sim.truth, sim.panel);
  const VectorXd expect = th.delta_omega * sh.col(0) - th.gamma_omega * sh.col(1);
  CHECK((u[0] - expect).cwiseAbs().maxCoeff() < 1e-12);
  const VectorXd expect2 = th.zeta_omega * sh.col(0) - th.gamma_omega * sh.col(2);
  CHECK((u[1] - expect2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Delta(k,l) reparameterization leaves errors, moments and d_k unchanged") {
  const Simulation sim = small_sim();
  const CenteredPanel c = demean(sim.panel);
  ParamVector th = ab_starting_values(c);
  th.gamma_omega = 2.1, th.delta_omega = 1.9, th.zeta_omega = 1.7;
  MomentSystem sys = ab_system(c);
  for (auto [ck, cl] : {std::pair{0.3, -0.2}, {-1.1, 0.7}, {2.0, 2.0}}) {
    const ParamVector tt = delta_kl_transform(th, ck, cl);
    const auto a = moment_residuals(c, th), b = moment_residuals(c, tt);
    for (size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((sys.g_n(th) - sys.g_n(tt)).cwiseAbs().maxCoeff() < 1e-10);
    for (auto [f, s] : {std::pair{InputId::M, InputId::E}, {InputId::M, InputId::W}, {InputId::E, InputId::W}}) {
      CHECK(std::abs(pair_dk(th, f, s) - pair_dk(tt, f, s)) < 1e-10);
      CHECK(std::abs(pair_dl(th, f, s) - pair_dl(tt, f, s)) < 1e-10);
    }
    const MatrixXd W = first_step_weight(sys, th);
    const VectorXd ga = sys.g_n(th), gb = sys.g_n(tt);
    CHECK(std::abs(ga.dot(W * ga) - gb.dot(W * gb)) < 1e-10);
  }
}

TEST_CASE("moments are centered at the truth") {
  DgpConfig cfg;
  cfg.n_firms = 300;
  cfg.t_obs = 30;
  const CenteredPanel c = demean(simulate(cfg).panel);
  MomentSystem sys = ab_system(c);
  const MatrixXd G = sys.per_firm(cfg.truth);
  const VectorXd g = G.colwise().mean();
  const VectorXd se =
      ((G.rowwise() - g.transpose()).array().square().colwise().sum() / (G.rows() - 1)).sqrt() / std::sqrt(300.0);
  for (Eigen::Index i = 0; i < g.size(); ++i) CHECK(std::abs(g[i]) < 4 * se[i]);
  CHECK((sys.g_n(cfg.truth) - g).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Block A+B fit: just identified, full rank, close to truth") {
  DgpConfig cfg;
  cfg.n_firms = 200;
  cfg.t_obs = 50;
  cfg.seed = 8;
  const CenteredPanel c = demean(simulate(cfg).panel);
  const BlockAbFit f = fit_block_ab(c);
  CHECK(f.gmm.df == 0);
  CHECK(f.gmm.j_stat < 1e-6);
  CHECK(f.gmm.free_names.size() == 12);
  CHECK(f.gmm.converged);
  CHECK_FALSE(f.degenerate);
  Eigen::JacobiSVD<MatrixXd> svd(f.gmm.jacobian);
  const VectorXd sv = svd.singularValues();
  CHECK(sv[11] > 1e-6 * sv[0]);
  CHECK(std::abs(f.theta.beta_m - 0.3) < 4 * f.gmm.se("beta_m"));
  CHECK(std::abs(f.theta.gamma_omega - 2.2) < 4 * f.gmm.se("gamma_omega"));
  CHECK(f.theta.beta_k == 0.0);
  CHECK(f.theta.beta0 == doctest::Approx(intercept_recovery(c, f.theta)));
  // closed-form ratios at the fitted point
  CHECK(f.scale_ratios.gamma_omega > 0);
}

TEST_CASE("zero demand shocks trip the degeneracy checks") {
  DgpConfig cfg;
  cfg.n_firms = 50;
  cfg.t_obs = 10;
  cfg.proc.shock_sd = 0;
  const CenteredPanel c = demean(simulate(cfg).panel);
  bool fired = false;
  try {
    fired = fit_block_ab(c).degenerate;
  } catch (const DegenerateError&) {
    fired = true;
  }
  CHECK(fired);
}

TEST_CASE("Block C at the true index on a large panel") {
  DgpConfig cfg;
  cfg.n_firms = 200;
  cfg.t_obs = 50;
  cfg.seed = 8;
  const CenteredPanel c = demean(simulate(cfg).panel);
  const BlockAbFit ab = fit_block_ab(c);
  const BlockCFit bc = fit_block_c(c, ab, {{0.3, 0.4}, {0.5, 0.4}}, 3);
  CHECK(bc.profile_grid.size() == 2);
  double jmin = 1e300;
  for (const auto& g : bc.profile_grid) jmin = std::min(jmin, g.j_stat);
  for (const auto& g : bc.profile_grid)
    if (g.rho_v == bc.rho_v && g.alpha == bc.alpha) CHECK(g.j_stat == jmin);
  CHECK(bc.gmm.df == 4);
  CHECK(bc.theta.rho.size() == 3);
  CHECK(std::abs(bc.theta.beta_k - 0.2) < 4 * bc.gmm.se("beta_k"));
  CHECK(bc.theta.beta_m == ab.theta.beta_m);
  CHECK_THROWS(fit_block_c(c, ab, {}, 3));
}

TEST_CASE("productivity recovery, intercept and markup") {
  DgpConfig cfg;
  cfg.n_firms = 100;
  cfg.t_obs = 20;
  cfg.proc.sigma_eps = 0;
  const Simulation sim = simulate(cfg);
  const VectorXd om = recover_productivity(sim.panel, cfg.truth);
  double maxdiff = 0;
  for (int i = 0; i < sim.panel.n_obs(); ++i)
    maxdiff = std::max(maxdiff, std::abs(om[i] - cfg.truth.beta0 -
                                         sim.truth.omega(sim.panel.firm[i] - 1, sim.panel.year[i] - 1)));
  CHECK(maxdiff < 1e-12);

  cfg.proc.sigma_eps = 0.05;
  cfg.n_firms = 300;
  const Simulation s2 = simulate(cfg);
  const VectorXd o2 = recover_productivity(s2.panel, cfg.truth);
  VectorXd diff(o2.size());
  for (int i = 0; i < o2.size(); ++i)
    diff[i] = o2[i] - cfg.truth.beta0 - s2.truth.omega(s2.panel.firm[i] - 1, s2.panel.year[i] - 1);
  CHECK(std::abs(diff.mean()) < 0.003);
  CHECK(std::sqrt((diff.array() - diff.mean()).square().mean()) == doctest::Approx(0.05).epsilon(0.05));

  CenteredPanel c;
  c.y_bar = c.k_bar = c.l_bar = c.m_bar = c.e_bar = c.w_bar = 1.0;
  ParamVector t;
  t.beta_k = t.beta_l = t.beta_m = t.beta_e = t.beta_w = 0.1;
  CHECK(intercept_recovery(c, t) == doctest::Approx(0.5));
  CenteredPanel zero;
  CHECK(intercept_recovery(zero, t) == 0.0);
  const CenteredPanel big = demean(s2.panel);
  const double b0 = intercept_recovery(big, cfg.truth);
  CHECK(std::abs(b0 - 0.1) < 0.05);

  CHECK(markup(0.3, 0.3) == 1.0);
  CHECK(markup(0.565, 0.5) == doctest::Approx(1.13));
  CHECK(markup(0.926 * 0.4, 0.4) == doctest::Approx(0.926));
  CHECK_THROWS(markup(0.3, 0.0));
  CHECK_THROWS(markup(0.3, -0.1));
}
