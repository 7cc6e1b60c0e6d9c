#include <doctest.h>

#include <cmath>

#include "pfe/dgp.hpp"
#include "pfe/diagnostics.hpp"
#include "pfe/random.hpp"

using namespace pfe;

namespace {

GmmResult fake_gmm(const ParamVector& th, const std::vector<std::string>& names, double var) {
  GmmResult g;
  g.theta_hat = th;
  g.free_names = names;
  for (const auto& n : names) g.free_index.push_back(th.index_of(n));
  g.vcov = MatrixXd::Identity(names.size(), names.size()) * var;
  return g;
}

const std::vector<std::string> kSlopes = {"gamma_k", "gamma_l", "delta_k", "delta_l", "zeta_k", "zeta_l",
                                          "gamma_omega", "delta_omega", "zeta_omega"};

// balanced panel with firm and year effects; firms 1..n/2 treated from year start
Panel did_panel(int n, int t, int start, double att, double noise, std::uint64_t seed, VectorXd& omega) {
  Rng rng(seed);
  Panel p;
  const int rows = n * t;
  p.k.resize(rows), p.l.resize(rows);
  p.y = p.m = p.e = p.w = VectorXd::Zero(rows);
  p.z.resize(rows, 0);
  VectorXd d(rows);
  omega.resize(rows);
  std::vector<double> yfx(t);
  for (auto& v : yfx) v = rng.normal();
  int i = 0;
  for (int f = 0; f < n; ++f) {
    const double a = rng.normal();
    const bool tr = f < n / 2;
    for (int s = 1; s <= t; ++s, ++i) {
      p.firm.push_back(f + 1);
      p.year.push_back(s);
      p.k[i] = rng.normal() + a;
      p.l[i] = rng.normal();
      d[i] = tr && s >= start ? 1.0 : 0.0;
      omega[i] = a + yfx[s - 1] + att * d[i] + noise * rng.normal();
    }
  }
  p.d = d;
  return p;
}

}  // namespace

TEST_CASE("pairwise discrepancies") {
  ParamVector th;
  th.gamma_k = 0.44, th.gamma_omega = 2.2;
  th.delta_k = 0.4, th.delta_omega = 2.0;
  th.zeta_k = 0.9, th.zeta_omega = 1.8;
  th.gamma_l = 0.1, th.delta_l = 0.3, th.zeta_l = 0.0;
  CHECK(std::abs(pair_dk(th, InputId::M, InputId::E)) < 1e-15);
  CHECK(pair_dk(th, InputId::M, InputId::W) == doctest::Approx(0.5 - 0.2));
  CHECK(pair_dl(th, InputId::M, InputId::E) == doctest::Approx(0.15 - 0.1 / 2.2));
  CHECK(pair_dl(th, InputId::E, InputId::M) == doctest::Approx(-pair_dl(th, InputId::M, InputId::E)));
  const Loadings lw = input_loadings(th, InputId::W);
  CHECK(lw.a_k == 0.9);
  CHECK(lw.a_omega == 1.8);
  CHECK(input_name(InputId::E) == "e");
}

TEST_CASE("exclusion recovery is exact on noiseless data") {
  DgpConfig cfg;
  cfg.n_firms = 40;
  cfg.t_obs = 8;
  cfg.proc.shock_sd = 0;
  cfg.proc.sigma_eps = 0;
  const Simulation sim = simulate(cfg);
  CenteredPanel c;
  c.data = sim.panel;
  c.basis.resize(sim.panel.n_obs(), 0);
  c.groups = sim.panel.firms();
  const ParamVector& tr = cfg.truth;

  BlockAbFit ab;
  ab.theta = tr;
  ab.gmm = fake_gmm(tr, kSlopes, 1e-4);
  {
    // exclusion holds: every proxy returns the output slopes
    ParamVector ex = tr;
    ex.gamma_k = ex.gamma_l = ex.delta_k = ex.delta_l = ex.zeta_k = ex.zeta_l = 0;
    DgpConfig c2 = cfg;
    c2.truth = ex;
    const Simulation s2 = simulate(c2);
    CenteredPanel c3 = c;
    c3.data = s2.panel;
    BlockAbFit ab2;
    ab2.theta = ex;
    ab2.gmm = fake_gmm(ex, kSlopes, 1e-4);
    for (const auto& x : exclusion_recovery(c3, ab2).per_input) {
      CHECK(std::abs(x.beta_k - tr.beta_k) < 1e-10);
      CHECK(std::abs(x.beta_l - tr.beta_l) < 1e-10);
    }
  }
  const ExclusionRecovery r = exclusion_recovery(c, ab);
  REQUIRE(r.per_input.size() == 3);
  // the proxy keeps each input's own (k, l) slopes, which the regression picks up
  for (const auto& x : r.per_input) {
    const Loadings a = input_loadings(tr, x.input);
    CHECK(std::abs(x.beta_k - (tr.beta_k - a.a_k / a.a_omega)) < 1e-10);
    CHECK(std::abs(x.beta_l - (tr.beta_l - a.a_l / a.a_omega)) < 1e-10);
    CHECK(x.se_k < 1e-8);
  }
  REQUIRE(r.pairs.size() == 3);
  CHECK(r.pairs[1].d_k == doctest::Approx(pair_dk(tr, InputId::M, InputId::W)));
  CHECK(r.pairs[1].se_k > 0);
  CHECK(r.wald_df == 2);
  CHECK(r.wald_p == doctest::Approx(std::exp(-r.wald_stat / 2)));

  // marginal proxies strip the other slope, leaving only the excluded one
  const ExclusionRecovery mg = exclusion_recovery(c, ab, ExclusionCase::Marginal);
  REQUIRE(mg.per_input.size() == 1);
  CHECK(std::abs(mg.per_input[0].beta_k - (tr.beta_k - tr.gamma_k / tr.gamma_omega)) < 1e-10);
  CHECK(std::abs(mg.per_input[0].beta_l - (tr.beta_l - tr.delta_l / tr.delta_omega)) < 1e-10);

  ProxyAssignment same;
  same.for_l = InputId::M;
  CHECK_THROWS(exclusion_recovery(c, ab, ExclusionCase::Marginal, same));
  ab.theta.delta_omega = 0;
  CHECK_THROWS_AS(exclusion_recovery(c, ab), DegenerateError);
}

TEST_CASE("Wald statistic matches the delta-method quadratic form") {
  CenteredPanel c;
  c.data.y = c.data.k = c.data.l = c.data.m = c.data.e = c.data.w = VectorXd::LinSpaced(6, 0, 1);
  c.data.k[0] = 3;
  c.data.l[1] = -2;
  c.data.firm = {1, 1, 2, 2, 3, 3};
  c.data.year = {1, 2, 1, 2, 1, 2};
  c.basis.resize(6, 0);
  c.groups = c.data.firms();
  ParamVector th;
  th.gamma_k = 0.3, th.delta_k = 0.1, th.gamma_l = 0.2, th.zeta_l = -0.1;
  th.gamma_omega = 2, th.delta_omega = 1, th.zeta_omega = 1;
  BlockAbFit ab;
  ab.theta = th;
  ab.gmm = fake_gmm(th, {"gamma_k", "delta_k", "gamma_l", "zeta_l"}, 0.01);
  const ExclusionRecovery r = exclusion_recovery(c, ab);
  // d_k(m,e) = 0.1 - 0.15, d_l(m,w) = -0.1 - 0.1; gradients are independent coordinates
  const double dk = -0.05, dl = -0.2;
  const double vk = 0.01 * (1 + 0.25), vl = 0.01 * (1 + 0.25);
  CHECK(r.wald_stat == doctest::Approx(dk * dk / vk + dl * dl / vl).epsilon(1e-6));
}

TEST_CASE("difference in differences") {
  VectorXd om;
  const Panel exact = did_panel(40, 8, 5, 0.25, 0.0, 1, om);
  DidResult r = did_att(om, exact, 5, 0);
  CHECK(r.att_hat == doctest::Approx(0.25).epsilon(1e-8));
  CHECK(r.pre_trend_max < 1e-8);
  CHECK(r.n_treated_firms == 20);
  CHECK(r.n_control_firms == 20);
  CHECK_FALSE(r.used_poly_kl);
  const DidResult rows = did_att(om, exact, 0, 0);
  CHECK(rows.att_hat == doctest::Approx(0.25).epsilon(1e-8));

  const Panel noisy = did_panel(200, 8, 5, 0.25, 0.3, 2, om);
  r = did_att(om, noisy, 5, 0);
  CHECK(std::abs(r.att_hat - 0.25) < 3 * r.se);
  CHECK(r.se > 0);

  const Panel placebo = did_panel(200, 8, 5, 0.0, 0.3, 3, om);
  r = did_att(om, placebo, 5, 0);
  CHECK(std::abs(r.att_hat) < 3 * r.se);

  // a linear (k, l) shift of productivity is absorbed by the polynomial controls
  const DidResult base = did_att(om, placebo, 5, 2);
  const VectorXd shifted = om + 0.7 * placebo.k - 0.4 * placebo.l;
  const DidResult moved = did_att(shifted, placebo, 5, 2);
  CHECK(base.used_poly_kl);
  CHECK(std::abs(base.att_hat - moved.att_hat) < 1e-8);

  Panel none = placebo;
  none.d.reset();
  CHECK_THROWS(did_att(om, none, 5, 0));
  Panel all = placebo;
  all.d = VectorXd::Ones(all.n_obs());
  CHECK_THROWS(did_att(om, all, 5, 0));
  Panel zero = placebo;
  zero.d = VectorXd::Zero(zero.n_obs());
  CHECK_THROWS(did_att(om, zero, 5, 0));
  CHECK_THROWS(did_att(VectorXd::Zero(3), placebo, 5, 0));
}

TEST_CASE("Block C strength from t statistics") {
  BlockCFit fit;
  fit.theta.rho = VectorXd(3);
  fit.theta.rho << 1.0, 0.5, 0.1;
  fit.gmm.free_names = {"beta_k", "beta_l", "rho1", "rho2", "rho3"};
  fit.gmm.vcov = MatrixXd::Identity(5, 5) * 0.01;
  BlockCStrength s = blockc_strength(fit);
  CHECK(s.t_stats[0] == doctest::Approx(10));
  CHECK(s.t_stats[1] == doctest::Approx(5));
  CHECK(s.t_stats[2] == doctest::Approx(1));
  CHECK_FALSE(s.weak);
  fit.theta.rho[1] = 0.1;
  s = blockc_strength(fit);
  CHECK(s.weak);
}
