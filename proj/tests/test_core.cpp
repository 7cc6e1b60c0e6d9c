#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pfe/dgp.hpp"
#include "pfe/proposed.hpp"
#include "pfe/random.hpp"

using namespace pfe;

namespace {

Panel parse(const std::string& csv) {
  std::istringstream in(csv);
  return load_panel(in);
}

double corr(const MatrixXd& a, const MatrixXd& b) {
  const Eigen::ArrayXd x = a.reshaped().array() - a.mean(), y = b.reshaped().array() - b.mean();
  return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

}  // namespace

TEST_CASE("load_panel reads a minimal panel") {
  Panel p = parse("firm,year,y,k,l,m,e,w\n1,2,1,2,3,4,5,6\n1,1,0,0,0,0,0,0\n");
  CHECK(p.n_obs() == 2);
  CHECK(p.n_firms() == 1);
  CHECK(p.year[0] == 1);
  CHECK(p.y[1] == 1.0);
  CHECK(p.z.cols() == 0);
  CHECK_FALSE(p.d.has_value());
}

TEST_CASE("load_panel rejects malformed input") {
  try {
    parse("firm,year,y,k,l,m,e\n1,1,0,0,0,0,0\n");
    FAIL("missing column accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("firm,year,y,k,l,m,e,w\n1,1,NaN,0,0,0,0,0\n"), DataError);
  CHECK_THROWS_AS(parse("firm,year,y,k,l,m,e,w\n1,1,0,0,0,0,0,0\n1,1,1,0,0,0,0,0\n"), DataError);
  CHECK_THROWS_AS(parse(""), DataError);
}

TEST_CASE("load_panel picks up controls and treatment, schema renames") {
  Panel p = parse("firm,year,y,k,l,m,e,w,z1,z2,d\n2,1,0,0,0,0,0,0,1,2,1\n1,1,0,0,0,0,0,0,3,4,0\n");
  CHECK(p.z.cols() == 2);
  CHECK(p.firm[0] == 1);
  CHECK(p.z(0, 0) == 3.0);
  REQUIRE(p.d.has_value());
  CHECK((*p.d)[1] == 1.0);
  std::istringstream in("id,t,out,k,l,m,e,w\n1,1,5,0,0,0,0,0\n");
  Panel q = load_panel(in, {{"firm", "id"}, {"year", "t"}, {"y", "out"}});
  CHECK(q.y[0] == 5.0);
}

TEST_CASE("write_panel round trips") {
  DgpConfig cfg;
  cfg.n_firms = 3;
  cfg.t_obs = 4;
  cfg.dgp = DgpId::PotentialOutcome;
  const Panel p = simulate(cfg).panel;
  std::stringstream s;
  write_panel(s, p);
  const Panel q = load_panel(s);
  CHECK(q.n_obs() == p.n_obs());
  CHECK((q.y - p.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*q.d - *p.d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("demean") {
  Panel p = parse("firm,year,y,k,l,m,e,w\n1,1,1,0,0,0,0,0\n1,2,3,0,0,0,0,0\n");
  CenteredPanel c = demean(p);
  CHECK(c.y_bar == doctest::Approx(2.0));
  CHECK(c.data.y[0] == doctest::Approx(-1.0));
  CHECK(c.data.y[1] == doctest::Approx(1.0));

  Panel q = parse("firm,year,y,k,l,m,e,w\n1,1,0.1,0,0,0,0,0\n1,2,0.2,0,0,0,0,0\n1,3,0.6,0,0,0,0,0\n");
  CenteredPanel cq = demean(q);
  CHECK(cq.data.y[0] == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(cq.data.y[1] == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(cq.data.y[2] == doctest::Approx(0.3).epsilon(1e-12));

  DgpConfig cfg;
  cfg.n_firms = 20;
  cfg.t_obs = 5;
  CenteredPanel a = demean(simulate(cfg).panel);
  for (const VectorXd* v : {&a.data.y, &a.data.k, &a.data.l, &a.data.m, &a.data.e, &a.data.w})
    CHECK(std::abs(v->mean()) < 1e-12);
  CenteredPanel b = demean(a.data);
  CHECK((b.data.y - a.data.y).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(b.y_bar) < 1e-12);
  CHECK_THROWS(demean(Panel{}));
}

TEST_CASE("nuisance_basis enumerates monomials") {
  MatrixXd z1(3, 1);
  z1 << 1, 2, 3;
  MatrixXd b1 = nuisance_basis(z1, 2);
  REQUIRE(b1.cols() == 2);
  CHECK(b1(2, 0) == 3.0);
  CHECK(b1(2, 1) == 9.0);

  MatrixXd z2(2, 2);
  z2 << 2, 3, 5, 7;
  MatrixXd b2 = nuisance_basis(z2, 2);
  REQUIRE(b2.cols() == 5);
  // (z1, z2, z1^2, z1 z2, z2^2)
  Eigen::RowVectorXd expect(5);
  expect << 5, 7, 25, 35, 49;
  CHECK((b2.row(1) - expect).cwiseAbs().maxCoeff() == 0.0);

  CHECK(nuisance_basis(MatrixXd(4, 0), 2).cols() == 0);
  CHECK_THROWS(nuisance_basis(z1, 0));
  // C(d + g, g) - 1
  CHECK(nuisance_basis(MatrixXd::Ones(2, 3), 3).cols() == 19);
}

TEST_CASE("residuals at the truth without shocks") {
  DgpConfig cfg;
  cfg.n_firms = 30;
  cfg.t_obs = 10;
  cfg.proc.shock_sd = 0;
  cfg.proc.sigma_eps = 0;
  const Simulation sim = simulate(cfg);
  Panel p = sim.panel;
  p.y.array() -= cfg.truth.beta0 + cfg.truth.beta_k * p.k.array() + cfg.truth.beta_l * p.l.array();
  CenteredPanel c;
  c.data = p;
  c.basis.resize(p.n_obs(), 0);
  c.groups = p.firms();
  const Residuals r = residuals(c, cfg.truth);
  VectorXd omega(p.n_obs());
  for (int i = 0; i < p.n_obs(); ++i) omega[i] = sim.truth.omega(p.firm[i] - 1, p.year[i] - 1);
  CHECK((r.m_tilde - cfg.truth.gamma_omega * omega).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.e_tilde - cfg.truth.delta_omega * omega).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.w_tilde - cfg.truth.zeta_omega * omega).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.y_tilde - omega).cwiseAbs().maxCoeff() < 1e-12);

  ParamVector zero;
  const Residuals r0 = residuals(c, zero);
  CHECK((r0.m_tilde - p.m).cwiseAbs().maxCoeff() == 0.0);

  ParamVector bad = zero;
  bad.h_m = VectorXd::Zero(2);
  CHECK_THROWS(residuals(c, bad));
}

TEST_CASE("default truth constants") {
  const ParamVector t = default_truth();
  CHECK(t.beta_m == 0.30);
  CHECK(t.gamma_omega == 2.2);
  CHECK(t.beta0 == 0.1);
  CHECK(t.beta_k == 0.2);
  CHECK(t.delta_omega == 2.0);
  CHECK(t.zeta_l == 0.70);
}

TEST_CASE("replicate_seed and simulate are deterministic") {
  CHECK(replicate_seed(42, 0) == replicate_seed(42, 0));
  CHECK(replicate_seed(42, 0) != replicate_seed(42, 1));
  DgpConfig cfg;
  cfg.n_firms = 10;
  cfg.t_obs = 8;
  cfg.seed = 99;
  std::ostringstream a, b;
  write_panel(a, simulate(cfg).panel);
  write_panel(b, simulate(cfg).panel);
  CHECK(a.str() == b.str());
  CHECK_THROWS(simulate([] {
    DgpConfig c;
    c.n_firms = 0;
    return c;
  }()));
}

TEST_CASE("simulated processes match their stationary moments") {
  DgpConfig cfg;
  cfg.n_firms = 400;
  cfg.t_obs = 50;
  cfg.seed = 5;
  const Simulation sim = simulate(cfg);
  const auto var = [](const MatrixXd& x) { return (x.array() - x.mean()).square().mean(); };
  CHECK(var(sim.truth.omega) == doctest::Approx(0.2 * 0.2 / (1 - 0.64)).epsilon(0.05));
  for (const MatrixXd* s : {&sim.truth.tau, &sim.truth.nu, &sim.truth.eta})
    CHECK(var(*s) == doctest::Approx(0.15 * 0.15).epsilon(0.05));
  CHECK(std::abs(corr(sim.truth.nu, sim.truth.eta)) < 0.03);
  CHECK(std::abs(corr(sim.truth.tau, sim.truth.omega)) < 0.03);

  // shock columns line up with panel rows
  const MatrixXd sh = shock_columns(sim.truth, sim.panel);
  const int i = 3 * 50 + 7;
  CHECK(sh(i, 0) == sim.truth.tau(3, 7));
  std::stringstream ts;
  write_truth(ts, sim);
  const MatrixXd back = load_truth_shocks(ts, sim.panel);
  CHECK((back - sh).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("labor follows the CES index structure") {
  DgpConfig cfg;
  cfg.n_firms = 300;
  cfg.t_obs = 40;
  const Simulation sim = simulate(cfg);
  const Panel& p = sim.panel;
  VectorXd omega(p.n_obs());
  for (int i = 0; i < p.n_obs(); ++i) omega[i] = sim.truth.omega(p.firm[i] - 1, p.year[i] - 1);
  const VectorXd v = ces_index(p.k, p.l, 0.4, 0.3);
  MatrixXd X(p.n_obs(), 2);
  X << VectorXd::Ones(p.n_obs()), v;
  const VectorXd b = X.colPivHouseholderQr().solve(omega);
  const VectorXd res = omega - X * b;
  const double se = std::sqrt(res.squaredNorm() / (p.n_obs() - 2) / (v.array() - v.mean()).square().sum());
  CHECK(b[1] / se > 5.0);
}

TEST_CASE("potential outcome selection rule") {
  DgpConfig cfg;
  cfg.dgp = DgpId::PotentialOutcome;
  cfg.n_firms = 50;
  cfg.t_obs = 20;
  const Simulation sim = simulate(cfg);
  const TruthRecord& t = sim.truth;
  for (int j = 0; j < 50; ++j)
    for (int s = 0; s < 20; ++s) {
      CHECK(t.d(j, s) == (t.omega0(j, s) > 0 ? 1.0 : 0.0));
      CHECK(t.omega(j, s) == (t.d(j, s) > 0 ? t.omega1(j, s) : t.omega0(j, s)));
    }
}

TEST_CASE("ci DGP shock correlation") {
  DgpConfig cfg;
  cfg.dgp = DgpId::CiViolation;
  cfg.n_firms = 400;
  cfg.t_obs = 50;
  cfg.rho_ew = 0.0;
  CHECK(std::abs(corr(simulate(cfg).truth.nu, simulate(cfg).truth.eta)) < 0.02);
  // each innovation loads rho_ew on the common factor, so the correlation is rho_ew squared
  cfg.rho_ew = 0.3;
  const Simulation s = simulate(cfg);
  CHECK(corr(s.truth.nu, s.truth.eta) == doctest::Approx(0.09).epsilon(0.25));
  CHECK(std::abs(corr(s.truth.tau, s.truth.nu)) < 0.03);
  cfg.rho_ew = 0.9;
  CHECK(corr(simulate(cfg).truth.nu, simulate(cfg).truth.eta) == doctest::Approx(0.81).epsilon(0.05));
}

TEST_CASE("parse_dgp") {
  CHECK(parse_dgp("ar2") == DgpId::AR2);
  CHECK(parse_dgp("po") == DgpId::PotentialOutcome);
  CHECK(dgp_name(DgpId::CiViolation) == "ci");
  CHECK_THROWS(parse_dgp("ar3"));
}
