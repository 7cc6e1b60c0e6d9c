#include "pfe/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "pfe/linalg.hpp"

namespace pfe {

std::string input_name(InputId h) {
  switch (h) {
    case InputId::M: return "m";
    case InputId::E: return "e";
    case InputId::W: return "w";
  }
  return "?";
}

Loadings input_loadings(const ParamVector& th, InputId h) {
  switch (h) {
    case InputId::M: return {th.gamma_k, th.gamma_l, th.gamma_omega};
    case InputId::E: return {th.delta_k, th.delta_l, th.delta_omega};
    case InputId::W: return {th.zeta_k, th.zeta_l, th.zeta_omega};
  }
  return {};
}

double pair_dk(const ParamVector& th, InputId first, InputId second) {
  const Loadings a = input_loadings(th, first), b = input_loadings(th, second);
  return b.a_k / b.a_omega - a.a_k / a.a_omega;
}

double pair_dl(const ParamVector& th, InputId first, InputId second) {
  const Loadings a = input_loadings(th, first), b = input_loadings(th, second);
  return b.a_l / b.a_omega - a.a_l / a.a_omega;
}

namespace {

const VectorXd& input_column(const Panel& d, InputId h) {
  switch (h) {
    case InputId::M: return d.m;
    case InputId::E: return d.e;
    case InputId::W: return d.w;
  }
  return d.m;
}

const VectorXd& nuisance_coeffs(const ParamVector& th, InputId h) {
  switch (h) {
    case InputId::M: return th.h_m;
    case InputId::E: return th.h_e;
    case InputId::W: return th.h_w;
  }
  return th.h_m;
}

// omega proxy from input h after removing the nuisance part and, optionally, the k or l slope
VectorXd proxy(const CenteredPanel& p, const ParamVector& th, InputId h, bool drop_k, bool drop_l) {
  const Loadings a = input_loadings(th, h);
  if (std::abs(a.a_omega) < 1e-6) throw DegenerateError("productivity loading of input " + input_name(h) + " is near zero");
  VectorXd x = input_column(p.data, h);
  const VectorXd& hc = nuisance_coeffs(th, h);
  if (p.basis.cols() > 0) x -= p.basis * hc;
  if (drop_k) x -= a.a_k * p.data.k;
  if (drop_l) x -= a.a_l * p.data.l;
  return x / a.a_omega;
}

OlsFit kl_regression(const CenteredPanel& p, const VectorXd& lhs) {
  MatrixXd X(p.n_obs(), 3);
  X.col(0).setOnes();
  X.col(1) = p.data.k;
  X.col(2) = p.data.l;
  return ols_clustered(X, lhs, p.groups);
}

}  // namespace

ExclusionRecovery exclusion_recovery(const CenteredPanel& p, const BlockAbFit& ab, ExclusionCase which,
                                     const ProxyAssignment& assign) {
  const ParamVector& th = ab.theta;
  const VectorXd ytil = p.data.y - th.beta_m * p.data.m - th.beta_e * p.data.e - th.beta_w * p.data.w;
  ExclusionRecovery out;

  if (which == ExclusionCase::Joint) {
    for (InputId h : {InputId::M, InputId::E, InputId::W}) {
      const OlsFit f = kl_regression(p, ytil - proxy(p, th, h, false, false));
      out.per_input.push_back({h, f.coef[1], f.coef[2], std::sqrt(f.vcov(1, 1)), std::sqrt(f.vcov(2, 2))});
    }
  } else {
    if (assign.for_k == assign.for_l) throw std::invalid_argument("marginal exclusion needs two distinct inputs");
    const OlsFit fk = kl_regression(p, ytil - proxy(p, th, assign.for_k, false, true));
    const OlsFit fl = kl_regression(p, ytil - proxy(p, th, assign.for_l, true, false));
    out.per_input.push_back({assign.for_k, fk.coef[1], fl.coef[2], std::sqrt(fk.vcov(1, 1)), std::sqrt(fl.vcov(2, 2))});
  }

  const std::array<std::pair<InputId, InputId>, 3> pairs = {
      {{InputId::M, InputId::E}, {InputId::M, InputId::W}, {InputId::E, InputId::W}}};
  auto all_d = [&](const ParamVector& t) {
    VectorXd v(8);
    for (int i = 0; i < 3; ++i) {
      v[2 * i] = pair_dk(t, pairs[i].first, pairs[i].second);
      v[2 * i + 1] = pair_dl(t, pairs[i].first, pairs[i].second);
    }
    v[6] = pair_dk(t, assign.wald_k_first, assign.wald_k_second);
    v[7] = pair_dl(t, assign.wald_l_first, assign.wald_l_second);
    return v;
  };
  const DeltaResult dr = delta_method(all_d, ab.gmm);
  for (int i = 0; i < 3; ++i)
    out.pairs.push_back({pairs[i].first, pairs[i].second, dr.values[2 * i], dr.values[2 * i + 1], dr.ses[2 * i],
                         dr.ses[2 * i + 1]});

  const VectorXd d = dr.values.tail(2);
  const MatrixXd V = dr.vcov.bottomRightCorner(2, 2);
  out.wald_stat = d.dot(sym_inverse(V) * d);
  out.wald_df = 2;
  out.wald_p = std::exp(-0.5 * out.wald_stat);
  return out;
}

namespace {

// Sweeps firm and year means from every column by alternating projections.
void two_way_within(MatrixXd& A, const std::vector<FirmRange>& firms, const std::vector<int>& year_idx, int n_years) {
  const Eigen::Index n = A.rows();
  VectorXd year_count = VectorXd::Zero(n_years);
  for (Eigen::Index i = 0; i < n; ++i) year_count[year_idx[i]] += 1;
  for (int it = 0; it < 10000; ++it) {
    double change = 0;
    for (const auto& g : firms) {
      Eigen::RowVectorXd mu = A.middleRows(g.start, g.len).colwise().mean();
      A.middleRows(g.start, g.len).rowwise() -= mu;
      change = std::max(change, mu.cwiseAbs().maxCoeff());
    }
    MatrixXd ym = MatrixXd::Zero(n_years, A.cols());
    for (Eigen::Index i = 0; i < n; ++i) ym.row(year_idx[i]) += A.row(i);
    for (int s = 0; s < n_years; ++s) ym.row(s) /= year_count[s];
    for (Eigen::Index i = 0; i < n; ++i) A.row(i) -= ym.row(year_idx[i]);
    change = std::max(change, ym.cwiseAbs().maxCoeff());
    if (change < 1e-13) return;
  }
}

}  // namespace

DidResult did_att(const VectorXd& omega_hat, const Panel& p, int treat_start, int controls_poly_degree) {
  if (!p.d) throw DataError("did_att: panel has no treatment column");
  if (omega_hat.size() != p.n_obs()) throw std::invalid_argument("did_att: productivity length does not match panel");
  const auto firms = p.firms();
  const VectorXd& d = *p.d;

  std::map<int, int> years;
  for (int y : p.year) years.emplace(y, 0);
  int ny = 0;
  for (auto& [y, idx] : years) idx = ny++;
  std::vector<int> yidx(p.n_obs());
  for (int i = 0; i < p.n_obs(); ++i) yidx[i] = years[p.year[i]];

  DidResult res;
  std::vector<bool> treated_firm(firms.size(), false);
  VectorXd D(p.n_obs());
  for (size_t g = 0; g < firms.size(); ++g) {
    const auto [st, len] = firms[g];
    treated_firm[g] = d.segment(st, len).maxCoeff() > 0.5;
    for (int i = st; i < st + len; ++i)
      D[i] = treat_start > 0 ? (treated_firm[g] && p.year[i] >= treat_start ? 1.0 : 0.0) : d[i];
  }
  for (size_t g = 0; g < firms.size(); ++g) {
    const auto [st, len] = firms[g];
    const bool ever = D.segment(st, len).maxCoeff() > 0.5;
    (ever ? res.n_treated_firms : res.n_control_firms) += 1;
  }
  if (res.n_treated_firms == 0) throw DataError("did_att: no treated firms");
  if (res.n_control_firms == 0 && treat_start > 0) throw DataError("did_att: no control firms");

  MatrixXd C;
  if (controls_poly_degree > 0) {
    C = poly_features({p.k, p.l}, controls_poly_degree, false);
    res.used_poly_kl = true;
  }
  auto fit = [&](const MatrixXd& R) {
    MatrixXd A(p.n_obs(), 1 + R.cols() + C.cols());
    A.col(0) = omega_hat;
    A.middleCols(1, R.cols()) = R;
    if (C.cols() > 0) A.rightCols(C.cols()) = C;
    two_way_within(A, firms, yidx, ny);
    return ols_clustered(A.rightCols(A.cols() - 1), A.col(0), firms);
  };

  const OlsFit main = fit(D);
  res.att_hat = main.coef[0];
  res.se = std::sqrt(std::max(main.vcov(0, 0), 0.0));

  if (treat_start > 0) {
    // event-time dummies for treated firms, reference year treat_start - 1
    std::vector<int> lead_years;
    for (const auto& [y, idx] : years)
      if (y != treat_start - 1) lead_years.push_back(y);
    MatrixXd E = MatrixXd::Zero(p.n_obs(), static_cast<Eigen::Index>(lead_years.size()));
    for (size_t g = 0; g < firms.size(); ++g) {
      if (!treated_firm[g]) continue;
      const auto [st, len] = firms[g];
      for (int i = st; i < st + len; ++i)
        for (size_t c = 0; c < lead_years.size(); ++c)
          if (p.year[i] == lead_years[c]) E(i, c) = 1.0;
    }
    const OlsFit es = fit(E);
    for (size_t c = 0; c < lead_years.size(); ++c)
      if (lead_years[c] < treat_start - 1) res.pre_trend_max = std::max(res.pre_trend_max, std::abs(es.coef[c]));
  }
  return res;
}

BlockCStrength blockc_strength(const BlockCFit& fit) {
  BlockCStrength s;
  const int deg = static_cast<int>(fit.theta.rho.size());
  s.rho = fit.theta.rho;
  s.rho_se = VectorXd::Zero(deg);
  s.t_stats = VectorXd::Zero(deg);
  for (int i = 0; i < deg; ++i) {
    s.rho_se[i] = fit.gmm.se("rho" + std::to_string(i + 1));
    s.t_stats[i] = s.rho_se[i] > 0 ? s.rho[i] / s.rho_se[i] : 0.0;
  }
  s.weak = true;
  for (int i = 1; i < std::min(deg, 3); ++i) s.weak = s.weak && std::abs(s.t_stats[i]) < 1.96;
  s.profile = fit.profile_grid;
  return s;
}

}  // namespace pfe
