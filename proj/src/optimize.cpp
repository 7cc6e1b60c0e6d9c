#include "pfe/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pfe {

MatrixXd numerical_jacobian(const VecFn& fn, const VectorXd& x, double rel_step, double abs_floor) {
  const Eigen::Index p = x.size();
  MatrixXd J;
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double h = std::max(rel_step * std::abs(x[i]), abs_floor);
    xp[i] = x[i] + h;
    VectorXd fp = fn(xp);
    xp[i] = x[i] - h;
    VectorXd fm = fn(xp);
    xp[i] = x[i];
    if (i == 0) J.resize(fp.size(), p);
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

OptimResult levenberg_marquardt(const VecFn& r, const VectorXd& x0, const OptimOptions& opt) {
  OptimResult res;
  VectorXd x = x0;
  VectorXd rx = r(x);
  double f = rx.squaredNorm();
  double lambda = 1e-3;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (!std::isfinite(f)) break;
    MatrixXd J = numerical_jacobian(r, x);
    MatrixXd A = J.transpose() * J;
    VectorXd g = J.transpose() * rx;
    if (g.lpNorm<Eigen::Infinity>() < 1e-30) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      MatrixXd Ad = A;
      Ad.diagonal() += lambda * A.diagonal().cwiseMax(1e-12);
      VectorXd step = Ad.ldlt().solve(-g);
      VectorXd xn = x + step;
      VectorXd rn = r(xn);
      double fn = rn.squaredNorm();
      if (std::isfinite(fn) && fn < f) {
        const double improve = f - fn;
        const double dx = step.lpNorm<Eigen::Infinity>() / (1.0 + x.lpNorm<Eigen::Infinity>());
        x = xn;
        rx = rn;
        f = fn;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if ((improve < opt.f_tol * (1.0 + f) && dx < opt.x_tol) || f < 1e-28) res.converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e16) break;
    }
    if (!accepted) {
      // no descent direction left: stationary point up to finite-difference noise
      res.converged = g.lpNorm<Eigen::Infinity>() < 1e-8 * (1.0 + f);
      break;
    }
    if (res.converged) break;
  }
  res.x = x;
  res.f = f;
  res.iterations = it + 1;
  return res;
}

OptimResult nelder_mead(const ScalarFn& f, const VectorXd& x0, double init_step, const OptimOptions& opt) {
  const Eigen::Index n = x0.size();
  std::vector<VectorXd> pts(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    double h = init_step * std::max(1.0, std::abs(x0[i]));
    pts[i + 1][i] += h;
  }
  for (Eigen::Index i = 0; i <= n; ++i) fv[i] = f(pts[i]);
  std::vector<int> ord(n + 1);
  OptimResult res;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    const int best = ord[0], worst = ord[n], second = ord[n - 1];
    double size = 0;
    for (Eigen::Index i = 1; i <= n; ++i)
      size = std::max(size, (pts[ord[i]] - pts[best]).lpNorm<Eigen::Infinity>());
    if (std::abs(fv[worst] - fv[best]) < opt.f_tol * (1.0 + std::abs(fv[best])) && size < opt.x_tol) {
      res.converged = true;
      break;
    }
    VectorXd cen = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) cen += pts[ord[i]];
    cen /= static_cast<double>(n);
    VectorXd xr = cen + (cen - pts[worst]);
    double fr = f(xr);
    if (fr < fv[best]) {
      VectorXd xe = cen + 2.0 * (cen - pts[worst]);
      double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe, fv[worst] = fe;
      } else {
        pts[worst] = xr, fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      pts[worst] = xr, fv[worst] = fr;
    } else {
      bool outside = fr < fv[worst];
      VectorXd xc = outside ? VectorXd(cen + 0.5 * (xr - cen)) : VectorXd(cen + 0.5 * (pts[worst] - cen));
      double fc = f(xc);
      if (fc < (outside ? fr : fv[worst])) {
        pts[worst] = xc, fv[worst] = fc;
      } else {
        for (Eigen::Index i = 1; i <= n; ++i) {
          int j = ord[i];
          pts[j] = pts[best] + 0.5 * (pts[j] - pts[best]);
          fv[j] = f(pts[j]);
        }
      }
    }
  }
  int b = static_cast<int>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  res.x = pts[b];
  res.f = fv[b];
  res.iterations = it;
  return res;
}

}  // namespace pfe
