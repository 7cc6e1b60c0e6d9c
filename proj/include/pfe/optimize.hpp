#pragma once

#include <functional>

#include "pfe/panel.hpp"

namespace pfe {

using VecFn = std::function<VectorXd(const VectorXd&)>;
using ScalarFn = std::function<double(const VectorXd&)>;

// Central differences; step per coordinate is max(rel_step * |x_i|, abs_floor).
MatrixXd numerical_jacobian(const VecFn& fn, const VectorXd& x, double rel_step = 1e-6, double abs_floor = 1e-8);

struct OptimOptions {
  int max_iter = 2000;
  double f_tol = 1e-10;  // objective improvement
  double x_tol = 1e-8;   // parameter step
};

struct OptimResult {
  VectorXd x;
  double f = 0;
  int iterations = 0;
  bool converged = false;
};

// Minimizes |r(x)|^2 by Levenberg-Marquardt with a finite-difference Jacobian.
OptimResult levenberg_marquardt(const VecFn& r, const VectorXd& x0, const OptimOptions& opt = {});

// Nelder-Mead simplex with the usual (1, 2, 0.5, 0.5) coefficients.
OptimResult nelder_mead(const ScalarFn& f, const VectorXd& x0, double init_step, const OptimOptions& opt = {});

}  // namespace pfe
