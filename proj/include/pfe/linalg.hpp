#pragma once

#include <vector>

#include "pfe/panel.hpp"

namespace pfe {

VectorXd ols(const MatrixXd& X, const VectorXd& y);

// Complete polynomial in the given columns up to total degree; constant first when requested.
MatrixXd poly_features(const std::vector<VectorXd>& cols, int degree, bool with_constant);

struct OlsFit {
  VectorXd coef;
  VectorXd resid;
  MatrixXd vcov;  // firm-clustered sandwich
};

// groups: contiguous firm ranges over the rows of X; finite-sample factors omitted.
OlsFit ols_clustered(const MatrixXd& X, const VectorXd& y, const std::vector<FirmRange>& groups);

// Per-group time averages of the rows of G.
MatrixXd group_means(const MatrixXd& G, const std::vector<FirmRange>& groups);

// Inverse of a symmetric PSD matrix with a relative ridge fallback; sets *ridged when used.
MatrixXd sym_inverse(const MatrixXd& A, bool* ridged = nullptr);

}  // namespace pfe
