#include "pfe/linalg.hpp"

#include <functional>

namespace pfe {

VectorXd ols(const MatrixXd& X, const VectorXd& y) { return X.colPivHouseholderQr().solve(y); }

MatrixXd poly_features(const std::vector<VectorXd>& cols, int degree, bool with_constant) {
  const int nv = static_cast<int>(cols.size());
  const Eigen::Index n = nv ? cols[0].size() : 0;
  std::vector<VectorXd> out;
  if (with_constant) out.push_back(VectorXd::Ones(n));
  for (int deg = 1; deg <= degree && nv > 0; ++deg) {
    std::vector<int> ix(deg, 0);
    while (true) {
      VectorXd c = cols[ix[0]];
      for (int q = 1; q < deg; ++q) c.array() *= cols[ix[q]].array();
      out.push_back(std::move(c));
      int pos = deg - 1;
      while (pos >= 0 && ix[pos] == nv - 1) --pos;
      if (pos < 0) break;
      ++ix[pos];
      for (int q = pos + 1; q < deg; ++q) ix[q] = ix[pos];
    }
  }
  MatrixXd X(n, static_cast<Eigen::Index>(out.size()));
  for (int j = 0; j < X.cols(); ++j) X.col(j) = out[j];
  return X;
}

MatrixXd group_means(const MatrixXd& G, const std::vector<FirmRange>& groups) {
  MatrixXd out(static_cast<Eigen::Index>(groups.size()), G.cols());
  for (size_t g = 0; g < groups.size(); ++g)
    out.row(g) = G.middleRows(groups[g].start, groups[g].len).colwise().sum() / groups[g].len;
  return out;
}

OlsFit ols_clustered(const MatrixXd& X, const VectorXd& y, const std::vector<FirmRange>& groups) {
  OlsFit f;
  f.coef = ols(X, y);
  f.resid = y - X * f.coef;
  MatrixXd bread = (X.transpose() * X).inverse();
  MatrixXd meat = MatrixXd::Zero(X.cols(), X.cols());
  for (const auto& g : groups) {
    VectorXd s = X.middleRows(g.start, g.len).transpose() * f.resid.segment(g.start, g.len);
    meat.noalias() += s * s.transpose();
  }
  f.vcov = bread * meat * bread;
  return f;
}

MatrixXd sym_inverse(const MatrixXd& A, bool* ridged) {
  if (ridged) *ridged = false;
  Eigen::LDLT<MatrixXd> ldlt(A);
  const double scale = A.trace() / std::max<Eigen::Index>(A.rows(), 1);
  VectorXd dg = ldlt.vectorD();
  bool bad = ldlt.info() != Eigen::Success || dg.minCoeff() <= 1e-13 * std::abs(dg.maxCoeff());
  if (!bad) return ldlt.solve(MatrixXd::Identity(A.rows(), A.cols()));
  if (ridged) *ridged = true;
  MatrixXd B = A + 1e-10 * scale * MatrixXd::Identity(A.rows(), A.cols());
  return B.ldlt().solve(MatrixXd::Identity(A.rows(), A.cols()));
}

}  // namespace pfe
