#pragma once

#include <Eigen/Dense>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FirmRange {
  int start;
  int len;
};

// Rows are firm-major, year-ascending.
struct Panel {
  std::vector<int> firm, year;
  VectorXd y, k, l, m, e, w;
  MatrixXd z;  // n x d_z
  std::vector<std::string> z_names;
  std::optional<VectorXd> d;

  int n_obs() const { return static_cast<int>(y.size()); }
  int d_z() const { return static_cast<int>(z.cols()); }
  std::vector<FirmRange> firms() const;
  int n_firms() const { return static_cast<int>(firms().size()); }
};

struct CenteredPanel {
  Panel data;
  double y_bar = 0, k_bar = 0, l_bar = 0, m_bar = 0, e_bar = 0, w_bar = 0;
  VectorXd z_bar;
  MatrixXd basis;  // nuisance basis built from z, centered
  std::vector<FirmRange> groups;

  int n_obs() const { return data.n_obs(); }
  int n_firms() const { return static_cast<int>(groups.size()); }
};

struct ParamVector {
  double beta_k = 0, beta_l = 0, beta_m = 0, beta_e = 0, beta_w = 0;
  double gamma_k = 0, gamma_l = 0, delta_k = 0, delta_l = 0, zeta_k = 0, zeta_l = 0;
  double gamma_omega = 1, delta_omega = 1, zeta_omega = 1;
  double alpha = 0.5, rho_v = 0;
  double beta0 = 0;
  VectorXd rho;  // curvature loadings rho_1..rho_degree
  VectorXd h_m, h_e, h_w;

  int flat_size() const;
  VectorXd flat() const;
  void set_flat(const VectorXd& v);
  std::vector<std::string> flat_names() const;
  int index_of(const std::string& name) const;
};

struct Residuals {
  VectorXd m_tilde, e_tilde, w_tilde, y_tilde;
};

// schema maps logical names (firm, year, y, k, l, m, e, w, d) to header names;
// columns named z* or listed under "z" are read as controls.
Panel load_panel(std::istream& in, const std::map<std::string, std::string>& schema = {});
Panel load_panel_file(const std::string& path);
void write_panel(std::ostream& out, const Panel& p);

CenteredPanel demean(const Panel& p, int basis_degree = 2);
MatrixXd nuisance_basis(const MatrixXd& z, int degree);
Residuals residuals(const CenteredPanel& p, const ParamVector& th, bool normalize_kl = true);

// Panel with rows sorted firm-major then by year; throws on duplicate (firm, year).
Panel sorted(const Panel& p);

}  // namespace pfe
