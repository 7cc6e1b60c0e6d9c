#include "pfe/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace pfe {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, int row, const std::string& col) {
  double v = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && *b == ' ') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v))
    throw DataError("row " + std::to_string(row) + ": non-finite or unparsable value in column '" + col + "'");
  return v;
}

bool is_z_header(const std::string& h) {
  if (h.size() < 2 || h[0] != 'z') return false;
  return std::all_of(h.begin() + 1, h.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

std::vector<FirmRange> Panel::firms() const {
  std::vector<FirmRange> out;
  const int n = n_obs();
  int s = 0;
  for (int i = 1; i <= n; ++i) {
    if (i == n || firm[i] != firm[s]) {
      out.push_back({s, i - s});
      s = i;
    }
  }
  return out;
}

int ParamVector::flat_size() const {
  return 17 + static_cast<int>(rho.size() + h_m.size() + h_e.size() + h_w.size());
}

VectorXd ParamVector::flat() const {
  VectorXd v(flat_size());
  v.head(17) << beta_k, beta_l, beta_m, beta_e, beta_w, gamma_k, gamma_l, delta_k, delta_l, zeta_k, zeta_l,
      gamma_omega, delta_omega, zeta_omega, alpha, rho_v, beta0;
  int o = 17;
  for (const VectorXd* x : {&rho, &h_m, &h_e, &h_w}) {
    v.segment(o, x->size()) = *x;
    o += static_cast<int>(x->size());
  }
  return v;
}

void ParamVector::set_flat(const VectorXd& v) {
  if (v.size() != flat_size()) throw std::invalid_argument("ParamVector::set_flat: size mismatch");
  double* f[17] = {&beta_k, &beta_l, &beta_m, &beta_e, &beta_w, &gamma_k, &gamma_l, &delta_k, &delta_l,
                   &zeta_k, &zeta_l, &gamma_omega, &delta_omega, &zeta_omega, &alpha, &rho_v, &beta0};
  for (int i = 0; i < 17; ++i) *f[i] = v[i];
  int o = 17;
  for (VectorXd* x : {&rho, &h_m, &h_e, &h_w}) {
    *x = v.segment(o, x->size());
    o += static_cast<int>(x->size());
  }
}

std::vector<std::string> ParamVector::flat_names() const {
  std::vector<std::string> n = {"beta_k",  "beta_l",  "beta_m",      "beta_e",      "beta_w",     "gamma_k",
                                "gamma_l", "delta_k", "delta_l",     "zeta_k",      "zeta_l",     "gamma_omega",
                                "delta_omega", "zeta_omega", "alpha", "rho_v", "beta0"};
  for (int i = 0; i < rho.size(); ++i) n.push_back("rho" + std::to_string(i + 1));
  for (int i = 0; i < h_m.size(); ++i) n.push_back("h_m" + std::to_string(i + 1));
  for (int i = 0; i < h_e.size(); ++i) n.push_back("h_e" + std::to_string(i + 1));
  for (int i = 0; i < h_w.size(); ++i) n.push_back("h_w" + std::to_string(i + 1));
  return n;
}

int ParamVector::index_of(const std::string& name) const {
  auto names = flat_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return static_cast<int>(it - names.begin());
}

Panel sorted(const Panel& p) {
  const int n = p.n_obs();
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return p.firm[a] != p.firm[b] ? p.firm[a] < p.firm[b] : p.year[a] < p.year[b];
  });
  for (int i = 1; i < n; ++i)
    if (p.firm[idx[i]] == p.firm[idx[i - 1]] && p.year[idx[i]] == p.year[idx[i - 1]])
      throw DataError("duplicate (firm, year) = (" + std::to_string(p.firm[idx[i]]) + ", " +
                      std::to_string(p.year[idx[i]]) + ")");
  Panel q;
  q.firm.resize(n);
  q.year.resize(n);
  q.y.resize(n), q.k.resize(n), q.l.resize(n), q.m.resize(n), q.e.resize(n), q.w.resize(n);
  q.z.resize(n, p.z.cols());
  q.z_names = p.z_names;
  if (p.d) q.d = VectorXd(n);
  for (int i = 0; i < n; ++i) {
    int j = idx[i];
    q.firm[i] = p.firm[j];
    q.year[i] = p.year[j];
    q.y[i] = p.y[j], q.k[i] = p.k[j], q.l[i] = p.l[j], q.m[i] = p.m[j], q.e[i] = p.e[j], q.w[i] = p.w[j];
    if (p.z.cols()) q.z.row(i) = p.z.row(j);
    if (p.d) (*q.d)[i] = (*p.d)[j];
  }
  return q;
}

Panel load_panel(std::istream& in, const std::map<std::string, std::string>& schema) {
  auto header_for = [&](const std::string& logical) {
    auto it = schema.find(logical);
    return it == schema.end() ? logical : it->second;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: no header row");
  auto header = split_csv(line);
  auto col = [&](const std::string& logical, bool required) -> int {
    const std::string h = header_for(logical);
    auto it = std::find(header.begin(), header.end(), h);
    if (it == header.end()) {
      if (required) throw DataError("missing column '" + h + "'");
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const char* req[] = {"firm", "year", "y", "k", "l", "m", "e", "w"};
  int ci[8];
  for (int i = 0; i < 8; ++i) ci[i] = col(req[i], true);
  int cd = col("d", false);
  std::vector<int> cz;
  Panel p;
  for (int j = 0; j < static_cast<int>(header.size()); ++j)
    if (is_z_header(header[j])) {
      cz.push_back(j);
      p.z_names.push_back(header[j]);
    }

  std::vector<std::array<double, 8>> rows;
  std::vector<double> dv;
  std::vector<std::vector<double>> zv;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv(line);
    if (f.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields");
    std::array<double, 8> r{};
    for (int i = 0; i < 8; ++i) r[i] = parse_number(f[ci[i]], row, header[ci[i]]);
    rows.push_back(r);
    if (cd >= 0) dv.push_back(parse_number(f[cd], row, header[cd]));
    std::vector<double> zr;
    for (int j : cz) zr.push_back(parse_number(f[j], row, header[j]));
    zv.push_back(std::move(zr));
  }
  const int n = static_cast<int>(rows.size());
  p.firm.resize(n);
  p.year.resize(n);
  p.y.resize(n), p.k.resize(n), p.l.resize(n), p.m.resize(n), p.e.resize(n), p.w.resize(n);
  p.z.resize(n, static_cast<int>(cz.size()));
  for (int i = 0; i < n; ++i) {
    p.firm[i] = static_cast<int>(rows[i][0]);
    p.year[i] = static_cast<int>(rows[i][1]);
    p.y[i] = rows[i][2], p.k[i] = rows[i][3], p.l[i] = rows[i][4];
    p.m[i] = rows[i][5], p.e[i] = rows[i][6], p.w[i] = rows[i][7];
    for (int j = 0; j < static_cast<int>(cz.size()); ++j) p.z(i, j) = zv[i][j];
  }
  if (cd >= 0) p.d = Eigen::Map<VectorXd>(dv.data(), n);
  return sorted(p);
}

Panel load_panel_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open '" + path + "'");
  return load_panel(f);
}

void write_panel(std::ostream& out, const Panel& p) {
  out << "firm,year,y,k,l,m,e,w";
  for (const auto& n : p.z_names) out << ',' << n;
  if (p.d) out << ",d";
  out << '\n';
  out << std::setprecision(17);
  for (int i = 0; i < p.n_obs(); ++i) {
    out << p.firm[i] << ',' << p.year[i] << ',' << p.y[i] << ',' << p.k[i] << ',' << p.l[i] << ',' << p.m[i]
        << ',' << p.e[i] << ',' << p.w[i];
    for (int j = 0; j < p.z.cols(); ++j) out << ',' << p.z(i, j);
    if (p.d) out << ',' << (*p.d)[i];
    out << '\n';
  }
}

MatrixXd nuisance_basis(const MatrixXd& z, int degree) {
  if (degree < 1) throw std::invalid_argument("nuisance_basis: degree must be >= 1");
  const int dz = static_cast<int>(z.cols());
  std::vector<VectorXd> cols;
  // monomials by total degree, exponents enumerated as nondecreasing index tuples
  for (int deg = 1; deg <= degree && dz > 0; ++deg) {
    std::vector<int> ix(deg, 0);
    while (true) {
      VectorXd c = VectorXd::Ones(z.rows());
      for (int v : ix) c.array() *= z.col(v).array();
      cols.push_back(c);
      int pos = deg - 1;
      while (pos >= 0 && ix[pos] == dz - 1) --pos;
      if (pos < 0) break;
      ++ix[pos];
      for (int q = pos + 1; q < deg; ++q) ix[q] = ix[pos];
    }
  }
  MatrixXd b(z.rows(), static_cast<int>(cols.size()));
  for (int j = 0; j < b.cols(); ++j) b.col(j) = cols[j];
  return b;
}

CenteredPanel demean(const Panel& p, int basis_degree) {
  if (p.n_obs() == 0) throw DataError("demean: empty panel");
  CenteredPanel c;
  c.data = p;
  auto ctr = [](VectorXd& v) {
    double mu = v.mean();
    v.array() -= mu;
    return mu;
  };
  c.y_bar = ctr(c.data.y);
  c.k_bar = ctr(c.data.k);
  c.l_bar = ctr(c.data.l);
  c.m_bar = ctr(c.data.m);
  c.e_bar = ctr(c.data.e);
  c.w_bar = ctr(c.data.w);
  c.z_bar = p.z.colwise().mean().transpose();
  if (p.z.cols()) {
    c.data.z.rowwise() -= c.z_bar.transpose();
    c.basis = nuisance_basis(c.data.z, basis_degree);
    c.basis.rowwise() -= c.basis.colwise().mean();
  } else {
    c.basis.resize(p.n_obs(), 0);
  }
  c.groups = p.firms();
  return c;
}

Residuals residuals(const CenteredPanel& p, const ParamVector& th, bool normalize_kl) {
  const Panel& d = p.data;
  const int nb = static_cast<int>(p.basis.cols());
  if (th.h_m.size() != nb || th.h_e.size() != nb || th.h_w.size() != nb)
    throw std::invalid_argument("residuals: h_coeffs length does not match basis dimension");
  Residuals r;
  r.m_tilde = d.m - th.gamma_k * d.k - th.gamma_l * d.l;
  r.e_tilde = d.e - th.delta_k * d.k - th.delta_l * d.l;
  r.w_tilde = d.w - th.zeta_k * d.k - th.zeta_l * d.l;
  if (nb) {
    r.m_tilde -= p.basis * th.h_m;
    r.e_tilde -= p.basis * th.h_e;
    r.w_tilde -= p.basis * th.h_w;
  }
  r.y_tilde = d.y - th.beta_m * d.m - th.beta_e * d.e - th.beta_w * d.w;
  if (!normalize_kl) r.y_tilde -= th.beta_k * d.k + th.beta_l * d.l;
  return r;
}

}  // namespace pfe
