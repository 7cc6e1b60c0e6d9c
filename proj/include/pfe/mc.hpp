#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfe/dgp.hpp"
#include "pfe/proposed.hpp"

namespace pfe {

enum class McPart { Part1, Part2 };

struct McConfig {
  std::vector<std::string> dgps = {"ar1"};
  std::vector<std::string> methods = {"proposed"};
  std::optional<std::vector<int>> n_grid, t_grid;  // Part2 defaults to (200, 50), Part1 to (500, 50)
  int reps = 100;
  std::uint64_t base_seed = 20240101;
  McPart part = McPart::Part1;
  std::vector<double> rho_ew_grid = {0.0};  // used by the ci DGP only
  std::map<std::string, double> truth_overrides;
  bool h_linear = false;
  bool exclusion_test = false;
  int h_degree = 3;
  int acf_degree = 3;
  // Block C grid. Absent: the true (rho_v, alpha) alone, or default_grid() when profile_grid is set.
  std::optional<Grid> grid;
  bool profile_grid = false;

  std::vector<int> resolved_n() const;
  std::vector<int> resolved_t() const;
};

McConfig mc_config_from_json(const std::string& text);

struct McCell {
  std::string dgp;  // "ci:<rho_ew>" for the ci DGP
  DgpId id = DgpId::AR1;
  double rho_ew = 0;
  int n = 0, t = 0;
};

// One estimator on one replication.
struct RepRecord {
  int cell = 0, rep = 0;
  std::string method;
  bool converged = false;
  std::map<std::string, double> estimates;
  std::map<std::string, double> extras;  // wald_p, weak, j_stat, ...
  std::string error;
};

struct McRow {
  std::string dgp, method, parameter;
  int n = 0, t = 0;
  double truth = 0, bias = 0, sd = 0, rmse = 0;
  int n_converged = 0, n_failed = 0;
  bool flagged = false;
};

struct McTable {
  std::vector<McRow> rows;
  std::vector<McCell> cells;
  std::vector<RepRecord> records;
};

std::vector<McCell> mc_cells(const McConfig& cfg);
DgpConfig cell_dgp_config(const McConfig& cfg, const McCell& cell, int rep);
std::vector<RepRecord> run_replication(const McConfig& cfg, const McCell& cell, int cell_index, int rep);

// jobs <= 0 uses the hardware concurrency.
McTable run_mc(const McConfig& cfg, int jobs = 1);

// Aggregates records into rows; non-converged replications are excluded and counted.
std::vector<McRow> aggregate(const McConfig& cfg, const std::vector<McCell>& cells, const std::vector<RepRecord>& recs);

// bias, sample sd and population rmse of estimates around truth
struct Moments {
  double bias = 0, sd = 0, rmse = 0;
};
Moments summarize(const std::vector<double>& est, double truth);

void emit_table(const McTable& t, const std::string& format, std::ostream& out);
void emit_records(const McTable& t, std::ostream& out);

}  // namespace pfe
