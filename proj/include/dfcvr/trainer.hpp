#pragma once

// Decision-focused training of the linear forecast models: the master
// problem over shared coefficients and per-scenario schedules, hybrid
// (finite-difference + dual) sensitivity cuts and the L-shaped loop.

#include <iosfwd>
#include <string>
#include <vector>

#include "dfcvr/forecast.hpp"
#include "dfcvr/mip.hpp"
#include "dfcvr/stages.hpp"

namespace dfcvr {

// One historical day.
struct Scenario {
  int id = 0;
  double weight = 1.0;    // p_s
  SiteSeries features;    // [site][t], one site per PV unit
  Matrix pv_actual;       // [pv][t], p.u.
  LoadProfile loads;
};

// Positive weights summing to one, consistent dimensions. Throws DataError.
void validate_scenarios(const GridCase& gc, const std::vector<Scenario>& scenarios);

// Continuous device representation r: OLTC secondary voltage per hour
// (V_base + tap dV) followed by each CB's injection per hour (step dq).
std::vector<double> device_repr(const Schedule& s, const DeviceFleet& fleet);

// theta_s >= q_value + pi_x'(r - anchor_r) + pi_p'(ust - anchor_ust).
// `ust` is flattened [pv][t].
struct Cut {
  int scenario = 0;  // index into the scenario list
  std::vector<double> anchor_r, anchor_ust;
  double q_value = 0.0;
  std::vector<double> pi_x, pi_p;

  double rhs(const std::vector<double>& r, const std::vector<double>& ust) const;
};

// Throws DataError on mismatched dimensions or non-finite input.
Cut make_cut(double q_value, std::vector<double> pi_x, std::vector<double> pi_p,
             std::vector<double> anchor_r, std::vector<double> anchor_ust, int scenario);

std::vector<double> flatten(const Matrix& m);

// ---------------------------------------------------------------- recourse

struct Recourse {
  Dispatch dispatch;  // soft-limit Stage 2
  RealTimeState rt;
  double q = 0.0;     // rt.recourse
};

// Stage 2 with voltage slacks (always feasible) followed by Stage 3.
Recourse evaluate_recourse(const GridCase& gc, const Scenario& sc, const Schedule& schedule,
                           const Matrix& forecast_ust, const SolverOptions& socp = {});

struct SensitivityInfo {
  std::vector<double> q_perturbed;  // Q at the perturbed point, per coordinate
  std::vector<double> delta_r;      // signed r-space step used
  std::vector<int> stuck;           // coordinates with no admissible neighbour
};

// Forward difference in each (device, hour) level, backward at the upper
// bound. Switching indicators follow the perturbed levels; budgets are not
// enforced. Slopes are per unit of r.
std::vector<double> discrete_sensitivity(const GridCase& gc, const Scenario& sc,
                                         const Schedule& schedule, const Matrix& forecast_ust,
                                         const Recourse& base, SensitivityInfo* info = nullptr,
                                         const SolverOptions& socp = {});

// Balance duals of Stage 2, flattened [pv][t]. Throws SolverError when the
// dispatch did not solve.
std::vector<double> forecast_sensitivity(const Dispatch& d);

// ---------------------------------------------------------------- master

struct MasterOptions {
  double gamma_da = 0.1;
  double gamma_ust = 0.1;
  double radius = 1.0;  // infinity-norm box around the center coefficients
  double theta_floor = 0.0;
  bool soft_stage1 = false;
  // Device levels stay within step_radius of the anchor schedules (one per
  // scenario) when anchors are given and step_radius >= 0.
  std::vector<Schedule> anchors;
  int step_radius = 1;
};

struct MasterVars {
  std::vector<std::vector<int>> eta_da, eta_ust;  // [site][feature]
  std::vector<Stage1Vars> stage1;                 // [scenario]
  std::vector<int> theta, tau_da, tau_ust;        // [scenario]
  std::vector<std::vector<std::vector<AffineExpr>>> p_da, p_ust;  // [scenario][pv][t]
  std::vector<std::vector<AffineExpr>> r;                         // [scenario][coordinate]
};

struct MasterProgram {
  ConeProgram prog;
  IntegerSpec ispec;
  MasterVars vars;
};

// `center` supplies the normalizer and the trust-region center. Constant
// features keep their center coefficient.
MasterProgram build_master(const GridCase& gc, const std::vector<Scenario>& scenarios,
                           const std::vector<Cut>& pool, const ForecastModel& center,
                           const MasterOptions& opts = {});

// Forecast model read from a master solution (normalizer of `center`).
ForecastModel master_model(const MasterProgram& mp, const ForecastModel& center,
                           const std::vector<double>& x);

// sum_s gamma_da ||P_da - P_act||^2 + gamma_ust ||P_ust - P_act||^2 with
// unclipped forecasts.
double forecast_penalty(const ForecastModel& m, const std::vector<Scenario>& scenarios,
                        double gamma_da, double gamma_ust);

// ---------------------------------------------------------------- loop

struct TrainConfig {
  int k_max = 50;
  double epsilon = 1e-2;
  double gamma_da = 0.1;
  double gamma_ust = 0.1;
  double rho = 1.0;
  double theta_floor = 0.0;
  int step_radius = 1;  // discrete trust region; negative disables it
  unsigned seed = 0;  // recorded only; the loop is deterministic
  MipOptions mip;         // master problem
  MipOptions deploy_mip;  // Stage 1 when coefficients are scored as deployed
  SolverOptions socp;
  bool verbose = false;
};

struct TraceRow {
  int iteration = 0;  // 0 is the warm-start evaluation
  double lb = -kInf, ub = kInf, gap = kInf;
  double z = kInf;        // deployed Z of this iteration's coefficients
  double z_master = kInf; // Z at the master's own schedules
  int cuts = 0;
  double seconds = 0.0;   // cumulative wall time
  std::vector<double> theta;
  bool master_soft = false;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
  void write_csv(std::ostream& os) const;
};

struct TrainResult {
  ForecastModel model;  // incumbent at the best upper bound
  TrainingTrace trace;
  std::vector<Cut> cuts;
  int incumbent_iteration = 0;
  bool converged = false;
  std::string stop_reason;
  bool failed = false;  // a solver failure ended the loop; trace kept
};

TrainResult train(const GridCase& gc, const std::vector<Scenario>& scenarios,
                  const ForecastModel& warm_start, const TrainConfig& cfg = {});

}  // namespace dfcvr
