#pragma once

// The Volt-Var cascade: day-ahead OLTC/CB scheduling (mixed-integer SOCP),
// intra-day SVG dispatch (SOCP with balance duals) and the real-time droop
// response evaluated by radial power flow.

#include <string>
#include <utility>
#include <vector>

#include "dfcvr/conic.hpp"
#include "dfcvr/grid.hpp"
#include "dfcvr/mip.hpp"

namespace dfcvr {

using Matrix = std::vector<std::vector<double>>;  // row-major [row][t]

struct StageWeights {
  double w_loss = 1.0;
  double w_load = 1.0;
};

// Everything about the system that does not change from day to day.
struct GridCase {
  NetworkModel net;
  DeviceFleet fleet;
  VoltageLimits limits;
  ZipCoefficients zip = kFeederZip;
  StageWeights weights;
  double penalty = 1e4;        // per p.u.^2 node-hour of voltage violation
  double switch_cost = 1e-6;   // tie-breaker on switching indicators
};

struct Schedule {
  std::vector<int> oltc_tap;                // [t]
  std::vector<std::vector<int>> cb_step;    // [cb][t]
  // Indicator of a change between t and t+1 (index T-1 wraps to 0).
  std::vector<int> oltc_switch;
  std::vector<std::vector<int>> cb_switch;
  std::vector<double> root_vsq;             // derived
  Matrix cb_q;                              // derived, p.u.

  int horizon() const { return static_cast<int>(oltc_tap.size()); }
};

// Builds a schedule from level trajectories; switch indicators and derived
// quantities are recomputed. Throws DataError on out-of-range levels.
Schedule make_schedule(const std::vector<int>& taps,
                       const std::vector<std::vector<int>>& cb_steps,
                       const DeviceFleet& fleet);

// Device bounds, indicator consistency and (optionally) switching budgets.
void check_schedule(const Schedule& s, const DeviceFleet& fleet, bool check_budget);

struct NetworkState {
  Matrix v_sq;                  // [bus][t]
  Matrix i_sq, p_flow, q_flow;  // [branch][t], branch index of NetworkModel
  std::vector<double> p_sub, q_sub;
  Matrix p_load, q_load;        // [bus][t]
  Matrix p_inj, q_inj;          // device injections (PV, CB, SVG) [bus][t]
};

// max_t |p_sub + sum p_inj - sum p_load - sum r l| (and the reactive
// analogue with x l); returns the larger of the two.
double power_balance_residual(const NetworkModel& net, const NetworkState& s);

struct SocResidual {
  double max_abs = 0.0;  // max |l v - (P^2 + Q^2)|
  double min = 0.0;      // min (l v - (P^2 + Q^2)), negative means cone breach
};
SocResidual soc_residual(const NetworkModel& net, const NetworkState& s);

// Variable indices of one DistFlow block. Hour h indexes `hours`.
struct DistFlowVars {
  std::vector<int> hours;
  std::vector<std::vector<int>> v, l, p, q;  // [bus|branch][h]
  std::vector<int> p_sub, q_sub;             // [h]
  std::vector<std::vector<int>> p_row, q_row;  // balance equality rows [bus][h]
  std::vector<std::vector<int>> over, under;   // soft-limit slacks [bus][h], -1 if none
};

struct Stage1Vars {
  DistFlowVars flow;
  std::vector<int> tap_level;                    // [t]
  std::vector<std::vector<int>> tap_onehot;      // [t][k]
  std::vector<int> tap_values;                   // admissible taps (k -> tap)
  std::vector<int> tap_switch;                   // [t]
  std::vector<std::vector<int>> cb_level, cb_switch;  // [cb][t]
};

struct Stage1Options {
  bool soft_limits = false;
  // Retry with soft limits when the hard-limit problem is infeasible.
  bool soft_fallback = false;
};

struct Stage1Program {
  ConeProgram prog;
  IntegerSpec ispec;
  Stage1Vars vars;
};

// forecast_da is [pv][t] in p.u.
Stage1Program build_stage1(const GridCase& gc, const LoadProfile& loads,
                           const Matrix& forecast_da, const Stage1Options& opts = {});

// Taps whose root voltage lies within [root_min, root_max], ascending.
// Throws ConfigError when there are none.
std::vector<int> admissible_taps(const GridCase& gc);

// Bounds that pin every integer of a Stage-1 program to `s` (indicators
// follow the levels). Solving with them gives the continuous completion.
std::pair<std::vector<double>, std::vector<double>> stage1_bounds_for(const Stage1Program& sp,
                                                                       const Schedule& s);

struct Stage1Result {
  MipStatus status = MipStatus::kFailed;
  Schedule schedule;
  NetworkState state;
  double objective = 0.0;
  int nodes = 0;
  double best_bound = 0.0;
  bool soft = false;  // solved with soft voltage limits

  bool ok() const { return status == MipStatus::kOptimal || status == MipStatus::kLimit; }
};

// Returns status kInfeasible without a schedule when the limits cannot be
// met (and no fallback was requested). Throws SolverError when the search
// ends without any incumbent for other reasons.
Stage1Result solve_stage1(const GridCase& gc, const LoadProfile& loads,
                          const Matrix& forecast_da, const Stage1Options& opts = {},
                          const MipOptions& mip = {});

struct Stage2Options {
  bool soft_limits = false;
  std::vector<int> hours;  // empty: whole horizon
};

struct Stage2Program {
  ConeProgram prog;
  DistFlowVars flow;
  std::vector<std::vector<int>> svg_q;  // [svg][h]
};

Stage2Program build_stage2(const GridCase& gc, const LoadProfile& loads,
                           const Schedule& schedule, const Matrix& forecast_ust,
                           const Stage2Options& opts = {});

struct Dispatch {
  SolveStatus status = SolveStatus::kNumericalFailure;
  Matrix svg_q;            // [svg][t]
  Matrix duals_pbalance;   // [pv][t], d(objective)/d(forecast)
  double objective = 0.0;
  NetworkState state;
  bool soft = false;
  double slack_total = 0.0;  // sum of voltage slacks (soft variant)

  bool ok() const {
    return status == SolveStatus::kOptimal || status == SolveStatus::kOptimalInaccurate;
  }
};

// Solves hour by hour (the problem is separable in time). With
// opts.soft_limits false an infeasible hour yields status kInfeasible.
Dispatch solve_stage2(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                      const Matrix& forecast_ust, const Stage2Options& opts = {},
                      const SolverOptions& socp = {});

// Re-solves a single hour of an existing dispatch in place.
void resolve_stage2_hour(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                         const Matrix& forecast_ust, int hour, bool soft, Dispatch& d,
                         const SolverOptions& socp = {});

double droop_q(double p_act, double p_ust, double k, double q_capacity);

struct PowerFlowOptions {
  double tol = 1e-10;
  int max_sweeps = 500;
};

// Backward/forward sweep with exact ZIP loads. Injections are [bus][t].
NetworkState power_flow(const NetworkModel& net, const LoadProfile& loads,
                        const ZipCoefficients& zip, const Matrix& p_inj, const Matrix& q_inj,
                        const std::vector<double>& root_vsq, const PowerFlowOptions& opts = {});

struct RealTimeState {
  Matrix pv_q;           // [pv][t]
  NetworkState state;
  Matrix dv_over, dv_under;  // [bus][t], p.u.^2
  double losses = 0.0;       // sum_t sum r l
  double load = 0.0;         // sum_t sum p_load
  double f_rt = 0.0;         // w_loss * losses + w_load * load
  double penalty = 0.0;      // M * sum slacks
  double recourse = 0.0;     // f_rt + penalty
  double substation_energy = 0.0;  // sum_t p_sub
  int violations = 0;        // node-hours outside limits by > 1e-6 p.u.
};

RealTimeState run_stage3(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                         const Matrix& svg_q, const Matrix& p_act, const Matrix& p_ust,
                         bool droop_enabled = true);

// Node-hours whose magnitude is outside [v_min, v_max] by more than 1e-6.
int count_violations(const NetworkModel& net, const VoltageLimits& lim, const NetworkState& s);

}  // namespace dfcvr
