#pragma once

// Per-hour branch-flow block shared by the stage programs and the master
// problem. Injections enter as affine expressions so callers can plug in
// constants, device variables or forecast-model outputs.

#include "dfcvr/stages.hpp"

namespace dfcvr::detail {

struct FlowInputs {
  std::vector<int> hours;
  std::vector<std::vector<AffineExpr>> pv_p;   // [pv][h]
  std::vector<std::vector<AffineExpr>> q_inj;  // [bus][h], CB and SVG
  std::vector<AffineExpr> root_vsq;            // [h]
  double objective_weight = 1.0;
  bool soft = false;
  double penalty = 1e4;
  std::string prefix;  // variable-name prefix
};

DistFlowVars add_distflow(ConeProgram& prog, const GridCase& gc, const LoadProfile& loads,
                          const FlowInputs& in);

// Reads flows back from a solution. Injections are evaluated from `in`.
// Hour h of the block is written to column hours[h] of `out`, which must
// already be sized.
void extract_state(const GridCase& gc, const LoadProfile& loads, const FlowInputs& in,
                   const DistFlowVars& vars, const std::vector<double>& x, NetworkState& out);

NetworkState empty_state(int buses, int branches, int horizon);

struct Stage1BlockInputs {
  std::vector<std::vector<AffineExpr>> pv_p;  // [pv][t], day-ahead injection
  bool soft = false;
  double objective_weight = 1.0;  // on the DistFlow cost
  double switch_cost = 0.0;
  std::string prefix;
};

// Tap one-hot encoding, CB levels, cyclic switching indicators with their
// budgets and the DistFlow block over the whole horizon.
Stage1Vars add_stage1_block(ConeProgram& prog, IntegerSpec& ispec, const GridCase& gc,
                            const LoadProfile& loads, const Stage1BlockInputs& in);

Schedule schedule_from(const Stage1Vars& v, const std::vector<double>& x, const DeviceFleet& fleet);

}  // namespace dfcvr::detail
