#pragma once

// Best-bound branch-and-bound over conic relaxations.

#include <vector>

#include "dfcvr/conic.hpp"

namespace dfcvr {

// A one-hot encoded integer: level = sum_k values[k] * binaries[k] with
// exactly one binary set. Branching on the level also fixes the binaries
// whose value falls outside the child's range, and vice versa.
struct OneHotGroup {
  int level = -1;
  std::vector<int> binaries;
  std::vector<int> values;
  // Optional quantity carried by each value, monotone in the value (e.g. the
  // squared voltage of a tap). Rounding then targets the value whose
  // interpolated weight matches sum_k weights[k] * binaries[k].
  std::vector<double> weights;
};

// Integer levels over time with change indicators and a limit on the number
// of changes. indicators[t] flags levels[t+1] != levels[t]; with `cyclic`
// the last indicator compares the final level with the first. The rounding
// heuristic rounds such trajectories jointly so the limit is respected.
struct SwitchingGroup {
  std::vector<int> levels;
  std::vector<int> indicators;
  int budget = 0;
  bool cyclic = true;
  // Prefer trajectories that never fall below the relaxed levels; falls back
  // to plain nearest rounding when the budget makes that impossible.
  bool round_up = false;
};

struct IntegerSpec {
  std::vector<int> vars;  // bounds are taken from the program and must be finite
  std::vector<OneHotGroup> one_hot;
  std::vector<SwitchingGroup> switching;
  // Rounded up (instead of to nearest) by the rounding heuristic; meant for
  // indicator binaries that only relax a constraint when set.
  std::vector<int> round_up;
};

struct MipOptions {
  double rel_gap = 1e-6;
  double abs_gap = 1e-9;
  int node_limit = 100000;
  double int_tol = 1e-6;
  // Round-and-polish is attempted at the root and at nodes whose largest
  // fractionality is below this threshold.
  double rounding_threshold = 0.05;
  SolverOptions socp;
  bool verbose = false;
};

enum class MipStatus { kOptimal, kInfeasible, kLimit, kFailed };

const char* to_string(MipStatus s);

struct MipSolution {
  MipStatus status = MipStatus::kFailed;
  std::vector<double> x;      // incumbent: integers exact, continuous completion
  ConeSolution completion;    // conic solve with integers fixed (duals included)
  double objective = kInf;
  double best_bound = -kInf;
  int nodes = 0;
  std::vector<double> bound_trace;  // global best bound after each node

  bool has_incumbent() const { return !x.empty(); }
};

MipSolution solve_misocp(const ConeProgram& prog, const IntegerSpec& ispec,
                         const MipOptions& opts = {});

}  // namespace dfcvr
