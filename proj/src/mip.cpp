#include "dfcvr/mip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>

#include "dfcvr/errors.hpp"

namespace dfcvr {

const char* to_string(MipStatus s) {
  switch (s) {
    case MipStatus::kOptimal: return "optimal";
    case MipStatus::kInfeasible: return "infeasible";
    case MipStatus::kLimit: return "limit";
    case MipStatus::kFailed: return "failed";
  }
  return "unknown";
}

namespace {

struct BoundChange {
  int var;
  double lb, ub;
};

struct Node {
  double bound;
  int depth;
  long id;
  std::vector<BoundChange> changes;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.id > b.id;
  }
};

// Integer trajectory closest to `target` in squared distance, within the
// per-step ranges [lo, hi] and using at most `budget` counted changes.
// Indicator t may be barred from changing (may_change) or counted anyway
// (forced). Returns an empty vector when no trajectory qualifies.
std::vector<int> round_trajectory(const std::vector<double>& target, const std::vector<int>& lo,
                                  const std::vector<int>& hi, const std::vector<char>& may_change,
                                  const std::vector<char>& forced, int budget, bool cyclic) {
  const int T = static_cast<int>(target.size());
  if (T == 0) return {};
  const int L = *std::min_element(lo.begin(), lo.end());
  const int H = *std::max_element(hi.begin(), hi.end());
  if (L > H) return {};
  const int V = H - L + 1;
  const int K = std::max(budget, 0) + 1;
  auto at = [&](int t, int v, int k) { return (static_cast<size_t>(t) * V + v) * K + k; };
  std::vector<double> cost(static_cast<size_t>(T) * V * K);
  std::vector<int> parent(cost.size());
  std::vector<int> best;
  double best_cost = kInf;

  // Cyclic trajectories are solved once per starting value.
  const int starts_lo = cyclic ? lo[0] - L : 0;
  const int starts_hi = cyclic ? hi[0] - L : 0;
  for (int s0 = starts_lo; s0 <= starts_hi; ++s0) {
    std::fill(cost.begin(), cost.end(), kInf);
    for (int v = lo[0] - L; v <= hi[0] - L; ++v) {
      if (cyclic && v != s0) continue;
      const double d = target[0] - (v + L);
      cost[at(0, v, 0)] = d * d;
    }
    for (int t = 1; t < T; ++t) {
      for (int v = lo[t] - L; v <= hi[t] - L; ++v) {
        const double d = target[t] - (v + L);
        for (int u = 0; u < V; ++u) {
          const bool changed = u != v;
          if (changed && !may_change[t - 1]) continue;
          const int step = (changed || forced[t - 1]) ? 1 : 0;
          for (int k = 0; k + step < K; ++k) {
            const double c = cost[at(t - 1, u, k)];
            if (c == kInf) continue;
            const size_t i = at(t, v, k + step);
            if (c + d * d < cost[i]) {
              cost[i] = c + d * d;
              parent[i] = u;
            }
          }
        }
      }
    }
    for (int v = 0; v < V; ++v) {
      for (int k = 0; k < K; ++k) {
        double c = cost[at(T - 1, v, k)];
        if (c == kInf) continue;
        if (cyclic) {
          const bool changed = v != s0;
          if (changed && !may_change[T - 1]) continue;
          if (k + ((changed || forced[T - 1]) ? 1 : 0) >= K) continue;
        }
        if (c < best_cost - 1e-12) {
          best_cost = c;
          best.assign(T, 0);
          int cur = v, kk = k;
          for (int t = T - 1; t >= 0; --t) {
            best[t] = cur + L;
            if (t == 0) break;
            const int prev = parent[at(t, cur, kk)];
            if (prev != cur || forced[t - 1]) --kk;
            cur = prev;
          }
        }
      }
    }
  }
  return best;
}

class BranchAndBound {
 public:
  BranchAndBound(const ConeProgram& prog, const IntegerSpec& ispec, const MipOptions& opts)
      : prog_(prog), ispec_(ispec), opts_(opts) {
    const int n = prog.num_variables();
    is_int_.assign(n, false);
    group_of_level_.assign(n, -1);
    round_up_.assign(n, false);
    for (int v : ispec.round_up) {
      if (v < 0 || v >= n) throw DataError("round-up index out of range");
      round_up_[v] = true;
    }
    for (int v : ispec.vars) {
      if (v < 0 || v >= n) throw DataError("integer index out of range");
      if (is_int_[v]) throw DataError("duplicate integer index");
      if (!std::isfinite(prog.lower(v)) || !std::isfinite(prog.upper(v))) {
        throw DataError("integer variable '" + prog.name(v) + "' needs finite bounds");
      }
      is_int_[v] = true;
    }
    for (size_t g = 0; g < ispec.one_hot.size(); ++g) {
      const auto& grp = ispec.one_hot[g];
      if (grp.binaries.size() != grp.values.size()) {
        throw DataError("one-hot group size mismatch");
      }
      if (grp.level >= 0 && !is_int_[grp.level]) throw DataError("one-hot level must be integer");
      if (!grp.weights.empty() && grp.weights.size() != grp.values.size()) {
        throw DataError("one-hot weights size mismatch");
      }
      if (grp.level >= 0) group_of_level_[grp.level] = static_cast<int>(g);
      for (int b : grp.binaries) {
        if (!is_int_[b]) throw DataError("one-hot binary must be integer");
      }
    }
    for (const auto& sg : ispec.switching) {
      const size_t T = sg.levels.size();
      if (sg.indicators.size() != (sg.cyclic ? T : (T == 0 ? 0 : T - 1))) {
        throw DataError("switching group indicator count mismatch");
      }
      for (int v : sg.levels) {
        if (v < 0 || v >= n || !is_int_[v]) throw DataError("switching level must be integer");
      }
      for (int v : sg.indicators) {
        if (v < 0 || v >= n || !is_int_[v]) throw DataError("switching indicator must be integer");
      }
    }
  }

  MipSolution run() {
    MipSolution out;
    std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
    open.push(Node{-kInf, 0, next_id_++, {}});
    double incumbent = kInf;
    double global_bound = -kInf;
    bool root = true;
    bool failures = false;

    while (!open.empty()) {
      if (out.nodes >= opts_.node_limit) break;
      Node node = open.top();
      open.pop();
      global_bound = std::max(global_bound, std::min(node.bound, incumbent));
      if (node.bound >= incumbent - tolerance(incumbent)) {
        // Everything left is dominated.
        global_bound = incumbent;
        while (!open.empty()) open.pop();
        break;
      }
      ++out.nodes;
      std::vector<double> lb = prog_.lower_bounds(), ub = prog_.upper_bounds();
      for (const auto& c : node.changes) {
        lb[c.var] = std::max(lb[c.var], c.lb);
        ub[c.var] = std::min(ub[c.var], c.ub);
      }
      if (!propagate(lb, ub)) {
        out.bound_trace.push_back(std::min(global_bound, incumbent));
        root = false;
        continue;
      }
      ConeSolution rel = solve_socp(prog_, lb, ub, opts_.socp);
      if (rel.status == SolveStatus::kInfeasible) {
        if (root) {
          out.status = MipStatus::kInfeasible;
          out.bound_trace.push_back(kInf);
          return out;
        }
        out.bound_trace.push_back(std::min(global_bound, incumbent));
        continue;
      }
      if (!rel.ok()) {
        failures = true;
        if (opts_.verbose) {
          std::fprintf(stderr, "bnb node %ld: relaxation %s, node dropped\n", node.id,
                       to_string(rel.status));
        }
        if (root) {
          out.status = MipStatus::kFailed;
          return out;
        }
        out.bound_trace.push_back(std::min(global_bound, incumbent));
        continue;
      }
      const double bound = std::max(rel.objective, node.bound);
      if (root) global_bound = bound;

      int branch_var = -1;
      double worst = 0.0;
      for (int v : ispec_.vars) {
        const double f = std::abs(rel.x[v] - std::round(rel.x[v]));
        if (f > opts_.int_tol && f > worst + 1e-12) {
          worst = f;
          branch_var = v;
        }
      }
      if (branch_var < 0 || root || worst <= opts_.rounding_threshold) {
        try_rounding(rel.x, lb, ub, incumbent, out);
      }
      if (branch_var >= 0 && bound < incumbent - tolerance(incumbent)) {
        const double xv = rel.x[branch_var];
        Node down{bound, node.depth + 1, next_id_++, node.changes};
        down.changes.push_back({branch_var, -kInf, std::floor(xv)});
        Node up{bound, node.depth + 1, next_id_++, node.changes};
        up.changes.push_back({branch_var, std::ceil(xv), kInf});
        open.push(std::move(down));
        open.push(std::move(up));
      }
      root = false;
      double open_min = incumbent;
      if (!open.empty()) open_min = std::min(open_min, open.top().bound);
      global_bound = std::max(global_bound, open_min);
      out.bound_trace.push_back(std::min(global_bound, incumbent));
      if (opts_.verbose && out.nodes % 50 == 0) {
        std::fprintf(stderr, "bnb %6d nodes  open %zu  bound %.8g  incumbent %.8g\n", out.nodes,
                     open.size(), global_bound, incumbent);
      }
    }

    out.objective = incumbent;
    if (open.empty()) {
      global_bound = incumbent;
    } else {
      global_bound = std::max(global_bound, std::min(open.top().bound, incumbent));
    }
    out.best_bound = global_bound;
    if (!out.has_incumbent()) {
      out.status = open.empty() ? (failures ? MipStatus::kFailed : MipStatus::kInfeasible)
                                : MipStatus::kLimit;
    } else {
      out.status = open.empty() ? MipStatus::kOptimal : MipStatus::kLimit;
    }
    return out;
  }

 private:
  double tolerance(double incumbent) const {
    if (!std::isfinite(incumbent)) return 0.0;
    return std::max(opts_.abs_gap, opts_.rel_gap * std::max(1.0, std::abs(incumbent)));
  }

  // One-hot consistency between levels and binaries. Returns false when a
  // group has no admissible value left.
  bool propagate(std::vector<double>& lb, std::vector<double>& ub) const {
    for (const auto& g : ispec_.one_hot) {
      double lo = -kInf, hi = kInf;
      if (g.level >= 0) {
        lo = lb[g.level];
        hi = ub[g.level];
      }
      int forced = -1;
      for (size_t k = 0; k < g.binaries.size(); ++k) {
        const int b = g.binaries[k];
        if (g.values[k] < lo - 1e-9 || g.values[k] > hi + 1e-9) ub[b] = std::min(ub[b], 0.0);
        if (lb[b] > 0.5) forced = static_cast<int>(k);
      }
      if (forced >= 0) {
        for (size_t k = 0; k < g.binaries.size(); ++k) {
          if (static_cast<int>(k) != forced) ub[g.binaries[k]] = std::min(ub[g.binaries[k]], 0.0);
        }
      }
      double vmin = kInf, vmax = -kInf;
      for (size_t k = 0; k < g.binaries.size(); ++k) {
        const int b = g.binaries[k];
        if (ub[b] < lb[b]) return false;
        if (ub[b] > 0.5) {
          vmin = std::min(vmin, static_cast<double>(g.values[k]));
          vmax = std::max(vmax, static_cast<double>(g.values[k]));
        }
      }
      if (vmin > vmax) return false;
      if (g.level >= 0) {
        lb[g.level] = std::max(lb[g.level], vmin);
        ub[g.level] = std::min(ub[g.level], vmax);
        if (lb[g.level] > ub[g.level]) return false;
      }
    }
    return true;
  }

  // Relaxed value of an integer, read through its one-hot weights if any.
  double relaxed_value(int v, const std::vector<double>& x) const {
    const int g = group_of_level_[v];
    if (g < 0 || ispec_.one_hot[g].weights.empty()) return x[v];
    const auto& grp = ispec_.one_hot[g];
    double w = 0.0;
    for (size_t k = 0; k < grp.binaries.size(); ++k) w += grp.weights[k] * x[grp.binaries[k]];
    // Piecewise-linear inverse over the values sorted ascending.
    std::vector<size_t> idx(grp.values.size());
    for (size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return grp.values[a] < grp.values[b]; });
    const bool rising = grp.weights[idx.back()] >= grp.weights[idx.front()];
    for (size_t j = 0; j + 1 < idx.size(); ++j) {
      const double w0 = grp.weights[idx[j]], w1 = grp.weights[idx[j + 1]];
      const bool inside = rising ? (w >= w0 && w <= w1) : (w <= w0 && w >= w1);
      if (inside && w1 != w0) {
        return grp.values[idx[j]] + (w - w0) / (w1 - w0) * (grp.values[idx[j + 1]] - grp.values[idx[j]]);
      }
    }
    return x[v];
  }

  // Round-and-polish. Upward-rounded trajectories are retried with a larger
  // offset when the polished problem turns out infeasible.
  void try_rounding(const std::vector<double>& x, const std::vector<double>& lb,
                    const std::vector<double>& ub, double& incumbent, MipSolution& out) {
    bool any_up = false;
    for (const auto& sg : ispec_.switching) any_up = any_up || sg.round_up;
    const int tries = any_up ? 3 : 1;
    for (int offset = 0; offset < tries; ++offset) {
      if (round_once(x, lb, ub, offset, incumbent, out) != SolveStatus::kInfeasible) return;
    }
  }

  SolveStatus round_once(const std::vector<double>& x, const std::vector<double>& lb,
                         const std::vector<double>& ub, int offset, double& incumbent,
                         MipSolution& out) {
    std::vector<double> flb = lb, fub = ub;
    std::vector<bool> done(x.size(), false);
    for (const auto& sg : ispec_.switching) {
      const size_t T = sg.levels.size();
      std::vector<double> target(T);
      std::vector<int> lo(T), hi(T);
      for (size_t t = 0; t < T; ++t) {
        target[t] = relaxed_value(sg.levels[t], x);
        lo[t] = static_cast<int>(std::ceil(lb[sg.levels[t]] - 1e-9));
        hi[t] = static_cast<int>(std::floor(ub[sg.levels[t]] + 1e-9));
      }
      std::vector<char> may(sg.indicators.size()), forced(sg.indicators.size());
      for (size_t t = 0; t < sg.indicators.size(); ++t) {
        may[t] = ub[sg.indicators[t]] > 0.5;
        forced[t] = lb[sg.indicators[t]] > 0.5;
      }
      std::vector<int> r;
      if (sg.round_up) {
        std::vector<int> up = lo;
        for (size_t t = 0; t < T; ++t) {
          up[t] = std::max(lo[t], static_cast<int>(std::ceil(target[t] - opts_.int_tol)) + offset);
        }
        r = round_trajectory(target, up, hi, may, forced, sg.budget, sg.cyclic);
      }
      if (r.empty()) r = round_trajectory(target, lo, hi, may, forced, sg.budget, sg.cyclic);
      if (r.empty()) {
        if (opts_.verbose) std::fprintf(stderr, "bnb rounding: no trajectory within budget\n");
        return SolveStatus::kNumericalFailure;
      }
      for (size_t t = 0; t < T; ++t) {
        flb[sg.levels[t]] = fub[sg.levels[t]] = r[t];
        done[sg.levels[t]] = true;
      }
      for (size_t t = 0; t < sg.indicators.size(); ++t) {
        const bool changed = r[(t + 1) % T] != r[t];
        const double d = (changed || forced[t]) ? 1.0 : 0.0;
        flb[sg.indicators[t]] = fub[sg.indicators[t]] = d;
        done[sg.indicators[t]] = true;
      }
    }
    for (const auto& g : ispec_.one_hot) {
      // Pick the admissible value closest to the relaxed level, or follow a
      // level already fixed above.
      double target = 0.0;
      if (g.level >= 0 && done[g.level]) {
        target = flb[g.level];
      } else if (g.level >= 0) {
        target = x[g.level];
      } else {
        for (size_t k = 0; k < g.binaries.size(); ++k) target += g.values[k] * x[g.binaries[k]];
      }
      int pick = -1;
      double dist = kInf;
      for (size_t k = 0; k < g.binaries.size(); ++k) {
        if (ub[g.binaries[k]] < 0.5) continue;
        const double d = std::abs(g.values[k] - target);
        if (d < dist - 1e-12) {
          dist = d;
          pick = static_cast<int>(k);
        }
      }
      if (pick < 0) return SolveStatus::kNumericalFailure;
      for (size_t k = 0; k < g.binaries.size(); ++k) {
        const double v = static_cast<int>(k) == pick ? 1.0 : 0.0;
        flb[g.binaries[k]] = fub[g.binaries[k]] = v;
        done[g.binaries[k]] = true;
      }
      if (g.level >= 0) {
        flb[g.level] = fub[g.level] = g.values[pick];
        done[g.level] = true;
      }
    }
    for (int v : ispec_.vars) {
      if (done[v]) continue;
      double r = round_up_[v] ? std::ceil(x[v] - opts_.int_tol) : std::round(x[v]);
      r = std::clamp(r, lb[v], ub[v]);
      flb[v] = fub[v] = r;
    }
    ConeSolution s = solve_socp(prog_, flb, fub, opts_.socp);
    if (!s.ok()) {
      if (opts_.verbose) std::fprintf(stderr, "bnb rounding: polish %s\n", to_string(s.status));
      return s.status;
    }
    if (s.objective < incumbent) {
      incumbent = s.objective;
      out.x = s.x;
      out.completion = std::move(s);
      if (opts_.verbose) std::fprintf(stderr, "bnb new incumbent %.10g\n", incumbent);
    }
    return SolveStatus::kOptimal;
  }

  const ConeProgram& prog_;
  const IntegerSpec& ispec_;
  const MipOptions& opts_;
  std::vector<bool> is_int_;
  std::vector<bool> round_up_;
  std::vector<int> group_of_level_;
  long next_id_ = 0;
};

}  // namespace

MipSolution solve_misocp(const ConeProgram& prog, const IntegerSpec& ispec,
                         const MipOptions& opts) {
  BranchAndBound bnb(prog, ispec, opts);
  return bnb.run();
}

}  // namespace dfcvr
