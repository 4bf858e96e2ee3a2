#include "dfcvr/stages.hpp"

#include <algorithm>
#include <cmath>

#include "distflow.hpp"
#include "dfcvr/errors.hpp"

namespace dfcvr {

using detail::FlowInputs;

namespace {

std::vector<int> switches_of(const std::vector<int>& level) {
  const int T = static_cast<int>(level.size());
  std::vector<int> s(T, 0);
  for (int t = 0; t < T; ++t) s[t] = level[(t + 1) % T] != level[t] ? 1 : 0;
  return s;
}

int sum(const std::vector<int>& v) {
  int s = 0;
  for (int x : v) s += x;
  return s;
}

void check_pv_matrix(const Matrix& m, const DeviceFleet& fleet, int T, const char* what) {
  if (m.size() != fleet.pvs.size()) {
    throw DataError(std::string(what) + ": expected one row per PV unit");
  }
  for (const auto& row : m) {
    if (static_cast<int>(row.size()) != T) {
      throw DataError(std::string(what) + ": row length differs from the horizon");
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw DataError(std::string(what) + ": non-finite entry");
    }
  }
}

std::vector<std::vector<AffineExpr>> constant_rows(const Matrix& m, const std::vector<int>& hours) {
  std::vector<std::vector<AffineExpr>> out(m.size());
  for (size_t r = 0; r < m.size(); ++r) {
    for (int t : hours) out[r].emplace_back(m[r][t]);
  }
  return out;
}

std::vector<int> all_hours(int T) {
  std::vector<int> h(T);
  for (int t = 0; t < T; ++t) h[t] = t;
  return h;
}

}  // namespace

Schedule make_schedule(const std::vector<int>& taps, const std::vector<std::vector<int>>& cb_steps,
                       const DeviceFleet& fleet) {
  const int T = static_cast<int>(taps.size());
  if (cb_steps.size() != fleet.cbs.size()) throw DataError("schedule: one row per capacitor bank");
  Schedule s;
  s.oltc_tap = taps;
  s.cb_step = cb_steps;
  for (int tap : taps) {
    if (tap < fleet.oltc.tap_min || tap > fleet.oltc.tap_max) {
      throw DataError("schedule: tap " + std::to_string(tap) + " outside the OLTC range");
    }
    s.root_vsq.push_back(oltc_root_vsq(tap, fleet));
  }
  s.oltc_switch = switches_of(taps);
  for (size_t c = 0; c < cb_steps.size(); ++c) {
    if (static_cast<int>(cb_steps[c].size()) != T) throw DataError("schedule: CB row length");
    std::vector<double> q;
    for (int step : cb_steps[c]) {
      if (step < 0 || step > fleet.cbs[c].step_max) {
        throw DataError("schedule: CB step " + std::to_string(step) + " out of range");
      }
      q.push_back(cb_q(step, fleet.cbs[c]));
    }
    s.cb_q.push_back(q);
    s.cb_switch.push_back(switches_of(cb_steps[c]));
  }
  return s;
}

void check_schedule(const Schedule& s, const DeviceFleet& fleet, bool check_budget) {
  Schedule ref = make_schedule(s.oltc_tap, s.cb_step, fleet);
  if (ref.oltc_switch != s.oltc_switch || ref.cb_switch != s.cb_switch) {
    throw DataError("schedule: switch indicators inconsistent with levels");
  }
  for (size_t t = 0; t < ref.root_vsq.size(); ++t) {
    if (t >= s.root_vsq.size() || std::abs(ref.root_vsq[t] - s.root_vsq[t]) > 1e-12) {
      throw DataError("schedule: root voltage inconsistent with taps");
    }
  }
  if (!check_budget) return;
  if (sum(s.oltc_switch) > fleet.oltc.n_max_switch) {
    throw DataError("schedule: OLTC switching budget exceeded");
  }
  for (size_t c = 0; c < s.cb_switch.size(); ++c) {
    if (sum(s.cb_switch[c]) > fleet.cbs[c].n_max_switch) {
      throw DataError("schedule: CB switching budget exceeded");
    }
  }
}

double power_balance_residual(const NetworkModel& net, const NetworkState& s) {
  double worst = 0.0;
  for (size_t t = 0; t < s.p_sub.size(); ++t) {
    double rp = s.p_sub[t], rq = s.q_sub[t];
    for (int i = 0; i < net.num_buses(); ++i) {
      rp += s.p_inj[i][t] - s.p_load[i][t];
      rq += s.q_inj[i][t] - s.q_load[i][t];
    }
    for (int k = 0; k < net.num_branches(); ++k) {
      rp -= net.branch(k).r * s.i_sq[k][t];
      rq -= net.branch(k).x * s.i_sq[k][t];
    }
    worst = std::max({worst, std::abs(rp), std::abs(rq)});
  }
  return worst;
}

SocResidual soc_residual(const NetworkModel& net, const NetworkState& s) {
  SocResidual r;
  bool first = true;
  for (int k = 0; k < net.num_branches(); ++k) {
    const int from = net.branch(k).from;
    for (size_t t = 0; t < s.p_sub.size(); ++t) {
      const double p = s.p_flow[k][t], q = s.q_flow[k][t];
      const double gap = s.i_sq[k][t] * s.v_sq[from][t] - (p * p + q * q);
      r.max_abs = std::max(r.max_abs, std::abs(gap));
      r.min = first ? gap : std::min(r.min, gap);
      first = false;
    }
  }
  return r;
}

// ---------------------------------------------------------------- stage 1

std::vector<int> admissible_taps(const GridCase& gc) {
  const OltcSpec& o = gc.fleet.oltc;
  std::vector<int> taps;
  for (int k = o.tap_min; k <= o.tap_max; ++k) {
    const double vr = o.v_base + k * o.dv_step;
    if (vr >= gc.limits.root_min - 1e-9 && vr <= gc.limits.root_max + 1e-9) taps.push_back(k);
  }
  if (taps.empty()) throw ConfigError("no OLTC tap within the root voltage range");
  return taps;
}

namespace detail {

Stage1Vars add_stage1_block(ConeProgram& prog, IntegerSpec& ispec, const GridCase& gc,
                            const LoadProfile& loads, const Stage1BlockInputs& bi) {
  const int T = loads.horizon();
  const DeviceFleet& fleet = gc.fleet;
  gc.limits.validate();
  if (bi.pv_p.size() != fleet.pvs.size()) throw DataError("Stage-1 block: one PV row per unit");
  for (const auto& row : bi.pv_p) {
    if (static_cast<int>(row.size()) != T) throw DataError("Stage-1 block: PV row length");
  }
  const std::string& pre = bi.prefix;
  auto idx = [](int t) { return "[" + std::to_string(t) + "]"; };

  Stage1Vars v;
  v.tap_values = admissible_taps(gc);
  const int kmin = v.tap_values.front(), kmax = v.tap_values.back();

  FlowInputs in;
  in.hours = all_hours(T);
  in.pv_p = bi.pv_p;
  in.q_inj.assign(gc.net.num_buses(), std::vector<AffineExpr>(T));
  in.soft = bi.soft;
  in.penalty = gc.penalty;
  in.objective_weight = bi.objective_weight;
  in.prefix = pre;

  for (int t = 0; t < T; ++t) {
    const int level = prog.add_variable(kmin, kmax, pre + "tap" + idx(t));
    v.tap_level.push_back(level);
    ispec.vars.push_back(level);
    OneHotGroup grp;
    grp.level = level;
    std::vector<Term> one{}, lev{{level, -1.0}};
    AffineExpr root;
    std::vector<int> bins;
    for (int k : v.tap_values) {
      const int b = prog.add_variable(0.0, 1.0,
                                      pre + "b[" + std::to_string(t) + "," + std::to_string(k) + "]");
      bins.push_back(b);
      grp.binaries.push_back(b);
      grp.values.push_back(k);
      ispec.vars.push_back(b);
      one.push_back({b, 1.0});
      lev.push_back({b, static_cast<double>(k)});
      root.add(b, oltc_root_vsq(k, fleet));
      grp.weights.push_back(oltc_root_vsq(k, fleet));
    }
    prog.add_equality(one, 1.0, pre + "onehot" + idx(t));
    prog.add_equality(lev, 0.0, pre + "taplevel" + idx(t));
    in.root_vsq.push_back(root);
    v.tap_onehot.push_back(bins);
    ispec.one_hot.push_back(grp);
  }

  v.cb_level.resize(fleet.cbs.size());
  for (size_t c = 0; c < fleet.cbs.size(); ++c) {
    const auto& cb = fleet.cbs[c];
    for (int t = 0; t < T; ++t) {
      const int g = prog.add_variable(0.0, cb.step_max, pre + "cb" + std::to_string(c) + idx(t));
      v.cb_level[c].push_back(g);
      ispec.vars.push_back(g);
      in.q_inj[cb.bus][t].add(g, cb.dq_step);
    }
  }

  // Switching indicators, cyclic over the horizon.
  auto add_switches = [&](const std::vector<int>& level, double big_m, int budget,
                          const std::string& name) {
    std::vector<int> delta;
    AffineExpr total(static_cast<double>(budget));
    for (int t = 0; t < T; ++t) {
      const int d = prog.add_variable(0.0, 1.0, pre + name + idx(t));
      prog.set_cost(d, bi.switch_cost);
      const int a = level[t], b = level[(t + 1) % T];
      if (a != b) {
        prog.add_nonneg(AffineExpr({{d, big_m}, {b, -1.0}, {a, 1.0}}));
        prog.add_nonneg(AffineExpr({{d, big_m}, {b, 1.0}, {a, -1.0}}));
      }
      total.add(d, -1.0);
      delta.push_back(d);
      ispec.vars.push_back(d);
      ispec.round_up.push_back(d);
    }
    prog.add_nonneg(total);
    ispec.switching.push_back(SwitchingGroup{level, delta, budget, true, true});
    return delta;
  };
  v.tap_switch = add_switches(v.tap_level, kmax - kmin, fleet.oltc.n_max_switch, "dtap");
  for (size_t c = 0; c < fleet.cbs.size(); ++c) {
    v.cb_switch.push_back(add_switches(v.cb_level[c], fleet.cbs[c].step_max,
                                       fleet.cbs[c].n_max_switch, "dcb" + std::to_string(c)));
  }

  v.flow = add_distflow(prog, gc, loads, in);
  return v;
}

Schedule schedule_from(const Stage1Vars& v, const std::vector<double>& x, const DeviceFleet& fleet) {
  const int T = static_cast<int>(v.tap_level.size());
  std::vector<int> taps;
  for (int t = 0; t < T; ++t) taps.push_back(static_cast<int>(std::lround(x[v.tap_level[t]])));
  std::vector<std::vector<int>> cbs(v.cb_level.size());
  for (size_t c = 0; c < cbs.size(); ++c) {
    for (int t = 0; t < T; ++t) cbs[c].push_back(static_cast<int>(std::lround(x[v.cb_level[c][t]])));
  }
  return make_schedule(taps, cbs, fleet);
}

}  // namespace detail

Stage1Program build_stage1(const GridCase& gc, const LoadProfile& loads, const Matrix& forecast_da,
                           const Stage1Options& opts) {
  check_pv_matrix(forecast_da, gc.fleet, loads.horizon(), "day-ahead forecast");
  Stage1Program out;
  detail::Stage1BlockInputs bi;
  bi.pv_p = constant_rows(forecast_da, all_hours(loads.horizon()));
  bi.soft = opts.soft_limits;
  bi.switch_cost = gc.switch_cost;
  out.vars = detail::add_stage1_block(out.prog, out.ispec, gc, loads, bi);
  return out;
}

std::pair<std::vector<double>, std::vector<double>> stage1_bounds_for(const Stage1Program& sp,
                                                                       const Schedule& s) {
  const Stage1Vars& v = sp.vars;
  const int T = static_cast<int>(v.tap_level.size());
  if (s.horizon() != T || s.cb_step.size() != v.cb_level.size()) {
    throw DataError("schedule shape differs from the Stage-1 program");
  }
  std::vector<double> lb = sp.prog.lower_bounds(), ub = sp.prog.upper_bounds();
  auto pin = [&](int var, double value) {
    if (value < lb[var] - 1e-9 || value > ub[var] + 1e-9) {
      throw DataError("schedule value outside the Stage-1 bounds of " + sp.prog.name(var));
    }
    lb[var] = ub[var] = value;
  };
  for (int t = 0; t < T; ++t) {
    pin(v.tap_level[t], s.oltc_tap[t]);
    for (size_t k = 0; k < v.tap_values.size(); ++k) {
      pin(v.tap_onehot[t][k], v.tap_values[k] == s.oltc_tap[t] ? 1.0 : 0.0);
    }
    pin(v.tap_switch[t], s.oltc_switch[t]);
    for (size_t c = 0; c < v.cb_level.size(); ++c) {
      pin(v.cb_level[c][t], s.cb_step[c][t]);
      pin(v.cb_switch[c][t], s.cb_switch[c][t]);
    }
  }
  return {lb, ub};
}

Stage1Result solve_stage1(const GridCase& gc, const LoadProfile& loads, const Matrix& forecast_da,
                          const Stage1Options& opts, const MipOptions& mip) {
  const int T = loads.horizon();
  Stage1Result res;
  Stage1Options o = opts;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Stage1Program sp = build_stage1(gc, loads, forecast_da, o);
    MipSolution sol = solve_misocp(sp.prog, sp.ispec, mip);
    res.status = sol.status;
    res.nodes += sol.nodes;
    if (sol.has_incumbent()) {
      res.schedule = detail::schedule_from(sp.vars, sol.x, gc.fleet);
      res.objective = sol.objective;
      res.best_bound = sol.best_bound;
      res.soft = o.soft_limits;

      FlowInputs in;
      in.hours = all_hours(T);
      in.pv_p = constant_rows(forecast_da, in.hours);
      in.q_inj.assign(gc.net.num_buses(), std::vector<AffineExpr>(T));
      for (size_t c = 0; c < gc.fleet.cbs.size(); ++c) {
        for (int t = 0; t < T; ++t) in.q_inj[gc.fleet.cbs[c].bus][t] += res.schedule.cb_q[c][t];
      }
      res.state = detail::empty_state(gc.net.num_buses(), gc.net.num_branches(), T);
      detail::extract_state(gc, loads, in, sp.vars.flow, sol.x, res.state);
      return res;
    }
    if (sol.status != MipStatus::kInfeasible || o.soft_limits || !o.soft_fallback) break;
    o.soft_limits = true;
  }
  if (res.status == MipStatus::kInfeasible) return res;
  throw SolverError(std::string("stage 1 failed: ") + to_string(res.status));
}

// ---------------------------------------------------------------- stage 2

namespace {

FlowInputs stage2_inputs(const GridCase& gc, const Schedule& schedule, const Matrix& forecast_ust,
                         const std::vector<int>& hours, bool soft, ConeProgram& prog,
                         std::vector<std::vector<int>>& svg_q) {
  FlowInputs in;
  in.hours = hours;
  in.pv_p = constant_rows(forecast_ust, hours);
  in.q_inj.assign(gc.net.num_buses(), std::vector<AffineExpr>(hours.size()));
  in.soft = soft;
  in.penalty = gc.penalty;
  svg_q.assign(gc.fleet.svgs.size(), {});
  for (size_t h = 0; h < hours.size(); ++h) {
    const int t = hours[h];
    in.root_vsq.emplace_back(schedule.root_vsq[t]);
    for (size_t c = 0; c < gc.fleet.cbs.size(); ++c) {
      in.q_inj[gc.fleet.cbs[c].bus][h] += schedule.cb_q[c][t];
    }
    for (size_t s = 0; s < gc.fleet.svgs.size(); ++s) {
      const auto& svg = gc.fleet.svgs[s];
      const int q = prog.add_variable(svg.q_min, svg.q_max,
                                      "svg" + std::to_string(s) + "[" + std::to_string(t) + "]");
      svg_q[s].push_back(q);
      in.q_inj[svg.bus][h].add(q, 1.0);
    }
  }
  return in;
}

void check_stage2_inputs(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                         const Matrix& forecast_ust) {
  const int T = loads.horizon();
  if (schedule.horizon() != T) throw DataError("schedule horizon differs from the load profile");
  check_schedule(schedule, gc.fleet, false);
  check_pv_matrix(forecast_ust, gc.fleet, T, "intra-day forecast");
}

}  // namespace

Stage2Program build_stage2(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                           const Matrix& forecast_ust, const Stage2Options& opts) {
  check_stage2_inputs(gc, loads, schedule, forecast_ust);
  Stage2Program out;
  const std::vector<int> hours = opts.hours.empty() ? all_hours(loads.horizon()) : opts.hours;
  FlowInputs in = stage2_inputs(gc, schedule, forecast_ust, hours, opts.soft_limits, out.prog,
                                out.svg_q);
  out.flow = detail::add_distflow(out.prog, gc, loads, in);
  return out;
}

void resolve_stage2_hour(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                         const Matrix& forecast_ust, int hour, bool soft, Dispatch& d,
                         const SolverOptions& socp) {
  ConeProgram prog;
  std::vector<std::vector<int>> svg_q;
  FlowInputs in = stage2_inputs(gc, schedule, forecast_ust, {hour}, soft, prog, svg_q);
  DistFlowVars flow = detail::add_distflow(prog, gc, loads, in);
  ConeSolution sol = solve_socp(prog, socp);

  // Replace this hour's share of the aggregate values.
  auto hour_slack = [&](const std::vector<double>& x) {
    double s = 0.0;
    for (int i = 0; i < gc.net.num_buses(); ++i) {
      if (flow.over[i][0] >= 0) s += x[flow.over[i][0]] + x[flow.under[i][0]];
    }
    return s;
  };
  if (!sol.ok()) {
    // Worst status wins; infeasible dominates numerical trouble.
    if (d.ok() || sol.status == SolveStatus::kInfeasible) d.status = sol.status;
    return;
  }
  if (d.ok() && sol.status == SolveStatus::kOptimalInaccurate) d.status = sol.status;
  d.objective += sol.objective;
  d.slack_total += hour_slack(sol.x);
  d.soft = d.soft || soft;
  for (size_t s = 0; s < svg_q.size(); ++s) d.svg_q[s][hour] = sol.x[svg_q[s][0]];
  for (size_t g = 0; g < gc.fleet.pvs.size(); ++g) {
    d.duals_pbalance[g][hour] = sol.eq_duals[flow.p_row[gc.fleet.pvs[g].bus][0]];
  }
  detail::extract_state(gc, loads, in, flow, sol.x, d.state);
}

Dispatch solve_stage2(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                      const Matrix& forecast_ust, const Stage2Options& opts,
                      const SolverOptions& socp) {
  check_stage2_inputs(gc, loads, schedule, forecast_ust);
  const int T = loads.horizon();
  Dispatch d;
  d.status = SolveStatus::kOptimal;
  d.svg_q.assign(gc.fleet.svgs.size(), std::vector<double>(T, 0.0));
  d.duals_pbalance.assign(gc.fleet.pvs.size(), std::vector<double>(T, 0.0));
  d.state = detail::empty_state(gc.net.num_buses(), gc.net.num_branches(), T);
  const std::vector<int> hours = opts.hours.empty() ? all_hours(T) : opts.hours;
  for (int t : hours) {
    resolve_stage2_hour(gc, loads, schedule, forecast_ust, t, opts.soft_limits, d, socp);
  }
  return d;
}

// ---------------------------------------------------------------- stage 3

double droop_q(double p_act, double p_ust, double k, double q_capacity) {
  const double q = k * (p_act - p_ust);
  return std::clamp(q, -q_capacity, q_capacity);
}

NetworkState power_flow(const NetworkModel& net, const LoadProfile& loads,
                        const ZipCoefficients& zip, const Matrix& p_inj, const Matrix& q_inj,
                        const std::vector<double>& root_vsq, const PowerFlowOptions& opts) {
  const int nb = net.num_buses(), nl = net.num_branches();
  const int T = static_cast<int>(root_vsq.size());
  if (loads.num_buses() != nb || loads.horizon() != T) throw DataError("power flow: load shape");
  if (static_cast<int>(p_inj.size()) != nb || static_cast<int>(q_inj.size()) != nb) {
    throw DataError("power flow: injection shape");
  }
  NetworkState s = detail::empty_state(nb, nl, T);
  const auto& order = net.topology_order();
  std::vector<double> v(nb), l(nl, 0.0), P(nl), Q(nl), pl(nb), ql(nb);

  for (int t = 0; t < T; ++t) {
    if (!(root_vsq[t] > 0.0)) throw DataError("power flow: root voltage must be positive");
    std::fill(v.begin(), v.end(), root_vsq[t]);
    std::fill(l.begin(), l.end(), 0.0);
    bool converged = false;
    for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
      for (int i = 0; i < nb; ++i) {
        auto [p, q] = zip_eval(v[i], loads.rated_p[i][t], loads.rated_q[i][t], zip, ZipMode::kExact);
        pl[i] = p;
        ql[i] = q;
      }
      double change = 0.0;
      for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int k = *it;
        const Branch& b = net.branch(k);
        double p = pl[b.to] - p_inj[b.to][t] + b.r * l[k];
        double q = ql[b.to] - q_inj[b.to][t] + b.x * l[k];
        for (int c : net.child_branches(b.to)) {
          p += P[c];
          q += Q[c];
        }
        P[k] = p;
        Q[k] = q;
        const double nl_k = (p * p + q * q) / v[b.from];
        change = std::max(change, std::abs(nl_k - l[k]));
        l[k] = nl_k;
      }
      for (int k : order) {
        const Branch& b = net.branch(k);
        const double nv =
            v[b.from] - 2.0 * (b.r * P[k] + b.x * Q[k]) + (b.r * b.r + b.x * b.x) * l[k];
        if (!(nv > 0.0)) throw SolverError("power flow: voltage collapse at hour " + std::to_string(t));
        change = std::max(change, std::abs(nv - v[b.to]));
        v[b.to] = nv;
      }
      converged = change < opts.tol;
    }
    if (!converged) throw SolverError("power flow did not converge at hour " + std::to_string(t));

    const int root = net.root();
    for (int i = 0; i < nb; ++i) {
      auto [p, q] = zip_eval(v[i], loads.rated_p[i][t], loads.rated_q[i][t], zip, ZipMode::kExact);
      s.v_sq[i][t] = v[i];
      s.p_load[i][t] = p;
      s.q_load[i][t] = q;
      s.p_inj[i][t] = p_inj[i][t];
      s.q_inj[i][t] = q_inj[i][t];
    }
    double ps = s.p_load[root][t] - p_inj[root][t], qs = s.q_load[root][t] - q_inj[root][t];
    for (int c : net.child_branches(root)) {
      ps += P[c];
      qs += Q[c];
    }
    for (int k = 0; k < nl; ++k) {
      s.i_sq[k][t] = l[k];
      s.p_flow[k][t] = P[k];
      s.q_flow[k][t] = Q[k];
    }
    s.p_sub[t] = ps;
    s.q_sub[t] = qs;
  }
  return s;
}

int count_violations(const NetworkModel& net, const VoltageLimits& lim, const NetworkState& s) {
  int n = 0;
  for (int i = 0; i < net.num_buses(); ++i) {
    if (i == net.root()) continue;
    for (double vsq : s.v_sq[i]) {
      const double v = std::sqrt(std::max(vsq, 0.0));
      if (v < lim.v_min - 1e-6 || v > lim.v_max + 1e-6) ++n;
    }
  }
  return n;
}

RealTimeState run_stage3(const GridCase& gc, const LoadProfile& loads, const Schedule& schedule,
                         const Matrix& svg_q, const Matrix& p_act, const Matrix& p_ust,
                         bool droop_enabled) {
  const NetworkModel& net = gc.net;
  const DeviceFleet& fleet = gc.fleet;
  const int T = loads.horizon();
  check_stage2_inputs(gc, loads, schedule, p_ust);
  check_pv_matrix(p_act, fleet, T, "actual PV");
  if (svg_q.size() != fleet.svgs.size()) throw DataError("SVG dispatch rows mismatch");

  RealTimeState rt;
  Matrix p_inj(net.num_buses(), std::vector<double>(T, 0.0));
  Matrix q_inj = p_inj;
  rt.pv_q.assign(fleet.pvs.size(), std::vector<double>(T, 0.0));
  for (size_t g = 0; g < fleet.pvs.size(); ++g) {
    const auto& pv = fleet.pvs[g];
    for (int t = 0; t < T; ++t) {
      if (droop_enabled) rt.pv_q[g][t] = droop_q(p_act[g][t], p_ust[g][t], pv.droop_k, pv.q_capacity);
      p_inj[pv.bus][t] += p_act[g][t];
      q_inj[pv.bus][t] += rt.pv_q[g][t];
    }
  }
  for (size_t c = 0; c < fleet.cbs.size(); ++c) {
    for (int t = 0; t < T; ++t) q_inj[fleet.cbs[c].bus][t] += schedule.cb_q[c][t];
  }
  for (size_t s = 0; s < fleet.svgs.size(); ++s) {
    if (static_cast<int>(svg_q[s].size()) != T) throw DataError("SVG dispatch row length");
    for (int t = 0; t < T; ++t) q_inj[fleet.svgs[s].bus][t] += svg_q[s][t];
  }

  rt.state = power_flow(net, loads, gc.zip, p_inj, q_inj, schedule.root_vsq);
  const double hi = gc.limits.v_max * gc.limits.v_max, lo = gc.limits.v_min * gc.limits.v_min;
  rt.dv_over.assign(net.num_buses(), std::vector<double>(T, 0.0));
  rt.dv_under = rt.dv_over;
  double slack = 0.0;
  for (int i = 0; i < net.num_buses(); ++i) {
    if (i == net.root()) continue;
    for (int t = 0; t < T; ++t) {
      rt.dv_over[i][t] = std::max(0.0, rt.state.v_sq[i][t] - hi);
      rt.dv_under[i][t] = std::max(0.0, lo - rt.state.v_sq[i][t]);
      slack += rt.dv_over[i][t] + rt.dv_under[i][t];
    }
  }
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < net.num_branches(); ++k) rt.losses += net.branch(k).r * rt.state.i_sq[k][t];
    for (int i = 0; i < net.num_buses(); ++i) rt.load += rt.state.p_load[i][t];
    rt.substation_energy += rt.state.p_sub[t];
  }
  rt.f_rt = gc.weights.w_loss * rt.losses + gc.weights.w_load * rt.load;
  rt.penalty = gc.penalty * slack;
  rt.recourse = rt.f_rt + rt.penalty;
  rt.violations = count_violations(net, gc.limits, rt.state);
  return rt;
}

}  // namespace dfcvr
