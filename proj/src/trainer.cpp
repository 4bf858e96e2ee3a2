#include "dfcvr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <ostream>

#include "distflow.hpp"
#include "dfcvr/errors.hpp"

namespace dfcvr {

namespace {

// Merges repeated variables; cut rows otherwise carry one term per
// (coefficient, hour) pair.
AffineExpr collapse(const AffineExpr& e) {
  std::map<int, double> acc;
  for (const auto& t : e.terms) acc[t.var] += t.coef;
  AffineExpr out(e.constant);
  for (const auto& [v, c] : acc) {
    if (c != 0.0) out.add(v, c);
  }
  return out;
}

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError(std::string("cut: non-finite ") + what);
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Evaluation {
  std::vector<Schedule> schedules;
  std::vector<Cut> cuts;
  std::vector<double> q;
  double z = 0.0;
};

}  // namespace

void validate_scenarios(const GridCase& gc, const std::vector<Scenario>& scenarios) {
  if (scenarios.empty()) throw DataError("no training scenarios");
  const size_t npv = gc.fleet.pvs.size();
  double total = 0.0;
  for (const auto& sc : scenarios) {
    const std::string tag = "scenario " + std::to_string(sc.id) + ": ";
    if (!(sc.weight > 0.0) || !std::isfinite(sc.weight)) throw DataError(tag + "weight must be positive");
    total += sc.weight;
    if (sc.loads.num_buses() != gc.net.num_buses()) throw DataError(tag + "load rows differ from buses");
    const int T = sc.loads.horizon();
    if (T == 0) throw DataError(tag + "empty horizon");
    if (sc.features.size() != npv || sc.pv_actual.size() != npv) {
      throw DataError(tag + "expected one feature series and one actual row per PV unit");
    }
    for (size_t g = 0; g < npv; ++g) {
      if (static_cast<int>(sc.features[g].size()) != T ||
          static_cast<int>(sc.pv_actual[g].size()) != T) {
        throw DataError(tag + "series length differs from the load horizon");
      }
      for (double v : sc.pv_actual[g]) {
        if (!std::isfinite(v)) throw DataError(tag + "non-finite PV actual");
      }
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("scenario weights must sum to one");
}

std::vector<double> device_repr(const Schedule& s, const DeviceFleet& fleet) {
  std::vector<double> r;
  for (int tap : s.oltc_tap) r.push_back(fleet.oltc.v_base + tap * fleet.oltc.dv_step);
  for (const auto& row : s.cb_q) r.insert(r.end(), row.begin(), row.end());
  return r;
}

std::vector<double> flatten(const Matrix& m) {
  std::vector<double> out;
  for (const auto& row : m) out.insert(out.end(), row.begin(), row.end());
  return out;
}

double Cut::rhs(const std::vector<double>& r, const std::vector<double>& ust) const {
  if (r.size() != anchor_r.size() || ust.size() != anchor_ust.size()) {
    throw DataError("cut evaluated at a point of the wrong dimension");
  }
  double v = q_value;
  for (size_t j = 0; j < r.size(); ++j) v += pi_x[j] * (r[j] - anchor_r[j]);
  for (size_t i = 0; i < ust.size(); ++i) v += pi_p[i] * (ust[i] - anchor_ust[i]);
  return v;
}

Cut make_cut(double q_value, std::vector<double> pi_x, std::vector<double> pi_p,
             std::vector<double> anchor_r, std::vector<double> anchor_ust, int scenario) {
  if (pi_x.size() != anchor_r.size()) throw DataError("cut: pi_x and anchor_r differ in size");
  if (pi_p.size() != anchor_ust.size()) throw DataError("cut: pi_p and anchor_ust differ in size");
  if (!std::isfinite(q_value)) throw DataError("cut: non-finite recourse value");
  check_finite(pi_x, "pi_x");
  check_finite(pi_p, "pi_p");
  check_finite(anchor_r, "anchor_r");
  check_finite(anchor_ust, "anchor_ust");
  Cut c;
  c.scenario = scenario;
  c.q_value = q_value;
  c.pi_x = std::move(pi_x);
  c.pi_p = std::move(pi_p);
  c.anchor_r = std::move(anchor_r);
  c.anchor_ust = std::move(anchor_ust);
  return c;
}

// ---------------------------------------------------------------- recourse

Recourse evaluate_recourse(const GridCase& gc, const Scenario& sc, const Schedule& schedule,
                           const Matrix& forecast_ust, const SolverOptions& socp) {
  Recourse rec;
  Stage2Options o;
  o.soft_limits = true;
  rec.dispatch = solve_stage2(gc, sc.loads, schedule, forecast_ust, o, socp);
  if (!rec.dispatch.ok()) {
    throw SolverError(std::string("stage 2 (soft) failed: ") + to_string(rec.dispatch.status));
  }
  rec.rt = run_stage3(gc, sc.loads, schedule, rec.dispatch.svg_q, sc.pv_actual, forecast_ust);
  rec.q = rec.rt.recourse;
  return rec;
}

std::vector<double> discrete_sensitivity(const GridCase& gc, const Scenario& sc,
                                         const Schedule& schedule, const Matrix& forecast_ust,
                                         const Recourse& base, SensitivityInfo* info,
                                         const SolverOptions& socp) {
  const DeviceFleet& fleet = gc.fleet;
  const int T = schedule.horizon();
  const std::vector<int> taps = admissible_taps(gc);
  const int ncb = static_cast<int>(fleet.cbs.size());
  const std::vector<double> r0 = device_repr(schedule, fleet);
  std::vector<double> slope(r0.size(), 0.0);
  if (info) {
    info->q_perturbed.assign(r0.size(), base.q);
    info->delta_r.assign(r0.size(), 0.0);
    info->stuck.clear();
  }

  for (int dev = -1; dev < ncb; ++dev) {
    const int lo = dev < 0 ? taps.front() : 0;
    const int hi = dev < 0 ? taps.back() : fleet.cbs[dev].step_max;
    for (int t = 0; t < T; ++t) {
      const int j = (dev + 1) * T + t;
      const int level = dev < 0 ? schedule.oltc_tap[t] : schedule.cb_step[dev][t];
      int step = 0;
      if (level + 1 <= hi) {
        step = 1;
      } else if (level - 1 >= lo) {
        step = -1;
      } else {
        if (info) info->stuck.push_back(j);
        continue;
      }
      std::vector<int> tp = schedule.oltc_tap;
      std::vector<std::vector<int>> cp = schedule.cb_step;
      (dev < 0 ? tp[t] : cp[dev][t]) += step;
      const Schedule pert = make_schedule(tp, cp, fleet);

      // Stage 2 separates by hour, so only hour t changes.
      Stage2Options o;
      o.soft_limits = true;
      o.hours = {t};
      const Dispatch dh = solve_stage2(gc, sc.loads, pert, forecast_ust, o, socp);
      if (!dh.ok()) throw SolverError(std::string("stage 2 (perturbed) failed: ") + to_string(dh.status));
      Matrix svg = base.dispatch.svg_q;
      for (size_t s = 0; s < svg.size(); ++s) svg[s][t] = dh.svg_q[s][t];
      const RealTimeState rt = run_stage3(gc, sc.loads, pert, svg, sc.pv_actual, forecast_ust);

      const double dr = device_repr(pert, fleet)[j] - r0[j];
      slope[j] = (rt.recourse - base.q) / dr;
      if (info) {
        info->q_perturbed[j] = rt.recourse;
        info->delta_r[j] = dr;
      }
    }
  }
  return slope;
}

std::vector<double> forecast_sensitivity(const Dispatch& d) {
  if (!d.ok()) throw SolverError("forecast sensitivity: dispatch has no duals");
  return flatten(d.duals_pbalance);
}

// ---------------------------------------------------------------- master

MasterProgram build_master(const GridCase& gc, const std::vector<Scenario>& scenarios,
                           const std::vector<Cut>& pool, const ForecastModel& center,
                           const MasterOptions& opts) {
  validate_scenarios(gc, scenarios);
  center.validate();
  const int npv = static_cast<int>(gc.fleet.pvs.size());
  if (center.sites() != npv) throw DataError("master: model sites differ from PV units");
  if (!(opts.radius >= 0.0)) throw ConfigError("trust-region radius must be non-negative");
  if (opts.gamma_da < 0.0 || opts.gamma_ust < 0.0) throw ConfigError("gammas must be non-negative");

  MasterProgram mp;
  ConeProgram& prog = mp.prog;
  MasterVars& mv = mp.vars;

  auto add_eta = [&](const std::vector<FeatureVector>& c, const char* name) {
    std::vector<std::vector<int>> ids(npv);
    for (int g = 0; g < npv; ++g) {
      for (int j = 0; j < kNumFeatures; ++j) {
        const bool fixed = j < kNumRawFeatures && center.norm.scale[j] == 0.0;
        const double r = fixed ? 0.0 : opts.radius;
        ids[g].push_back(prog.add_variable(c[g][j] - r, c[g][j] + r,
                                           std::string(name) + "[" + std::to_string(g) + "," +
                                               kFeatureNames[std::min(j, kNumRawFeatures - 1)] +
                                               (j == kNumRawFeatures ? "+bias" : "") + "]"));
      }
    }
    return ids;
  };
  mv.eta_da = add_eta(center.eta_da, "eta_da");
  mv.eta_ust = add_eta(center.eta_ust, "eta_ust");

  for (const auto& sc : scenarios) {
    const int T = sc.loads.horizon();
    const std::string pre = "s" + std::to_string(sc.id) + ".";
    std::vector<std::vector<AffineExpr>> pda(npv), pust(npv);
    for (int g = 0; g < npv; ++g) {
      for (int t = 0; t < T; ++t) {
        const FeatureVector xi = center.norm.apply(sc.features[g][t]);
        AffineExpr da, ust;
        for (int j = 0; j < kNumFeatures; ++j) {
          if (xi[j] == 0.0) continue;
          da.add(mv.eta_da[g][j], xi[j]);
          ust.add(mv.eta_ust[g][j], xi[j]);
        }
        pda[g].push_back(da);
        pust[g].push_back(ust);
      }
    }

    detail::Stage1BlockInputs bi;
    bi.pv_p = pda;
    bi.soft = opts.soft_stage1;
    bi.objective_weight = 0.0;
    bi.switch_cost = 0.0;
    bi.prefix = pre;
    const Stage1Vars s1 = detail::add_stage1_block(prog, mp.ispec, gc, sc.loads, bi);
    if (!opts.anchors.empty() && opts.step_radius >= 0) {
      const size_t s = mv.stage1.size();
      if (opts.anchors.size() != scenarios.size() || opts.anchors[s].horizon() != T) {
        throw DataError("master: one anchor schedule per scenario expected");
      }
      const Schedule& a = opts.anchors[s];
      const int rad = opts.step_radius;
      auto box = [&](int var, int level) {
        prog.set_bounds(var, std::max(prog.lower(var), static_cast<double>(level - rad)),
                        std::min(prog.upper(var), static_cast<double>(level + rad)));
      };
      for (int t = 0; t < T; ++t) {
        box(s1.tap_level[t], a.oltc_tap[t]);
        for (size_t k = 0; k < s1.tap_values.size(); ++k) {
          if (std::abs(s1.tap_values[k] - a.oltc_tap[t]) > rad) prog.set_bounds(s1.tap_onehot[t][k], 0.0, 0.0);
        }
        for (size_t c = 0; c < s1.cb_level.size(); ++c) box(s1.cb_level[c][t], a.cb_step[c][t]);
      }
    }

    std::vector<AffineExpr> r;
    for (int t = 0; t < T; ++t) {
      r.push_back(AffineExpr({{s1.tap_level[t], gc.fleet.oltc.dv_step}}, gc.fleet.oltc.v_base));
    }
    for (size_t c = 0; c < gc.fleet.cbs.size(); ++c) {
      for (int t = 0; t < T; ++t) r.push_back(AffineExpr::var(s1.cb_level[c][t], gc.fleet.cbs[c].dq_step));
    }

    const int theta = prog.add_variable(opts.theta_floor, kInf, pre + "theta");
    prog.set_cost(theta, sc.weight);

    auto add_penalty = [&](const std::vector<std::vector<AffineExpr>>& p, double gamma,
                           const char* name) {
      if (gamma == 0.0) return -1;
      const int tau = prog.add_variable(0.0, kInf, pre + name);
      prog.set_cost(tau, gamma);
      std::vector<AffineExpr> w;
      for (int g = 0; g < npv; ++g) {
        for (int t = 0; t < T; ++t) w.push_back(p[g][t] - AffineExpr(sc.pv_actual[g][t]));
      }
      // tau >= ||w||^2
      prog.add_rotated_soc(AffineExpr::var(tau, 0.5), AffineExpr(1.0), std::move(w));
      return tau;
    };
    mv.tau_da.push_back(add_penalty(pda, opts.gamma_da, "tau_da"));
    mv.tau_ust.push_back(add_penalty(pust, opts.gamma_ust, "tau_ust"));

    mv.stage1.push_back(s1);
    mv.theta.push_back(theta);
    mv.p_da.push_back(std::move(pda));
    mv.p_ust.push_back(std::move(pust));
    mv.r.push_back(std::move(r));
  }

  for (const Cut& c : pool) {
    if (c.scenario < 0 || c.scenario >= static_cast<int>(scenarios.size())) {
      throw DataError("cut refers to an unknown scenario");
    }
    const auto& r = mv.r[c.scenario];
    const auto& pust = mv.p_ust[c.scenario];
    const int T = scenarios[c.scenario].loads.horizon();
    if (c.anchor_r.size() != r.size() || c.anchor_ust.size() != static_cast<size_t>(npv * T)) {
      throw DataError("cut dimensions differ from the master problem");
    }
    // theta - pi_x'r - pi_p'ust >= q - pi_x'r_k - pi_p'ust_k
    AffineExpr e = AffineExpr::var(mv.theta[c.scenario]);
    e.constant = -c.q_value + dot(c.pi_x, c.anchor_r) + dot(c.pi_p, c.anchor_ust);
    for (size_t j = 0; j < r.size(); ++j) e += -c.pi_x[j] * r[j];
    for (int g = 0; g < npv; ++g) {
      for (int t = 0; t < T; ++t) e += -c.pi_p[g * T + t] * pust[g][t];
    }
    prog.add_nonneg(collapse(e));
  }
  return mp;
}

ForecastModel master_model(const MasterProgram& mp, const ForecastModel& center,
                           const std::vector<double>& x) {
  ForecastModel m = center;
  for (size_t g = 0; g < mp.vars.eta_da.size(); ++g) {
    for (int j = 0; j < kNumFeatures; ++j) {
      m.eta_da[g][j] = x[mp.vars.eta_da[g][j]];
      m.eta_ust[g][j] = x[mp.vars.eta_ust[g][j]];
    }
  }
  return m;
}

double forecast_penalty(const ForecastModel& m, const std::vector<Scenario>& scenarios,
                        double gamma_da, double gamma_ust) {
  double total = 0.0;
  for (const auto& sc : scenarios) {
    const Forecasts f = predict(m, sc.features, false);
    for (size_t g = 0; g < sc.pv_actual.size(); ++g) {
      for (size_t t = 0; t < sc.pv_actual[g].size(); ++t) {
        const double a = sc.pv_actual[g][t];
        total += gamma_da * (f.da[g][t] - a) * (f.da[g][t] - a) +
                 gamma_ust * (f.ust[g][t] - a) * (f.ust[g][t] - a);
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------- loop

void TrainingTrace::write_csv(std::ostream& os) const {
  os << "iteration,lb,ub,gap,z,cuts,seconds,z_master\n";
  const auto old = os.precision(12);
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.lb << ',' << r.ub << ',' << r.gap << ',' << r.z << ','
       << r.cuts << ',' << std::fixed << std::setprecision(3) << r.seconds << std::defaultfloat
       << std::setprecision(12) << ',' << r.z_master << '\n';
  }
  os.precision(old);
}

namespace {

// SP solves, sensitivities and cuts for every scenario at the given
// coefficients and schedules.
Evaluation evaluate_point(const GridCase& gc, const std::vector<Scenario>& scenarios,
                          const ForecastModel& m, std::vector<Schedule> schedules,
                          const TrainConfig& cfg) {
  Evaluation ev;
  ev.schedules = std::move(schedules);
  for (size_t s = 0; s < scenarios.size(); ++s) {
    const Scenario& sc = scenarios[s];
    const Matrix ust = predict(m, sc.features, false).ust;
    const Recourse rec = evaluate_recourse(gc, sc, ev.schedules[s], ust, cfg.socp);
    std::vector<double> pix =
        discrete_sensitivity(gc, sc, ev.schedules[s], ust, rec, nullptr, cfg.socp);
    std::vector<double> pip = forecast_sensitivity(rec.dispatch);
    ev.cuts.push_back(make_cut(rec.q, std::move(pix), std::move(pip),
                               device_repr(ev.schedules[s], gc.fleet), flatten(ust),
                               static_cast<int>(s)));
    ev.q.push_back(rec.q);
    ev.z += sc.weight * rec.q;
  }
  ev.z += forecast_penalty(m, scenarios, cfg.gamma_da, cfg.gamma_ust);
  return ev;
}

// The coefficients scored the way they are used online: clipped forecasts,
// Stage 1 re-solved on the day-ahead forecast, then the recourse. Stage 1
// failures make the point unusable (infinite Z).
struct Deployment {
  std::vector<Schedule> schedules;
  double z = 0.0;
  int hard = 0;  // scenarios scheduled without soft limits
};

Deployment deploy(const GridCase& gc, const std::vector<Scenario>& scenarios, const ForecastModel& m,
                  const TrainConfig& cfg) {
  Deployment d;
  for (const auto& sc : scenarios) {
    const Forecasts f = predict(m, sc.features, true);
    Stage1Options o;
    o.soft_fallback = true;
    const Stage1Result r1 = solve_stage1(gc, sc.loads, f.da, o, cfg.deploy_mip);
    if (!r1.ok()) {
      d.z = kInf;
      return d;
    }
    if (!r1.soft) ++d.hard;
    d.schedules.push_back(r1.schedule);
    d.z += sc.weight * evaluate_recourse(gc, sc, r1.schedule, f.ust, cfg.socp).q;
  }
  d.z += forecast_penalty(m, scenarios, cfg.gamma_da, cfg.gamma_ust);
  return d;
}

bool same_anchor(const Cut& a, const Cut& b) {
  return a.scenario == b.scenario && a.anchor_r == b.anchor_r && a.anchor_ust == b.anchor_ust;
}

double relative_gap(double lb, double ub) {
  if (!std::isfinite(lb) || lb == 0.0) return kInf;
  return (ub - lb) / std::abs(lb);
}

}  // namespace

TrainResult train(const GridCase& gc, const std::vector<Scenario>& scenarios,
                  const ForecastModel& warm_start, const TrainConfig& cfg) {
  validate_scenarios(gc, scenarios);
  warm_start.validate();
  if (cfg.k_max < 1) throw ConfigError("k_max must be at least 1");
  if (!(cfg.epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  TrainResult res;
  res.model = warm_start;

  // Warm start: cuts at the schedules the MSE coefficients get online.
  Deployment d0 = deploy(gc, scenarios, warm_start, cfg);
  if (!std::isfinite(d0.z)) throw ConfigError("stage 1 has no schedule under the warm-start forecasts");
  if (d0.hard == 0) {
    throw ConfigError("every training scenario is infeasible under the warm-start forecasts");
  }
  Evaluation ev = evaluate_point(gc, scenarios, warm_start, std::move(d0.schedules), cfg);
  res.cuts = ev.cuts;

  double lb = -kInf, ub = d0.z;
  TraceRow row0;
  row0.lb = lb;
  row0.ub = ub;
  row0.z = d0.z;
  row0.z_master = ev.z;
  row0.cuts = static_cast<int>(res.cuts.size());
  row0.seconds = elapsed();
  res.trace.rows.push_back(row0);
  if (cfg.verbose) std::cerr << "train: warm start Z = " << d0.z << "\n";

  ForecastModel center = warm_start;
  res.stop_reason = "iteration limit";
  for (int k = 1; k <= cfg.k_max; ++k) {
    MasterOptions mo;
    mo.gamma_da = cfg.gamma_da;
    mo.gamma_ust = cfg.gamma_ust;
    mo.radius = cfg.rho;
    mo.theta_floor = cfg.theta_floor;
    mo.anchors = ev.schedules;
    mo.step_radius = cfg.step_radius;
    TraceRow row;
    row.iteration = k;

    MasterProgram mp;
    MipSolution sol;
    try {
      mp = build_master(gc, scenarios, res.cuts, center, mo);
      sol = solve_misocp(mp.prog, mp.ispec, cfg.mip);
      if (sol.status == MipStatus::kInfeasible) {
        mo.soft_stage1 = true;
        row.master_soft = true;
        mp = build_master(gc, scenarios, res.cuts, center, mo);
        sol = solve_misocp(mp.prog, mp.ispec, cfg.mip);
      }
      if (!sol.has_incumbent()) {
        throw SolverError(std::string("master problem: ") + to_string(sol.status));
      }
    } catch (const SolverError& e) {
      res.failed = true;
      res.stop_reason = e.what();
      break;
    }

    lb = std::max(lb, std::min(sol.best_bound, sol.objective));
    const ForecastModel eta = master_model(mp, center, sol.x);
    std::vector<Schedule> sched;
    for (const auto& s1 : mp.vars.stage1) sched.push_back(detail::schedule_from(s1, sol.x, gc.fleet));
    for (int th : mp.vars.theta) row.theta.push_back(sol.x[th]);

    try {
      ev = evaluate_point(gc, scenarios, eta, std::move(sched), cfg);
    } catch (const SolverError& e) {
      res.failed = true;
      res.stop_reason = e.what();
      break;
    }
    double z = kInf;
    try {
      z = deploy(gc, scenarios, eta, cfg).z;
    } catch (const SolverError& e) {
      res.failed = true;
      res.stop_reason = e.what();
      break;
    }
    if (z < ub) {
      ub = z;
      res.model = eta;
      res.incumbent_iteration = k;
    }
    row.lb = lb;
    row.ub = ub;
    row.z = z;
    row.z_master = ev.z;
    row.gap = relative_gap(lb, ub);
    if (cfg.verbose) {
      std::cerr << "train: k=" << k << " LB=" << lb << " UB=" << ub << " Z=" << z << " Zmp=" << ev.z
                << " gap=" << row.gap << " nodes=" << sol.nodes << "\n";
    }
    if (row.gap <= cfg.epsilon) {
      row.cuts = static_cast<int>(res.cuts.size());
      row.seconds = elapsed();
      res.trace.rows.push_back(row);
      res.converged = true;
      res.stop_reason = "gap";
      break;
    }
    for (auto& c : ev.cuts) {
      const bool dup = std::any_of(res.cuts.begin(), res.cuts.end(),
                                   [&](const Cut& o) { return same_anchor(o, c); });
      if (!dup) res.cuts.push_back(std::move(c));
    }
    row.cuts = static_cast<int>(res.cuts.size());
    row.seconds = elapsed();
    res.trace.rows.push_back(row);
    center = eta;
  }
  return res;
}

}  // namespace dfcvr
