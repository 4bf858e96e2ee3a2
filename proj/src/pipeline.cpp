#include <cmath>

#include "dfcvr/errors.hpp"
#include "dfcvr/harness.hpp"

namespace dfcvr {

using json = nlohmann::json;

const char* to_string(Mode m) {
  switch (m) {
    case Mode::kProposed: return "proposed";
    case Mode::kBase: return "base";
    case Mode::kOracle: return "oracle";
    case Mode::kReference: return "reference";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::kProposed, Mode::kBase, Mode::kOracle, Mode::kReference}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown mode '" + s + "' (proposed, base, oracle, reference)");
}

DayResult run_pipeline(const System& sys, const ForecastModel* model, const SiteSeries& features,
                       const Matrix& actual, Mode mode, int day, const MipOptions& mip) {
  const GridCase& gc = sys.gc;
  const int T = sys.loads.horizon();
  if (actual.size() != gc.fleet.pvs.size()) throw DataError("actuals: one row per PV unit");
  for (const auto& row : actual) {
    if (static_cast<int>(row.size()) != T) throw DataError("actuals: row length differs from the horizon");
  }
  DayResult r;
  r.day = day;
  r.mode = mode;

  if (mode == Mode::kReference) {
    r.forecasts.da = r.forecasts.ust = actual;
    r.schedule = make_schedule(std::vector<int>(T, 0),
                               std::vector<std::vector<int>>(gc.fleet.cbs.size(), std::vector<int>(T, 0)),
                               gc.fleet);
    r.dispatch.status = SolveStatus::kOptimal;
    r.dispatch.svg_q.assign(gc.fleet.svgs.size(), std::vector<double>(T, 0.0));
    r.rt = run_stage3(gc, sys.loads, r.schedule, r.dispatch.svg_q, actual, actual, false);
    return r;
  }

  if (mode == Mode::kOracle) {
    r.forecasts.da = r.forecasts.ust = actual;
  } else {
    if (!model) throw ConfigError(std::string(to_string(mode)) + " mode needs a forecast model");
    r.forecasts = predict(*model, features, true);
  }

  Stage1Options o1;
  o1.soft_fallback = true;
  const Stage1Result s1 = solve_stage1(gc, sys.loads, r.forecasts.da, o1, mip);
  if (!s1.ok()) throw SolverError(std::string("stage 1: ") + to_string(s1.status));
  r.schedule = s1.schedule;
  r.stage1_soft = s1.soft;

  r.dispatch = solve_stage2(gc, sys.loads, r.schedule, r.forecasts.ust, {}, mip.socp);
  if (r.dispatch.status == SolveStatus::kInfeasible) {
    Stage2Options o2;
    o2.soft_limits = true;
    r.dispatch = solve_stage2(gc, sys.loads, r.schedule, r.forecasts.ust, o2, mip.socp);
    r.stage2_soft = true;
  }
  if (!r.dispatch.ok()) throw SolverError(std::string("stage 2: ") + to_string(r.dispatch.status));

  r.rt = run_stage3(gc, sys.loads, r.schedule, r.dispatch.svg_q, actual, r.forecasts.ust, true);
  return r;
}

const MethodSummary& EvaluationReport::summary(size_t level, Mode m) const {
  for (const auto& [mode, s] : levels.at(level).methods) {
    if (mode == m) return s;
  }
  throw DataError(std::string("report has no method ") + to_string(m));
}

EvaluationReport evaluate(const RunConfig& cfg, const System& sys, const Dataset& d,
                          const std::vector<int>& days, const ForecastModel& proposed,
                          const ForecastModel& base) {
  if (days.empty()) throw DataError("evaluation needs at least one test day");
  const int npv = static_cast<int>(sys.gc.fleet.pvs.size());
  const double s_base = sys.gc.net.s_base_mva();
  MipOptions mip;
  mip.node_limit = cfg.stage1_node_limit;

  EvaluationReport rep;
  rep.days = days;
  rep.config = to_json(cfg);
  rep.seed = cfg.seed;

  std::vector<SiteSeries> feats;
  std::vector<Matrix> acts;
  double e_ref = 0.0;
  for (int k : days) {
    feats.push_back(day_features(d, k, npv));
    acts.push_back(day_actuals(d, k, s_base));
    const DayResult ref = run_pipeline(sys, nullptr, feats.back(), acts.back(), Mode::kReference, k, mip);
    rep.reference_energy.push_back(ref.rt.substation_energy);
    e_ref += ref.rt.substation_energy;
  }

  for (double level : cfg.svg_levels_mvar) {
    if (!(level >= 0.0)) throw ConfigError("SVG capacity levels must be non-negative");
    System s2 = sys;
    for (auto& svg : s2.gc.fleet.svgs) {
      svg.q_max = level / s_base;
      svg.q_min = std::min(svg.q_min, svg.q_max);
    }
    SweepLevel lv;
    lv.svg_mvar = level;
    for (Mode m : {Mode::kProposed, Mode::kBase, Mode::kOracle}) {
      const ForecastModel* model = m == Mode::kProposed ? &proposed : m == Mode::kBase ? &base : nullptr;
      MethodSummary ms;
      std::vector<std::vector<double>> pred_da(npv), pred_ust(npv), act(npv);
      for (size_t i = 0; i < days.size(); ++i) {
        DayResult r = run_pipeline(s2, model, feats[i], acts[i], m, days[i], mip);
        ms.energy += r.rt.substation_energy;
        ms.violations += r.rt.violations;
        ms.recourse += r.rt.recourse / static_cast<double>(days.size());
        for (int g = 0; g < npv; ++g) {
          pred_da[g].insert(pred_da[g].end(), r.forecasts.da[g].begin(), r.forecasts.da[g].end());
          pred_ust[g].insert(pred_ust[g].end(), r.forecasts.ust[g].begin(), r.forecasts.ust[g].end());
          act[g].insert(act[g].end(), acts[i][g].begin(), acts[i][g].end());
        }
        lv.days.push_back(std::move(r));
      }
      ms.savings_pct = 100.0 * (e_ref - ms.energy) / e_ref;
      for (int g = 0; g < npv; ++g) {
        const double cap = sys.gc.fleet.pvs[g].capacity;
        ms.nrmse_da.push_back(nrmse(pred_da[g], act[g], NrmseBase::kCapacity, cap));
        ms.nrmse_ust.push_back(nrmse(pred_ust[g], act[g], NrmseBase::kCapacity, cap));
      }
      lv.methods.emplace_back(m, ms);
    }
    rep.levels.push_back(std::move(lv));
  }
  return rep;
}

json report_json(const EvaluationReport& r) {
  json j;
  j["schema"] = "dfcvr.report/1";
  j["seed"] = r.seed;
  j["config"] = r.config;
  j["days"] = r.days;
  j["reference_energy_pu"] = r.reference_energy;
  j["savings_reference"] =
      "substation active energy with taps at 0, capacitor banks off, SVGs at 0 and droop off";
  j["levels"] = json::array();
  for (const auto& lv : r.levels) {
    json l;
    l["svg_mvar"] = lv.svg_mvar;
    l["methods"] = json::object();
    for (const auto& [m, s] : lv.methods) {
      l["methods"][to_string(m)] = {{"energy_pu", s.energy},
                                    {"energy_savings_pct", s.savings_pct},
                                    {"violation_count", s.violations},
                                    {"mean_recourse", s.recourse},
                                    {"nrmse_da", s.nrmse_da},
                                    {"nrmse_ust", s.nrmse_ust}};
    }
    l["days"] = json::array();
    for (const auto& d : lv.days) {
      l["days"].push_back({{"day", d.day},
                           {"method", to_string(d.mode)},
                           {"energy_pu", d.rt.substation_energy},
                           {"violations", d.rt.violations},
                           {"recourse", d.rt.recourse},
                           {"oltc_tap", d.schedule.oltc_tap},
                           {"stage1_soft", d.stage1_soft},
                           {"stage2_soft", d.stage2_soft}});
    }
    j["levels"].push_back(std::move(l));
  }
  return j;
}

json day_json(const DayResult& r, const NetworkModel& net) {
  json j;
  j["schema"] = "dfcvr.day/1";
  j["day"] = r.day;
  j["method"] = to_string(r.mode);
  j["oltc_tap"] = r.schedule.oltc_tap;
  j["cb_step"] = r.schedule.cb_step;
  j["svg_q_pu"] = r.dispatch.svg_q;
  j["pv_q_pu"] = r.rt.pv_q;
  j["forecast_da_pu"] = r.forecasts.da;
  j["forecast_ust_pu"] = r.forecasts.ust;
  Matrix vmag;
  for (const auto& row : r.rt.state.v_sq) {
    std::vector<double> v;
    for (double x : row) v.push_back(std::sqrt(x));
    vmag.push_back(v);
  }
  j["bus_ids"] = net.bus_ids();
  j["v_pu"] = vmag;
  j["metrics"] = {{"substation_energy_pu", r.rt.substation_energy},
                  {"losses_pu", r.rt.losses},
                  {"load_pu", r.rt.load},
                  {"f_rt", r.rt.f_rt},
                  {"penalty", r.rt.penalty},
                  {"recourse", r.rt.recourse},
                  {"violations", r.rt.violations}};
  j["stage1_soft"] = r.stage1_soft;
  j["stage2_soft"] = r.stage2_soft;
  return j;
}

void validate_report(const json& j) {
  auto need = [](const json& o, const char* key, json::value_t type, const std::string& where) {
    if (!o.is_object() || !o.contains(key)) throw DataError("report: missing " + where + key);
    const json& v = o.at(key);
    bool ok = v.type() == type;
    if (type == json::value_t::number_float) ok = v.is_number();
    if (type == json::value_t::number_unsigned) ok = v.is_number_integer() && v.get<long long>() >= 0;
    if (!ok) throw DataError("report: wrong type for " + where + key);
  };
  if (!j.is_object() || j.value("schema", "") != "dfcvr.report/1") throw DataError("report: unknown schema");
  need(j, "seed", json::value_t::number_unsigned, "");
  need(j, "config", json::value_t::object, "");
  need(j, "days", json::value_t::array, "");
  need(j, "reference_energy_pu", json::value_t::array, "");
  need(j, "levels", json::value_t::array, "");
  if (j["levels"].empty()) throw DataError("report: no sweep levels");
  for (const auto& l : j["levels"]) {
    need(l, "svg_mvar", json::value_t::number_float, "levels[].");
    need(l, "methods", json::value_t::object, "levels[].");
    need(l, "days", json::value_t::array, "levels[].");
    for (const char* m : {"proposed", "base", "oracle"}) {
      need(l["methods"], m, json::value_t::object, "levels[].methods.");
      const json& s = l["methods"][m];
      const std::string w = std::string("levels[].methods.") + m + ".";
      need(s, "energy_savings_pct", json::value_t::number_float, w);
      need(s, "violation_count", json::value_t::number_unsigned, w);
      need(s, "mean_recourse", json::value_t::number_float, w);
      need(s, "nrmse_da", json::value_t::array, w);
      need(s, "nrmse_ust", json::value_t::array, w);
    }
  }
}

}  // namespace dfcvr
