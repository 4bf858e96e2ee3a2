#include "dfcvr/errors.hpp"
#include "dfcvr/harness.hpp"

namespace dfcvr {

Dataset synth_for(const RunConfig& c, const System& sys) {
  SynthSpec s = c.synth;
  s.capacity_kw.clear();
  for (const auto& pv : sys.gc.fleet.pvs) s.capacity_kw.push_back(pv.capacity * sys.gc.net.s_base_mva() * 1000.0);
  return synth_dataset(s);
}

ForecastModel train_mse(const RunConfig& c, const System& sys, const Dataset& d) {
  if (d.sites.size() != sys.gc.fleet.pvs.size()) {
    throw DataError("dataset has " + std::to_string(d.sites.size()) + " PV sites but the feeder has " +
                    std::to_string(sys.gc.fleet.pvs.size()) + " PV units");
  }
  SiteSeries f;
  Matrix a;
  training_samples(d, d.train_days, sys.gc.net.s_base_mva(), f, a);
  std::vector<double> cap;
  for (const auto& pv : sys.gc.fleet.pvs) cap.push_back(pv.capacity);
  return fit_mse(f, a, c.ridge_lambda, cap);
}

std::vector<int> scenario_days(const RunConfig& c, const Dataset& d) {
  std::vector<int> days = d.train_days;
  if (c.train_scenarios > 0 && c.train_scenarios < static_cast<int>(days.size())) {
    days.resize(c.train_scenarios);
  }
  return days;
}

TrainResult train_bilevel(const RunConfig& c, const System& sys, const Dataset& d,
                          const ForecastModel& warm_start) {
  const auto scenarios = make_scenarios(d, scenario_days(c, d), sys);
  TrainConfig tc = c.trainer;
  tc.deploy_mip.node_limit = c.stage1_node_limit;
  return train(sys.gc, scenarios, warm_start, tc);
}

}  // namespace dfcvr
