#pragma once

// Two-bus training scenarios with hand-made features.

#include <algorithm>

#include "dfcvr/forecast.hpp"
#include "dfcvr/trainer.hpp"
#include "toy_cases.hpp"

namespace dfcvr::testing {

inline RawFeatures raw(int day, int hour, double ghi, double temp) {
  return {2020, 6, static_cast<double>(day), static_cast<double>(hour), 0, ghi, 1010, 180, 3, temp, 50};
}

// Two-bus toy scenario at midday hours; PV follows GHI with an offset so
// the MSE fit is not exact.
inline Scenario toy_scenario(const ToyCase& tc, int id, double clear, double bias, int T = 2) {
  Scenario sc;
  sc.id = id;
  sc.loads = tc.loads;
  std::vector<RawFeatures> row;
  std::vector<double> act;
  for (int t = 0; t < T; ++t) {
    const double ghi = clear * (700.0 + 120.0 * t);
    row.push_back(raw(id + 1, 11 + t, ghi, 24.0 + t + id));
    act.push_back(std::clamp(0.4 * 0.85 * ghi / 1000.0 + bias, 0.0, 0.4));
  }
  sc.features = {row};
  sc.pv_actual = {act};
  return sc;
}

inline std::vector<Scenario> toy_set(const ToyCase& tc, int n, int T = 2) {
  const double clear[] = {1.0, 0.7, 0.85, 0.6, 0.95};
  const double bias[] = {0.02, -0.03, 0.01, 0.0, -0.01};
  std::vector<Scenario> out;
  for (int s = 0; s < n; ++s) {
    out.push_back(toy_scenario(tc, s, clear[s % 5], bias[s % 5], T));
    out.back().weight = 1.0 / n;
  }
  return out;
}

// Ridge fit over the five toy days.
inline ForecastModel warm_model(const ToyCase& tc, double lambda = 1e-3) {
  const auto scs = toy_set(tc, 5);
  SiteSeries f(1);
  Matrix a(1);
  for (const auto& sc : scs) {
    f[0].insert(f[0].end(), sc.features[0].begin(), sc.features[0].end());
    a[0].insert(a[0].end(), sc.pv_actual[0].begin(), sc.pv_actual[0].end());
  }
  return fit_mse(f, a, lambda, {tc.gc.fleet.pvs[0].capacity});
}

}  // namespace dfcvr::testing
