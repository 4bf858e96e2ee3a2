#pragma once

// Data ingestion and synthesis, run configuration, the online sequential
// pipeline with its baselines, and evaluation reports.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfcvr/forecast.hpp"
#include "dfcvr/stages.hpp"
#include "dfcvr/trainer.hpp"

namespace dfcvr {

// ---------------------------------------------------------------- data

// Hourly records with weather shared by all sites and one PV column per site.
struct Dataset {
  int resolution_minutes = 60;
  std::vector<std::string> sites;
  std::vector<RawFeatures> features;  // [record]
  Matrix pv_kw;                       // [site][record]
  std::vector<int> train_days, test_days;

  int records() const { return static_cast<int>(features.size()); }
  int days() const { return records() / 24; }
};

inline constexpr std::array<const char*, kNumRawFeatures> kCsvColumns{
    "Year", "Month", "Day", "Hour", "Minute", "GHI",
    "Pressure", "WindDirection", "WindSpeed", "Temperature", "Humidity"};

// Columns kCsvColumns followed by one or more PV_kW[_<site>] columns.
// Records must be hourly, chronological, gap-free and cover whole days
// starting at 00:00. Throws DataError naming the offending line or the
// first missing timestamp. The result carries the 80/20 day split.
Dataset ingest_csv(const std::string& path);
void write_csv(const Dataset& d, const std::string& path);

// First round(0.8 days) days for training (at least one day left for
// testing), the rest for testing. Throws DataError for fewer than 2 days.
void split_days(Dataset& d, double train_fraction = 0.8);

struct SynthSpec {
  int days = 10;
  std::vector<double> capacity_kw{400.0};  // one entry per site
  double noise = 0.05;  // daylight PV noise, fraction of capacity (std)
  unsigned seed = 1;
  int year = 2020, month = 6, day = 1;
};

// Clear-sky bell-shaped irradiance scaled by a random daily clearness,
// random weather covariates, and PV = 0.85 capacity GHI / 1000 plus seeded
// daylight noise (clipped to [0, capacity]). Nights are exactly zero.
Dataset synth_dataset(const SynthSpec& spec);

// Ratio between PV output and GHI in the synthetic generator, per kW of
// capacity.
inline constexpr double kSynthPvPerGhi = 0.85 / 1000.0;

// Features [site][t] and actuals [site][t] (p.u. on s_base) of one day.
SiteSeries day_features(const Dataset& d, int day, int sites);
Matrix day_actuals(const Dataset& d, int day, double s_base_mva);

// Per-site training samples for fit_mse over the given days.
void training_samples(const Dataset& d, const std::vector<int>& days, double s_base_mva,
                      SiteSeries& features, Matrix& actual);

// ---------------------------------------------------------------- config

struct RunConfig {
  std::string network_dir = "data/ieee33";
  double s_base_mva = 10.0;
  double v_base_kv = 12.66;
  std::vector<double> load_shape;  // 24 multipliers
  nlohmann::json devices;          // device document (kW/kVAR units)
  VoltageLimits limits;
  ZipCoefficients zip = kFeederZip;
  StageWeights weights;
  double penalty = 1e4;
  double switch_cost = 1e-6;

  SynthSpec synth;
  double ridge_lambda = 1e-3;
  int train_scenarios = 5;  // 0: all training days

  TrainConfig trainer;
  int stage1_node_limit = 20;

  std::vector<double> svg_levels_mvar{0.2, 0.4, 0.6};
  unsigned seed = 1;
};

// Defaults, overridden by the sections network, devices, weights, trainer,
// sweep and data of a JSON document. Unknown keys are rejected. Relative
// paths resolve against `base_dir`.
RunConfig default_config();
RunConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);

// The daily multiplier used when the configuration gives none.
std::vector<double> default_load_shape();

struct System {
  GridCase gc;
  LoadProfile loads;
};
System build_system(const RunConfig& c);

// Scenarios for the given days, equally weighted.
std::vector<Scenario> make_scenarios(const Dataset& d, const std::vector<int>& days,
                                     const System& sys);

// ---------------------------------------------------------------- workflow

// Synthetic data sized to the feeder's PV fleet (capacities in kW).
Dataset synth_for(const RunConfig& c, const System& sys);

// Ridge baseline on every training day.
ForecastModel train_mse(const RunConfig& c, const System& sys, const Dataset& d);

// The first `train_scenarios` training days (all of them when 0).
std::vector<int> scenario_days(const RunConfig& c, const Dataset& d);

TrainResult train_bilevel(const RunConfig& c, const System& sys, const Dataset& d,
                          const ForecastModel& warm_start);

// ---------------------------------------------------------------- pipeline

enum class Mode { kProposed, kBase, kOracle, kReference };
const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);  // throws ConfigError

struct DayResult {
  int day = 0;
  Mode mode = Mode::kBase;
  Forecasts forecasts;
  Schedule schedule;
  Dispatch dispatch;
  RealTimeState rt;
  bool stage1_soft = false;
  bool stage2_soft = false;
};

// Stage 1 on the day-ahead forecast, Stage 2 on the intra-day forecast and
// Stage 3 on the actuals. Oracle mode replaces both forecasts by the
// actuals; the reference mode holds taps at 0, CBs off, SVGs at 0 and
// disables droop. Hard voltage limits fall back to soft ones when
// infeasible.
DayResult run_pipeline(const System& sys, const ForecastModel* model, const SiteSeries& features,
                       const Matrix& actual, Mode mode, int day, const MipOptions& mip = {});

struct MethodSummary {
  double energy = 0.0;  // substation energy over the test days, p.u. h
  double savings_pct = 0.0;
  int violations = 0;
  double recourse = 0.0;  // mean per day
  std::vector<double> nrmse_da, nrmse_ust;  // per site, capacity-normalized
};

struct SweepLevel {
  double svg_mvar = 0.0;
  std::vector<std::pair<Mode, MethodSummary>> methods;
  std::vector<DayResult> days;  // every method and day at this level
};

struct EvaluationReport {
  std::vector<int> days;
  std::vector<double> reference_energy;  // per day
  std::vector<SweepLevel> levels;
  nlohmann::json config;
  unsigned seed = 0;

  const MethodSummary& summary(size_t level, Mode m) const;
};

// Runs proposed, base and oracle on every day at every SVG level (each
// SVG's q_max set to the level). E_ref comes from the reference mode, once
// per day.
EvaluationReport evaluate(const RunConfig& cfg, const System& sys, const Dataset& d,
                          const std::vector<int>& days, const ForecastModel& proposed,
                          const ForecastModel& base);

nlohmann::json report_json(const EvaluationReport& r);
nlohmann::json day_json(const DayResult& r, const NetworkModel& net);

// Throws DataError when `j` lacks a field of the report schema.
void validate_report(const nlohmann::json& j);

}  // namespace dfcvr
