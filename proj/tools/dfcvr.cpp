// Command-line front end: data preparation, training, day runs and
// evaluation reports.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data error, 3 solver
// failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "dfcvr/errors.hpp"
#include "dfcvr/harness.hpp"

using namespace dfcvr;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::string out = "out";
  long long seed = -1;
  bool verbose = false;
};

RunConfig load(const Globals& g) {
  RunConfig c = g.config.empty() ? config_from_json(json::object(), ".") : load_config(g.config);
  if (g.seed >= 0) {
    c.seed = static_cast<unsigned>(g.seed);
    c.synth.seed = c.seed;
    c.trainer.seed = c.seed;
  }
  c.trainer.verbose = g.verbose;
  return c;
}

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out);
  return g.out;
}

std::string or_default(const std::string& v, const Globals& g, const char* name) {
  return v.empty() ? (fs::path(g.out) / name).string() : v;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::string& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(p + ": " + e.what());
  }
}

void describe(const Dataset& d) {
  std::cout << d.records() << " records, " << d.days() << " days, " << d.sites.size()
            << " sites; train days " << d.train_days.size() << ", test days " << d.test_days.size()
            << "\n";
}

std::string level_tag(double mvar) {
  std::ostringstream os;
  os << "svg_" << mvar;
  return os.str();
}

// Voltage magnitudes of every evaluated day, long format.
void write_voltage_profiles(const fs::path& p, const EvaluationReport& rep, const NetworkModel& net) {
  std::ofstream out(p);
  out << "svg_mvar,method,day,hour,bus,v_pu\n" << std::setprecision(10);
  const auto ids = net.bus_ids();
  for (const auto& lv : rep.levels) {
    for (const auto& d : lv.days) {
      const auto& v = d.rt.state.v_sq;
      for (size_t t = 0; t < v.front().size(); ++t) {
        for (size_t b = 0; b < v.size(); ++b) {
          out << lv.svg_mvar << ',' << to_string(d.mode) << ',' << d.day << ',' << t << ',' << ids[b]
              << ',' << std::sqrt(v[b][t]) << '\n';
        }
      }
    }
  }
}

// Forecast pairs for scatter plots: x = MSE model, y = proposed model.
void write_forecast_scatter(const fs::path& p, const Dataset& d, const std::vector<int>& days,
                            const ForecastModel& mse, const ForecastModel& proposed, double s_base) {
  std::ofstream out(p);
  out << "site,day,hour,actual_kw,mse_da_kw,proposed_da_kw,mse_ust_kw,proposed_ust_kw\n"
      << std::setprecision(10);
  const int n = static_cast<int>(d.sites.size());
  const double kw = 1000.0 * s_base;
  for (int k : days) {
    const SiteSeries f = day_features(d, k, n);
    const Matrix a = day_actuals(d, k, s_base);
    const Forecasts fm = predict(mse, f, true), fp = predict(proposed, f, true);
    for (int s = 0; s < n; ++s) {
      for (int t = 0; t < 24; ++t) {
        out << d.sites[s] << ',' << k << ',' << t << ',' << a[s][t] * kw << ',' << fm.da[s][t] * kw
            << ',' << fp.da[s][t] * kw << ',' << fm.ust[s][t] * kw << ',' << fp.ust[s][t] * kw << '\n';
      }
    }
  }
}

void print_summary(const json& rep) {
  std::cout << std::left << std::setw(10) << "svg_mvar" << std::setw(11) << "method" << std::right
            << std::setw(12) << "savings_%" << std::setw(12) << "violations" << std::setw(14)
            << "recourse" << "\n";
  for (const auto& l : rep["levels"]) {
    for (const char* m : {"proposed", "base", "oracle"}) {
      const auto& s = l["methods"][m];
      std::cout << std::left << std::setw(10) << l["svg_mvar"].get<double>() << std::setw(11) << m
                << std::right << std::fixed << std::setprecision(4) << std::setw(12)
                << s["energy_savings_pct"].get<double>() << std::setw(12)
                << s["violation_count"].get<int>() << std::setw(14)
                << s["mean_recourse"].get<double>() << std::defaultfloat << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-focused volt-var control: data, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "overrides the configuration seed")->check(CLI::NonNegativeNumber);
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  std::string csv, data, model, warm, proposed, base, report_path, mode = "proposed";
  int day = -1;
  double svg_mvar = -1.0;

  auto* ingest = app.add_subcommand("ingest", "validate an hourly CSV and copy it to <out>/data.csv");
  ingest->add_option("csv", csv, "input CSV")->required()->check(CLI::ExistingFile);

  app.add_subcommand("synth", "write synthetic data for the configured feeder to <out>/data.csv");

  auto* tmse = app.add_subcommand("train-mse", "ridge baseline -> <out>/model_mse.json");
  tmse->add_option("--data", data, "dataset CSV (default <out>/data.csv)");

  auto* tbi = app.add_subcommand("train-bilevel",
                                 "decision-focused training -> <out>/model_bilevel.json, trace.csv");
  tbi->add_option("--data", data, "dataset CSV (default <out>/data.csv)");
  tbi->add_option("--warm", warm, "warm-start model (default <out>/model_mse.json)");

  auto* rday = app.add_subcommand("run-day", "run the three-stage pipeline on one day -> day_<id>.json");
  rday->add_option("--data", data, "dataset CSV (default <out>/data.csv)");
  rday->add_option("--model", model, "forecast model (not needed for oracle and reference)");
  rday->add_option("--day", day, "day index (default: first test day)");
  rday->add_option("--mode", mode, "proposed, base, oracle or reference")->capture_default_str();
  rday->add_option("--svg-mvar", svg_mvar, "SVG capacity per unit (default: feeder value)");

  auto* eval = app.add_subcommand("evaluate", "test-day sweep -> report.json, days/, plot tables");
  eval->add_option("--data", data, "dataset CSV (default <out>/data.csv)");
  eval->add_option("--proposed", proposed, "trained model (default <out>/model_bilevel.json)");
  eval->add_option("--base", base, "baseline model (default <out>/model_mse.json)");

  auto* rep = app.add_subcommand("report", "validate a report and print its summary");
  rep->add_option("--report", report_path, "report JSON (default <out>/report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) {
      Dataset d = ingest_csv(csv);
      describe(d);
      write_csv(d, (out_dir(g) / "data.csv").string());
      return 0;
    }
    if (rep->parsed()) {
      const json j = read_json(or_default(report_path, g, "report.json"));
      validate_report(j);
      print_summary(j);
      std::ofstream out(out_dir(g) / "summary.csv");
      out << "svg_mvar,method,energy_savings_pct,violation_count,mean_recourse\n" << std::setprecision(10);
      for (const auto& l : j["levels"]) {
        for (const char* m : {"proposed", "base", "oracle"}) {
          const auto& s = l["methods"][m];
          out << l["svg_mvar"].get<double>() << ',' << m << ',' << s["energy_savings_pct"].get<double>()
              << ',' << s["violation_count"].get<int>() << ',' << s["mean_recourse"].get<double>() << '\n';
        }
      }
      return 0;
    }

    const RunConfig cfg = load(g);
    const System sys = build_system(cfg);
    const fs::path out = out_dir(g);

    if (app.got_subcommand("synth")) {
      const Dataset d = synth_for(cfg, sys);
      write_csv(d, (out / "data.csv").string());
      describe(d);
      return 0;
    }

    const Dataset d = ingest_csv(or_default(data, g, "data.csv"));

    if (tmse->parsed()) {
      const ForecastModel m = train_mse(cfg, sys, d);
      save_model(m, (out / "model_mse.json").string());
      return 0;
    }
    if (tbi->parsed()) {
      const ForecastModel w = load_model(or_default(warm, g, "model_mse.json"));
      const TrainResult r = train_bilevel(cfg, sys, d, w);
      std::ofstream trace(out / "trace.csv");
      r.trace.write_csv(trace);
      save_model(r.model, (out / "model_bilevel.json").string());
      const auto& last = r.trace.rows.back();
      std::cout << "stop: " << r.stop_reason << "; iterations " << last.iteration << ", LB " << last.lb
                << ", UB " << last.ub << ", incumbent from iteration " << r.incumbent_iteration << "\n";
      if (r.failed) {
        std::cerr << "error: training aborted: " << r.stop_reason << " (trace kept)\n";
        return 3;
      }
      return 0;
    }
    if (rday->parsed()) {
      const Mode m = mode_from_string(mode);
      if (day < 0) day = d.test_days.front();
      System s2 = sys;
      if (svg_mvar >= 0.0) {
        for (auto& svg : s2.gc.fleet.svgs) {
          svg.q_max = svg_mvar / s2.gc.net.s_base_mva();
          svg.q_min = std::min(svg.q_min, svg.q_max);
        }
      }
      ForecastModel fm;
      const bool needs_model = m == Mode::kProposed || m == Mode::kBase;
      if (needs_model) {
        if (model.empty()) model = (out / (m == Mode::kProposed ? "model_bilevel.json" : "model_mse.json")).string();
        fm = load_model(model);
      }
      const int npv = static_cast<int>(sys.gc.fleet.pvs.size());
      MipOptions mip;
      mip.node_limit = cfg.stage1_node_limit;
      const DayResult r = run_pipeline(s2, needs_model ? &fm : nullptr, day_features(d, day, npv),
                                       day_actuals(d, day, sys.gc.net.s_base_mva()), m, day, mip);
      write_json(out / ("day_" + std::to_string(day) + ".json"), day_json(r, sys.gc.net));
      std::cout << to_string(m) << " day " << day << ": energy " << r.rt.substation_energy
                << " p.u.h, violations " << r.rt.violations << ", recourse " << r.rt.recourse << "\n";
      return 0;
    }
    if (eval->parsed()) {
      const ForecastModel pm = load_model(or_default(proposed, g, "model_bilevel.json"));
      const ForecastModel bm = load_model(or_default(base, g, "model_mse.json"));
      const EvaluationReport er = evaluate(cfg, sys, d, d.test_days, pm, bm);
      const json j = report_json(er);
      validate_report(j);
      write_json(out / "report.json", j);
      for (const auto& lv : er.levels) {
        for (const auto& dr : lv.days) {
          const fs::path dir = out / "days" / level_tag(lv.svg_mvar) / to_string(dr.mode);
          fs::create_directories(dir);
          write_json(dir / ("day_" + std::to_string(dr.day) + ".json"), day_json(dr, sys.gc.net));
        }
      }
      write_voltage_profiles(out / "voltage_profiles.csv", er, sys.gc.net);
      write_forecast_scatter(out / "forecast_scatter.csv", d, d.test_days, bm, pm, sys.gc.net.s_base_mva());
      print_summary(j);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
