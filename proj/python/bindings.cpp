// Python module: configuration, data, training and evaluation entry points.
// Structured values cross the boundary as JSON text; the package wrapper
// turns them into dicts.

#include <cmath>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dfcvr/errors.hpp"
#include "dfcvr/grid.hpp"
#include "dfcvr/harness.hpp"

namespace py = pybind11;
using namespace dfcvr;
using json = nlohmann::json;

namespace {

RunConfig config_of(const std::string& text, const std::string& base_dir) {
  return config_from_json(text.empty() ? json::object() : json::parse(text), base_dir);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Decision-focused volt-var control core";
  static py::exception<DataError> data_error(m, "DataError", PyExc_ValueError);
  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<SolverError> solver_error(m, "SolverError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const SolverError& e) {
      py::set_error(solver_error, e.what());
    }
  });

  m.def(
      "zip_eval",
      [](double v_sq, double rated_p, double rated_q, std::vector<double> c, bool linearized) {
        if (c.size() != 6) throw ConfigError("zip coefficients: six values expected");
        return zip_eval(v_sq, rated_p, rated_q, ZipCoefficients{c[0], c[1], c[2], c[3], c[4], c[5]},
                        linearized ? ZipMode::kLinearized : ZipMode::kExact);
      },
      py::arg("v_sq"), py::arg("rated_p"), py::arg("rated_q"), py::arg("coeffs"),
      py::arg("linearized") = false);

  m.def(
      "resolved_config",
      [](const std::string& text, const std::string& base_dir) {
        return to_json(config_of(text, base_dir)).dump();
      },
      py::arg("config_json"), py::arg("base_dir") = ".");

  m.def(
      "synth",
      [](const std::string& cfg, const std::string& base_dir, const std::string& out_csv) {
        const RunConfig c = config_of(cfg, base_dir);
        write_csv(synth_for(c, build_system(c)), out_csv);
      },
      py::arg("config_json"), py::arg("base_dir"), py::arg("out_csv"));

  m.def(
      "dataset_summary",
      [](const std::string& csv) {
        const Dataset d = ingest_csv(csv);
        return json{{"records", d.records()},
                    {"days", d.days()},
                    {"sites", d.sites},
                    {"train_days", d.train_days},
                    {"test_days", d.test_days}}
            .dump();
      },
      py::arg("csv"));

  m.def(
      "train_mse",
      [](const std::string& cfg, const std::string& base_dir, const std::string& csv) {
        const RunConfig c = config_of(cfg, base_dir);
        return to_json(train_mse(c, build_system(c), ingest_csv(csv))).dump();
      },
      py::arg("config_json"), py::arg("base_dir"), py::arg("csv"));

  m.def(
      "train_bilevel",
      [](const std::string& cfg, const std::string& base_dir, const std::string& csv,
         const std::string& warm) {
        const RunConfig c = config_of(cfg, base_dir);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_bilevel(c, build_system(c), ingest_csv(csv), model_from_json(json::parse(warm)));
        }
        json rows = json::array();
        for (const auto& row : r.trace.rows) {
          rows.push_back({{"iteration", row.iteration},
                          {"lb", std::isfinite(row.lb) ? json(row.lb) : json()},
                          {"ub", row.ub},
                          {"gap", std::isfinite(row.gap) ? json(row.gap) : json()},
                          {"z", row.z},
                          {"z_master", row.z_master},
                          {"cuts", row.cuts}});
        }
        return json{{"model", to_json(r.model)},
                    {"trace", rows},
                    {"converged", r.converged},
                    {"stop_reason", r.stop_reason},
                    {"incumbent_iteration", r.incumbent_iteration},
                    {"failed", r.failed}}
            .dump();
      },
      py::arg("config_json"), py::arg("base_dir"), py::arg("csv"), py::arg("warm_model_json"));

  m.def(
      "run_day",
      [](const std::string& cfg, const std::string& base_dir, const std::string& csv,
         const std::string& mode, int day, const std::string& model) {
        const RunConfig c = config_of(cfg, base_dir);
        const System sys = build_system(c);
        const Dataset d = ingest_csv(csv);
        const Mode md = mode_from_string(mode);
        ForecastModel fm;
        const bool has_model = !model.empty();
        if (has_model) fm = model_from_json(json::parse(model));
        MipOptions mip;
        mip.node_limit = c.stage1_node_limit;
        const int npv = static_cast<int>(sys.gc.fleet.pvs.size());
        py::gil_scoped_release release;
        const DayResult r = run_pipeline(sys, has_model ? &fm : nullptr, day_features(d, day, npv),
                                         day_actuals(d, day, sys.gc.net.s_base_mva()), md, day, mip);
        return day_json(r, sys.gc.net).dump();
      },
      py::arg("config_json"), py::arg("base_dir"), py::arg("csv"), py::arg("mode"), py::arg("day"),
      py::arg("model_json") = "");

  m.def(
      "evaluate",
      [](const std::string& cfg, const std::string& base_dir, const std::string& csv,
         const std::string& proposed, const std::string& base) {
        const RunConfig c = config_of(cfg, base_dir);
        const System sys = build_system(c);
        const Dataset d = ingest_csv(csv);
        const ForecastModel pm = model_from_json(json::parse(proposed));
        const ForecastModel bm = model_from_json(json::parse(base));
        py::gil_scoped_release release;
        return report_json(evaluate(c, sys, d, d.test_days, pm, bm)).dump();
      },
      py::arg("config_json"), py::arg("base_dir"), py::arg("csv"), py::arg("proposed_json"),
      py::arg("base_json"));

  m.def(
      "validate_report", [](const std::string& text) { validate_report(json::parse(text)); },
      py::arg("report_json"));
}
