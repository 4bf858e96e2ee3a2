#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dfcvr/errors.hpp"
#include "dfcvr/harness.hpp"

namespace dfcvr {

namespace fs = std::filesystem;

namespace {

using json = nlohmann::json;

void only_keys(const json& j, const char* section, std::set<std::string> allowed) {
  if (!j.is_object()) throw ConfigError(std::string("config section ") + section + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(std::string("unknown key ") + section + "." + k);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string resolve(const std::string& p, const std::string& base) {
  fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

std::vector<double> default_load_shape() {
  // Evening peak with a smaller midday hump.
  std::vector<double> s;
  for (int t = 0; t < 24; ++t) {
    s.push_back(0.6 + 0.4 * std::exp(-std::pow((t - 19) / 4.0, 2)) +
                0.15 * std::exp(-std::pow((t - 11) / 3.0, 2)));
  }
  return s;
}

RunConfig default_config() {
  RunConfig c;
  c.load_shape = default_load_shape();
  c.trainer.mip.node_limit = 5;
  c.trainer.k_max = 50;
  return c;
}

RunConfig config_from_json(const json& j, const std::string& base_dir) {
  RunConfig c = default_config();
  try {
    only_keys(j, "root", {"network", "devices", "weights", "trainer", "sweep", "data", "pipeline", "seed"});
    read(j, "seed", c.seed);
    c.synth.seed = c.seed;
    bool network_dir_set = false;
    if (j.contains("network")) {
      const json& n = j["network"];
      only_keys(n, "network", {"dir", "s_base_mva", "v_base_kv", "load_shape", "v_min", "v_max",
                               "root_min", "root_max", "zip"});
      if (n.contains("dir")) {
        c.network_dir = resolve(n["dir"].get<std::string>(), base_dir);
        network_dir_set = true;
      }
      read(n, "s_base_mva", c.s_base_mva);
      read(n, "v_base_kv", c.v_base_kv);
      read(n, "load_shape", c.load_shape);
      read(n, "v_min", c.limits.v_min);
      read(n, "v_max", c.limits.v_max);
      read(n, "root_min", c.limits.root_min);
      read(n, "root_max", c.limits.root_max);
      if (n.contains("zip")) {
        const auto z = n["zip"].get<std::vector<double>>();
        if (z.size() != 6) throw ConfigError("network.zip needs six coefficients");
        c.zip = ZipCoefficients{z[0], z[1], z[2], z[3], z[4], z[5]};
      }
    }
    if (!network_dir_set) c.network_dir = resolve(c.network_dir, base_dir);
    if (j.contains("devices")) {
      const json& d = j["devices"];
      if (d.contains("file")) {
        only_keys(d, "devices", {"file"});
        c.devices = read_json_file(resolve(d["file"].get<std::string>(), base_dir));
      } else {
        c.devices = d;
      }
    }
    if (j.contains("weights")) {
      const json& w = j["weights"];
      only_keys(w, "weights", {"w_loss", "w_load", "penalty", "switch_cost"});
      read(w, "w_loss", c.weights.w_loss);
      read(w, "w_load", c.weights.w_load);
      read(w, "penalty", c.penalty);
      read(w, "switch_cost", c.switch_cost);
    }
    if (j.contains("trainer")) {
      const json& t = j["trainer"];
      only_keys(t, "trainer", {"k_max", "epsilon", "gamma_da", "gamma_ust", "rho", "theta_floor",
                               "step_radius", "node_limit", "scenarios", "ridge_lambda"});
      read(t, "k_max", c.trainer.k_max);
      if (t.contains("epsilon")) {
        // JSON has no infinity; null means "stop after one iteration".
        c.trainer.epsilon = t["epsilon"].is_null() ? kInf : t["epsilon"].get<double>();
      }
      read(t, "gamma_da", c.trainer.gamma_da);
      read(t, "gamma_ust", c.trainer.gamma_ust);
      read(t, "rho", c.trainer.rho);
      read(t, "theta_floor", c.trainer.theta_floor);
      read(t, "step_radius", c.trainer.step_radius);
      read(t, "node_limit", c.trainer.mip.node_limit);
      read(t, "scenarios", c.train_scenarios);
      read(t, "ridge_lambda", c.ridge_lambda);
    }
    if (j.contains("pipeline")) {
      const json& p = j["pipeline"];
      only_keys(p, "pipeline", {"stage1_node_limit"});
      read(p, "stage1_node_limit", c.stage1_node_limit);
    }
    if (j.contains("sweep")) {
      const json& s = j["sweep"];
      only_keys(s, "sweep", {"svg_mvar"});
      read(s, "svg_mvar", c.svg_levels_mvar);
    }
    if (j.contains("data")) {
      const json& d = j["data"];
      only_keys(d, "data", {"days", "noise", "start"});
      read(d, "days", c.synth.days);
      read(d, "noise", c.synth.noise);
      if (d.contains("start")) {
        const std::string s = d["start"].get<std::string>();
        if (std::sscanf(s.c_str(), "%d-%d-%d", &c.synth.year, &c.synth.month, &c.synth.day) != 3) {
          throw ConfigError("data.start must be YYYY-MM-DD");
        }
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.trainer.seed = c.seed;
  if (c.load_shape.size() != 24) throw ConfigError("network.load_shape needs 24 hourly values");
  if (c.svg_levels_mvar.empty()) throw ConfigError("sweep.svg_mvar is empty");
  if (c.train_scenarios < 0) throw ConfigError("trainer.scenarios must be non-negative");
  return c;
}

RunConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path), fs::path(path).parent_path().string());
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["network"] = {{"dir", c.network_dir},
                  {"s_base_mva", c.s_base_mva},
                  {"v_base_kv", c.v_base_kv},
                  {"load_shape", c.load_shape},
                  {"v_min", c.limits.v_min},
                  {"v_max", c.limits.v_max},
                  {"root_min", c.limits.root_min},
                  {"root_max", c.limits.root_max},
                  {"zip", {c.zip.z_p, c.zip.i_p, c.zip.p_p, c.zip.z_q, c.zip.i_q, c.zip.p_q}}};
  j["devices"] = c.devices.is_null() ? json::object() : c.devices;
  j["weights"] = {{"w_loss", c.weights.w_loss},
                  {"w_load", c.weights.w_load},
                  {"penalty", c.penalty},
                  {"switch_cost", c.switch_cost}};
  j["trainer"] = {{"k_max", c.trainer.k_max},
                  {"epsilon", std::isfinite(c.trainer.epsilon) ? json(c.trainer.epsilon) : json()},
                  {"gamma_da", c.trainer.gamma_da},
                  {"gamma_ust", c.trainer.gamma_ust},
                  {"rho", c.trainer.rho},
                  {"theta_floor", c.trainer.theta_floor},
                  {"step_radius", c.trainer.step_radius},
                  {"node_limit", c.trainer.mip.node_limit},
                  {"scenarios", c.train_scenarios},
                  {"ridge_lambda", c.ridge_lambda}};
  j["pipeline"] = {{"stage1_node_limit", c.stage1_node_limit}};
  j["sweep"] = {{"svg_mvar", c.svg_levels_mvar}};
  char start[16];
  std::snprintf(start, sizeof start, "%04d-%02d-%02d", c.synth.year, c.synth.month, c.synth.day);
  j["data"] = {{"days", c.synth.days}, {"noise", c.synth.noise}, {"start", start}};
  return j;
}

System build_system(const RunConfig& c) {
  const auto buses = read_bus_csv((fs::path(c.network_dir) / "bus.csv").string());
  const auto branches = read_branch_csv((fs::path(c.network_dir) / "branch.csv").string());
  json dev = c.devices;
  if (dev.is_null() || dev.empty()) dev = read_json_file((fs::path(c.network_dir) / "devices.json").string());
  LoadedNetwork ln = load_network(buses, branches, dev, c.s_base_mva, c.v_base_kv, c.load_shape);
  System sys;
  sys.gc.net = ln.network;
  sys.gc.fleet = ln.fleet;
  sys.gc.limits = c.limits;
  sys.gc.zip = c.zip;
  sys.gc.weights = c.weights;
  sys.gc.penalty = c.penalty;
  sys.gc.switch_cost = c.switch_cost;
  sys.gc.limits.validate();
  sys.gc.zip.validate();
  sys.loads = ln.loads;
  return sys;
}

std::vector<Scenario> make_scenarios(const Dataset& d, const std::vector<int>& days,
                                     const System& sys) {
  const int npv = static_cast<int>(sys.gc.fleet.pvs.size());
  if (static_cast<int>(d.sites.size()) != npv) {
    throw DataError("dataset has " + std::to_string(d.sites.size()) + " PV sites but the feeder has " +
                    std::to_string(npv) + " PV units");
  }
  if (days.empty()) throw DataError("no days selected");
  std::vector<Scenario> out;
  for (int k : days) {
    Scenario sc;
    sc.id = k;
    sc.weight = 1.0 / static_cast<double>(days.size());
    sc.features = day_features(d, k, npv);
    sc.pv_actual = day_actuals(d, k, sys.gc.net.s_base_mva());
    sc.loads = sys.loads;
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace dfcvr
