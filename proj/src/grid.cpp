#include "dfcvr/grid.hpp"

#include <cmath>
#include <queue>
#include <sstream>

#include "csv.hpp"
#include "dfcvr/errors.hpp"

namespace dfcvr {

NetworkModel::NetworkModel(std::vector<int> bus_ids, int root_index,
                           std::vector<Branch> branches, double s_base_mva,
                           double v_base_kv)
    : bus_ids_(std::move(bus_ids)),
      root_(root_index),
      s_base_mva_(s_base_mva),
      v_base_kv_(v_base_kv) {
  const int n = num_buses();
  if (n == 0) throw DataError("network has no buses");
  if (root_ < 0 || root_ >= n) throw DataError("root index out of range");
  if (!(s_base_mva > 0.0) || !(v_base_kv > 0.0)) {
    throw DataError("per-unit bases must be positive");
  }
  if (static_cast<int>(branches.size()) != n - 1) {
    std::ostringstream os;
    os << "radial network needs " << n - 1 << " branches, got "
       << branches.size();
    // More edges than a tree can hold always closes a cycle.
    if (static_cast<int>(branches.size()) >= n) os << " (cycle detected)";
    else os << " (disconnected bus)";
    throw DataError(os.str());
  }

  std::vector<std::vector<int>> incident(n);
  for (int k = 0; k < static_cast<int>(branches.size()); ++k) {
    const Branch& b = branches[k];
    if (b.from < 0 || b.from >= n || b.to < 0 || b.to >= n || b.from == b.to) {
      throw DataError("branch " + std::to_string(k) + " has invalid endpoints");
    }
    if (b.r < 0.0) throw DataError("negative branch resistance");
    incident[b.from].push_back(k);
    incident[b.to].push_back(k);
  }

  parent_branch_.assign(n, -1);
  child_branches_.assign(n, {});
  std::vector<bool> seen(n, false);
  std::queue<int> frontier;
  frontier.push(root_);
  seen[root_] = true;
  branches_.reserve(branches.size());
  std::vector<int> oriented(branches.size(), -1);
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop();
    for (int k : incident[u]) {
      if (oriented[k] >= 0) continue;
      const Branch& b = branches[k];
      int v = (b.from == u) ? b.to : b.from;
      if (seen[v]) throw DataError("cycle detected in branch table");
      seen[v] = true;
      Branch ob{u, v, b.r, b.x};
      oriented[k] = static_cast<int>(branches_.size());
      parent_branch_[v] = oriented[k];
      child_branches_[u].push_back(oriented[k]);
      topology_order_.push_back(oriented[k]);
      branches_.push_back(ob);
      frontier.push(v);
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) {
      throw DataError("bus " + std::to_string(bus_ids_[i]) +
                      " is disconnected from the root");
    }
  }
}

int NetworkModel::index_of(int bus_id) const {
  for (int i = 0; i < num_buses(); ++i) {
    if (bus_ids_[i] == bus_id) return i;
  }
  throw DataError("unknown bus id " + std::to_string(bus_id));
}

bool NetworkModel::has_bus(int bus_id) const {
  for (int id : bus_ids_) {
    if (id == bus_id) return true;
  }
  return false;
}

void ZipCoefficients::validate() const {
  if (std::abs(z_p + i_p + p_p - 1.0) > 1e-9 ||
      std::abs(z_q + i_q + p_q - 1.0) > 1e-9) {
    throw ConfigError("ZIP coefficients must sum to 1 for P and for Q");
  }
}

void VoltageLimits::validate() const {
  if (!(v_min > 0.0) || !(v_min < v_max)) {
    throw ConfigError("voltage limits need 0 < v_min < v_max");
  }
  if (!(root_min > 0.0) || !(root_min <= root_max)) {
    throw ConfigError("root voltage range is empty");
  }
}

LoadProfile expand_load_profile(const std::vector<double>& p_peak,
                                const std::vector<double>& q_peak,
                                const std::vector<double>& load_shape) {
  if (p_peak.size() != q_peak.size()) throw DataError("peak size mismatch");
  if (load_shape.empty()) throw ConfigError("load shape is empty");
  LoadProfile lp;
  lp.rated_p.assign(p_peak.size(), std::vector<double>(load_shape.size()));
  lp.rated_q.assign(q_peak.size(), std::vector<double>(load_shape.size()));
  for (size_t i = 0; i < p_peak.size(); ++i) {
    if (p_peak[i] < 0.0 || q_peak[i] < 0.0) {
      throw DataError("peak loads must be non-negative");
    }
    for (size_t t = 0; t < load_shape.size(); ++t) {
      if (load_shape[t] < 0.0) throw ConfigError("negative load multiplier");
      lp.rated_p[i][t] = p_peak[i] * load_shape[t];
      lp.rated_q[i][t] = q_peak[i] * load_shape[t];
    }
  }
  return lp;
}

namespace {

double get_number(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) {
    throw DataError(std::string("device field '") + key + "' must be numeric");
  }
  return j[key].get<double>();
}

int get_int(const nlohmann::json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) {
    throw DataError(std::string("device field '") + key + "' must be an integer");
  }
  return j[key].get<int>();
}

int device_bus(const NetworkModel& net, const nlohmann::json& j,
               const char* kind) {
  if (!j.contains("bus")) {
    throw DataError(std::string(kind) + " entry lacks a bus");
  }
  int id = j["bus"].get<int>();
  if (!net.has_bus(id)) {
    throw DataError(std::string(kind) + " references unknown bus " +
                    std::to_string(id));
  }
  return net.index_of(id);
}

}  // namespace

LoadedNetwork load_network(const std::vector<BusRow>& buses,
                           const std::vector<BranchRow>& branches,
                           const nlohmann::json& device_doc,
                           double s_base_mva, double v_base_kv,
                           const std::vector<double>& load_shape) {
  if (buses.empty()) throw DataError("bus table is empty");
  if (!(s_base_mva > 0.0) || !(v_base_kv > 0.0)) {
    throw DataError("per-unit bases must be positive");
  }
  std::vector<int> ids;
  int root = -1;
  for (size_t i = 0; i < buses.size(); ++i) {
    for (int id : ids) {
      if (id == buses[i].id) {
        throw DataError("duplicate bus id " + std::to_string(id));
      }
    }
    ids.push_back(buses[i].id);
    if (buses[i].is_root) {
      if (root >= 0) throw DataError("more than one root bus");
      root = static_cast<int>(i);
    }
  }
  if (root < 0) throw DataError("no root bus");

  const double z_base = v_base_kv * v_base_kv / s_base_mva;
  auto index = [&](int id) {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) return static_cast<int>(i);
    }
    throw DataError("branch references unknown bus " + std::to_string(id));
  };
  std::vector<Branch> pu;
  pu.reserve(branches.size());
  for (const auto& b : branches) {
    pu.push_back({index(b.from), index(b.to), b.r_ohm / z_base, b.x_ohm / z_base});
  }

  LoadedNetwork out;
  out.network = NetworkModel(ids, root, std::move(pu), s_base_mva, v_base_kv);
  const NetworkModel& net = out.network;
  const double kw_to_pu = 1.0 / (1000.0 * s_base_mva);

  std::vector<double> p_peak(buses.size()), q_peak(buses.size());
  for (size_t i = 0; i < buses.size(); ++i) {
    p_peak[i] = buses[i].p_peak_kw * kw_to_pu;
    q_peak[i] = buses[i].q_peak_kvar * kw_to_pu;
  }
  out.loads = expand_load_profile(p_peak, q_peak, load_shape);

  DeviceFleet& fleet = out.fleet;
  if (!device_doc.is_null() && !device_doc.is_object()) {
    throw DataError("device document must be an object");
  }
  const nlohmann::json none = nlohmann::json::array();
  auto list = [&](const char* key) -> const nlohmann::json& {
    if (device_doc.is_null() || !device_doc.contains(key)) return none;
    if (!device_doc[key].is_array()) {
      throw DataError(std::string("device section '") + key + "' must be a list");
    }
    return device_doc[key];
  };
  if (!device_doc.is_null() && device_doc.contains("oltc")) {
    const auto& o = device_doc["oltc"];
    fleet.oltc.v_base = get_number(o, "v_base", 1.0);
    fleet.oltc.tap_min = get_int(o, "tap_min", -10);
    fleet.oltc.tap_max = get_int(o, "tap_max", 10);
    fleet.oltc.dv_step = get_number(o, "dv_step", 0.01);
    fleet.oltc.n_max_switch = get_int(o, "n_max_switch", 4);
  }
  if (fleet.oltc.tap_min > 0 || fleet.oltc.tap_max < 0) {
    throw DataError("OLTC tap range must contain the neutral tap");
  }
  if (fleet.oltc.n_max_switch < 0) throw DataError("negative switching budget");
  for (const auto& c : list("cbs")) {
    CapacitorBankSpec cb;
    cb.bus = device_bus(net, c, "CB");
    cb.step_max = get_int(c, "step_max", 3);
    cb.dq_step = get_number(c, "dq_step_kvar", 100.0) * kw_to_pu;
    cb.n_max_switch = get_int(c, "n_max_switch", 4);
    if (cb.step_max < 0) throw DataError("CB step_max must be >= 0");
    if (cb.n_max_switch < 0) throw DataError("negative switching budget");
    fleet.cbs.push_back(cb);
  }
  for (const auto& s : list("svgs")) {
    SvgSpec svg;
    svg.bus = device_bus(net, s, "SVG");
    svg.q_min = get_number(s, "q_min_kvar", -100.0) * kw_to_pu;
    svg.q_max = get_number(s, "q_max_kvar", 300.0) * kw_to_pu;
    if (svg.q_min > svg.q_max) throw DataError("SVG q_min > q_max");
    fleet.svgs.push_back(svg);
  }
  for (const auto& p : list("pvs")) {
    PvSpec pv;
    pv.bus = device_bus(net, p, "PV");
    pv.droop_k = get_number(p, "droop_k", -0.5);
    pv.capacity = get_number(p, "capacity_kw", 400.0) * kw_to_pu;
    pv.q_capacity = p.contains("q_capacity_kvar")
                        ? get_number(p, "q_capacity_kvar", 0.0) * kw_to_pu
                        : 0.6 * pv.capacity;
    if (!std::isfinite(pv.droop_k)) throw DataError("droop_k must be finite");
    if (pv.capacity < 0.0 || pv.q_capacity < 0.0) {
      throw DataError("PV ratings must be non-negative");
    }
    fleet.pvs.push_back(pv);
  }
  return out;
}

std::vector<BusRow> read_bus_csv(const std::string& path) {
  csv::Table t = csv::read(path);
  const std::vector<std::string> expected{"id", "is_root", "p_peak_kw",
                                          "q_peak_kvar"};
  if (t.header != expected) {
    throw DataError(path + ": header must be id,is_root,p_peak_kw,q_peak_kvar");
  }
  std::vector<BusRow> rows;
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    std::string where = path + ":" + std::to_string(t.line_numbers[r]);
    if (f.size() != 4) throw DataError(where + ": expected 4 fields");
    BusRow b;
    b.id = csv::to_int(f[0], where);
    b.is_root = csv::to_int(f[1], where) != 0;
    b.p_peak_kw = csv::to_double(f[2], where);
    b.q_peak_kvar = csv::to_double(f[3], where);
    rows.push_back(b);
  }
  return rows;
}

std::vector<BranchRow> read_branch_csv(const std::string& path) {
  csv::Table t = csv::read(path);
  const std::vector<std::string> expected{"from", "to", "r_ohm", "x_ohm"};
  if (t.header != expected) {
    throw DataError(path + ": header must be from,to,r_ohm,x_ohm");
  }
  std::vector<BranchRow> rows;
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    std::string where = path + ":" + std::to_string(t.line_numbers[r]);
    if (f.size() != 4) throw DataError(where + ": expected 4 fields");
    rows.push_back({csv::to_int(f[0], where), csv::to_int(f[1], where),
                    csv::to_double(f[2], where), csv::to_double(f[3], where)});
  }
  return rows;
}

std::pair<double, double> zip_eval(double v_sq, double rated_p, double rated_q,
                                   const ZipCoefficients& c, ZipMode mode) {
  if (!(v_sq > 0.0)) throw DataError("zip_eval needs a positive squared voltage");
  const double root =
      (mode == ZipMode::kExact) ? std::sqrt(v_sq) : 0.5 * (1.0 + v_sq);
  return {rated_p * (c.z_p * v_sq + c.i_p * root + c.p_p),
          rated_q * (c.z_q * v_sq + c.i_q * root + c.p_q)};
}

ZipLinear zip_linear_terms(const ZipCoefficients& c) {
  return {c.z_p + 0.5 * c.i_p, 0.5 * c.i_p + c.p_p, c.z_q + 0.5 * c.i_q,
          0.5 * c.i_q + c.p_q};
}

double oltc_root_vsq(int tap, const DeviceFleet& fleet) {
  const OltcSpec& o = fleet.oltc;
  if (tap < o.tap_min || tap > o.tap_max) {
    throw DataError("OLTC tap " + std::to_string(tap) + " outside [" +
                    std::to_string(o.tap_min) + ", " +
                    std::to_string(o.tap_max) + "]");
  }
  const double v = o.v_base + tap * o.dv_step;
  return v * v;
}

double cb_q(int step, const CapacitorBankSpec& cb) {
  if (step < 0 || step > cb.step_max) {
    throw DataError("CB step " + std::to_string(step) + " outside [0, " +
                    std::to_string(cb.step_max) + "]");
  }
  return step * cb.dq_step;
}

}  // namespace dfcvr
