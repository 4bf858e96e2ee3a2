#pragma once

// Radial distribution feeder model: buses, branches, regulation devices,
// voltage-dependent loads and the primitive device/load evaluations shared
// by every control stage.

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace dfcvr {

struct BusRow {
  int id = 0;
  bool is_root = false;
  double p_peak_kw = 0.0;
  double q_peak_kvar = 0.0;
};

struct BranchRow {
  int from = 0;
  int to = 0;
  double r_ohm = 0.0;
  double x_ohm = 0.0;
};

// One line of the feeder in per-unit, oriented parent -> child.
struct Branch {
  int from = 0;  // internal bus index of the parent
  int to = 0;    // internal bus index of the child
  double r = 0.0;
  double x = 0.0;
};

// Immutable radial network. Buses are addressed by internal index
// 0..num_buses()-1; external ids are kept for I/O.
class NetworkModel {
 public:
  NetworkModel() = default;

  // Validates radiality and orients every branch away from the root.
  // Throws DataError on cycles, disconnected buses or a bad root count.
  NetworkModel(std::vector<int> bus_ids, int root_index,
               std::vector<Branch> branches, double s_base_mva,
               double v_base_kv);

  int num_buses() const { return static_cast<int>(bus_ids_.size()); }
  int num_branches() const { return static_cast<int>(branches_.size()); }
  int root() const { return root_; }
  double s_base_mva() const { return s_base_mva_; }
  double v_base_kv() const { return v_base_kv_; }

  const std::vector<int>& bus_ids() const { return bus_ids_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const Branch& branch(int k) const { return branches_[k]; }

  // Branch feeding `bus`, or -1 for the root.
  int parent_branch(int bus) const { return parent_branch_[bus]; }
  const std::vector<int>& child_branches(int bus) const {
    return child_branches_[bus];
  }
  // Branch indices ordered so that every branch appears after the branch
  // feeding its sending bus. Empty for a single-bus network.
  const std::vector<int>& topology_order() const { return topology_order_; }

  // Internal index for an external id; throws DataError when unknown.
  int index_of(int bus_id) const;
  bool has_bus(int bus_id) const;

 private:
  std::vector<int> bus_ids_;
  int root_ = 0;
  std::vector<Branch> branches_;
  std::vector<int> parent_branch_;
  std::vector<std::vector<int>> child_branches_;
  std::vector<int> topology_order_;
  double s_base_mva_ = 10.0;
  double v_base_kv_ = 12.66;
};

struct ZipCoefficients {
  double z_p = 1.0, i_p = 0.0, p_p = 0.0;
  double z_q = 1.0, i_q = 0.0, p_q = 0.0;

  // Throws ConfigError unless both triples sum to one within 1e-9.
  void validate() const;
};

// ZIP coefficients of the bundled feeder ([P_Z, P_I, P_P, Q_Z, Q_I, Q_P]).
inline constexpr ZipCoefficients kFeederZip{0.96, -1.17, 1.21, 6.28, -10.16, 4.88};

// Rated demand per bus and hour, p.u. Indexed [bus][t].
struct LoadProfile {
  std::vector<std::vector<double>> rated_p;
  std::vector<std::vector<double>> rated_q;

  int num_buses() const { return static_cast<int>(rated_p.size()); }
  int horizon() const {
    return rated_p.empty() ? 0 : static_cast<int>(rated_p.front().size());
  }
};

struct OltcSpec {
  double v_base = 1.0;  // p.u. secondary voltage at neutral tap
  int tap_min = -10;
  int tap_max = 10;
  double dv_step = 0.01;  // p.u. per tap
  int n_max_switch = 4;
};

struct CapacitorBankSpec {
  int bus = 0;  // internal index
  int step_max = 3;
  double dq_step = 0.01;  // p.u. per step
  int n_max_switch = 4;
};

struct SvgSpec {
  int bus = 0;
  double q_min = -0.01;
  double q_max = 0.03;
};

struct PvSpec {
  int bus = 0;
  double droop_k = -0.5;  // p.u. Var per p.u. W of forecast error
  double capacity = 0.04;  // p.u. active rating
  double q_capacity = 0.024;  // p.u. reactive saturation of the droop
};

struct DeviceFleet {
  OltcSpec oltc;
  std::vector<CapacitorBankSpec> cbs;
  std::vector<SvgSpec> svgs;
  std::vector<PvSpec> pvs;

  int num_taps() const { return oltc.tap_max - oltc.tap_min + 1; }
};

struct VoltageLimits {
  double v_min = 0.95;  // p.u. magnitude, non-root buses
  double v_max = 1.05;
  double root_min = 0.90;  // OLTC secondary range
  double root_max = 1.10;

  void validate() const;
};

struct LoadedNetwork {
  NetworkModel network;
  DeviceFleet fleet;
  LoadProfile loads;
};

// Builds a per-unit feeder from bus/branch tables and a device document.
// `load_shape` multiplies peak demand per hour; its length is the horizon.
LoadedNetwork load_network(const std::vector<BusRow>& buses,
                           const std::vector<BranchRow>& branches,
                           const nlohmann::json& device_doc,
                           double s_base_mva, double v_base_kv,
                           const std::vector<double>& load_shape);

std::vector<BusRow> read_bus_csv(const std::string& path);
std::vector<BranchRow> read_branch_csv(const std::string& path);

// Expands per-bus peaks (p.u.) into a profile over the given shape.
LoadProfile expand_load_profile(const std::vector<double>& p_peak,
                                const std::vector<double>& q_peak,
                                const std::vector<double>& load_shape);

enum class ZipMode { kExact, kLinearized };

// Voltage-dependent load at squared voltage `v_sq`. The linearized mode
// replaces sqrt(v_sq) by (1 + v_sq) / 2. Throws DataError when v_sq <= 0.
std::pair<double, double> zip_eval(double v_sq, double rated_p, double rated_q,
                                   const ZipCoefficients& coeffs, ZipMode mode);

// Affine form a * v_sq + b of the linearized ZIP multiplier.
struct ZipLinear {
  double a_p, b_p, a_q, b_q;
};
ZipLinear zip_linear_terms(const ZipCoefficients& coeffs);

// Squared OLTC secondary voltage (V_base + tap * dV)^2.
double oltc_root_vsq(int tap, const DeviceFleet& fleet);

// Reactive injection of a capacitor bank at `step`.
double cb_q(int step, const CapacitorBankSpec& cb);

}  // namespace dfcvr
