#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dfcvr/errors.hpp"
#include "dfcvr/grid.hpp"
#include "test_util.hpp"

using namespace dfcvr;

namespace {

LoadedNetwork load_bundled() {
  const std::string dir = testing::data_dir() + "/ieee33/";
  std::ifstream in(dir + "devices.json");
  nlohmann::json devices = nlohmann::json::parse(in);
  return load_network(read_bus_csv(dir + "bus.csv"), read_branch_csv(dir + "branch.csv"),
                      devices, 10.0, 12.66, std::vector<double>(24, 1.0));
}

}  // namespace

TEST_CASE("bundled 33-bus feeder loads as a radial network") {
  LoadedNetwork ln = load_bundled();
  const NetworkModel& net = ln.network;
  CHECK(net.num_buses() == 33);
  CHECK(net.num_branches() == 32);
  CHECK(net.bus_ids()[net.root()] == 1);
  CHECK(net.topology_order().size() == 32);
  // Every branch appears after the branch feeding its sending bus.
  std::vector<int> seen(net.num_buses(), 0);
  seen[net.root()] = 1;
  for (int k : net.topology_order()) {
    CHECK(seen[net.branch(k).from] == 1);
    seen[net.branch(k).to] = 1;
  }
  for (int i = 0; i < net.num_buses(); ++i) {
    if (i == net.root()) CHECK(net.parent_branch(i) == -1);
    else CHECK(net.parent_branch(i) >= 0);
  }
  CHECK(ln.fleet.cbs.size() == 3);
  CHECK(ln.fleet.svgs.size() == 3);
  CHECK(ln.fleet.pvs.size() == 5);
  CHECK(ln.fleet.num_taps() == 21);
  // 100 kVAR at 10 MVA
  CHECK(ln.fleet.cbs[0].dq_step == doctest::Approx(0.01));
  CHECK(ln.loads.horizon() == 24);
  double total_p = 0.0;
  for (int i = 0; i < net.num_buses(); ++i) total_p += ln.loads.rated_p[i][0];
  CHECK(total_p == doctest::Approx(0.3715));
  // First branch: 0.0922 ohm over Z_base = 12.66^2 / 10
  const Branch& b0 = net.branch(net.parent_branch(net.index_of(2)));
  CHECK(b0.r == doctest::Approx(0.0922 / 16.02756));
}

TEST_CASE("cycle and disconnected bus are rejected") {
  std::vector<BusRow> buses{{1, true, 0, 0}, {2, false, 1, 1}, {3, false, 1, 1}};
  std::vector<BranchRow> cyc{{1, 2, 0.1, 0.1}, {2, 3, 0.1, 0.1}, {3, 1, 0.1, 0.1}};
  CHECK_THROWS_AS(load_network(buses, cyc, {}, 10, 12.66, {1.0}), DataError);
  std::vector<BusRow> four{{1, true, 0, 0}, {2, false, 1, 1}, {3, false, 1, 1}, {4, false, 0, 0}};
  // Right edge count, but 1-2-3 closes a loop and bus 4 hangs loose.
  std::vector<BranchRow> loop{{1, 2, 0.1, 0.1}, {2, 3, 0.1, 0.1}, {3, 1, 0.1, 0.1}};
  CHECK_THROWS_AS(load_network(four, loop, {}, 10, 12.66, {1.0}), DataError);
  std::vector<BranchRow> short_list{{1, 2, 0.1, 0.1}};
  CHECK_THROWS_AS(load_network(buses, short_list, {}, 10, 12.66, {1.0}), DataError);
}

TEST_CASE("single bus network is valid") {
  std::vector<BusRow> buses{{7, true, 0, 0}};
  LoadedNetwork ln = load_network(buses, {}, {}, 10, 12.66, {1.0, 1.0});
  CHECK(ln.network.num_buses() == 1);
  CHECK(ln.network.topology_order().empty());
  CHECK(ln.loads.horizon() == 2);
}

TEST_CASE("input validation") {
  std::vector<BusRow> buses{{1, true, 0, 0}, {2, false, 1, 1}};
  std::vector<BranchRow> br{{1, 2, 0.1, 0.1}};
  CHECK_THROWS_AS(load_network(buses, br, {}, 0.0, 12.66, {1.0}), DataError);
  nlohmann::json bad = {{"cbs", {{{"bus", 9}}}}};
  CHECK_THROWS_AS(load_network(buses, br, bad, 10, 12.66, {1.0}), DataError);
  std::vector<BusRow> two_roots{{1, true, 0, 0}, {2, true, 1, 1}};
  CHECK_THROWS_AS(load_network(two_roots, br, {}, 10, 12.66, {1.0}), DataError);
  std::vector<BranchRow> unknown{{1, 5, 0.1, 0.1}};
  CHECK_THROWS_AS(load_network(buses, unknown, {}, 10, 12.66, {1.0}), DataError);
}

TEST_CASE("zip_eval") {
  auto [p1, q1] = zip_eval(1.0, 1.0, 1.0, kFeederZip, ZipMode::kExact);
  CHECK(p1 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(q1 == doctest::Approx(1.0).epsilon(1e-12));
  auto [pl, ql] = zip_eval(1.0, 1.0, 1.0, kFeederZip, ZipMode::kLinearized);
  CHECK(pl == p1);
  CHECK(ql == q1);
  auto [p95, q95] = zip_eval(0.9025, 1.0, 0.0, kFeederZip, ZipMode::kExact);
  // 0.96*0.9025 - 1.17*0.95 + 1.21
  const double oracle = 0.8664 - 1.1115 + 1.21;
  CHECK(oracle == doctest::Approx(0.9649).epsilon(1e-15));
  CHECK(p95 == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(q95 == 0.0);
  CHECK_THROWS_AS(zip_eval(0.0, 1, 1, kFeederZip, ZipMode::kExact), DataError);
  CHECK_THROWS_AS(zip_eval(-0.5, 1, 1, kFeederZip, ZipMode::kLinearized), DataError);
  kFeederZip.validate();
  CHECK_THROWS_AS((ZipCoefficients{0.5, 0.5, 0.5, 1, 0, 0}).validate(), ConfigError);
}

TEST_CASE("zip linearization error bound over the operating band") {
  testing::Gen g(11);
  for (int k = 0; k < 500; ++k) {
    const double v_sq = g.uniform(0.9025, 1.1025);
    const double rated = g.uniform(0.0, 2.0);
    auto [pe, qe] = zip_eval(v_sq, rated, rated, kFeederZip, ZipMode::kExact);
    auto [pl, ql] = zip_eval(v_sq, rated, rated, kFeederZip, ZipMode::kLinearized);
    const double taylor = std::abs(std::sqrt(v_sq) - 0.5 * (1.0 + v_sq));
    CHECK(std::abs(pe - pl) <= rated * std::abs(kFeederZip.i_p) * taylor * (1 + 1e-9) + 1e-15);
    CHECK(std::abs(qe - ql) <= rated * std::abs(kFeederZip.i_q) * taylor * (1 + 1e-9) + 1e-15);
    // The flat 3e-3 bound only holds for P; the Q current term is ~9x larger.
    CHECK(std::abs(pe - pl) <= 3e-3 * rated);
  }
  // Affine form matches the linearized evaluation.
  ZipLinear lin = zip_linear_terms(kFeederZip);
  auto [p, q] = zip_eval(0.95, 2.0, 3.0, kFeederZip, ZipMode::kLinearized);
  CHECK(p == doctest::Approx(2.0 * (lin.a_p * 0.95 + lin.b_p)));
  CHECK(q == doctest::Approx(3.0 * (lin.a_q * 0.95 + lin.b_q)));
}

TEST_CASE("oltc and capacitor primitives") {
  DeviceFleet fleet;
  CHECK(oltc_root_vsq(0, fleet) == 1.0);
  CHECK(oltc_root_vsq(10, fleet) == doctest::Approx(1.21).epsilon(1e-14));
  CHECK(oltc_root_vsq(-10, fleet) == doctest::Approx(0.81).epsilon(1e-14));
  CHECK_THROWS_AS(oltc_root_vsq(11, fleet), DataError);
  for (int t = fleet.oltc.tap_min; t < fleet.oltc.tap_max; ++t) {
    CHECK(oltc_root_vsq(t, fleet) < oltc_root_vsq(t + 1, fleet));
  }
  CapacitorBankSpec cb;
  cb.dq_step = 100.0 / 10000.0;
  CHECK(cb_q(0, cb) == 0.0);
  CHECK(cb_q(3, cb) == doctest::Approx(0.03));
  CHECK_THROWS_AS(cb_q(4, cb), DataError);
  CHECK_THROWS_AS(cb_q(-1, cb), DataError);
}
