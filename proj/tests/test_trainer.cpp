#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "dfcvr/errors.hpp"
#include "dfcvr/harness.hpp"
#include "dfcvr/trainer.hpp"
#include "test_util.hpp"
#include "toy_cases.hpp"
#include "trainer_toys.hpp"

using namespace dfcvr;
using namespace dfcvr::testing;

namespace {

double true_recourse(const GridCase& gc, const Scenario& sc, const std::vector<int>& taps,
                     const Matrix& ust) {
  const Schedule s = make_schedule(taps, {}, gc.fleet);
  return evaluate_recourse(gc, sc, s, ust).q;
}

}  // namespace

TEST_CASE("cut construction") {
  const Cut c = make_cut(3.5, {1.0, -2.0}, {0.5}, {1.0, 1.0}, {0.2}, 0);
  CHECK(c.rhs({1.0, 1.0}, {0.2}) == 3.5);
  CHECK(c.rhs({2.0, 1.0}, {0.2}) == doctest::Approx(4.5));
  CHECK(c.rhs({1.0, 1.0}, {0.4}) == doctest::Approx(3.6));
  CHECK_THROWS_AS(make_cut(1.0, {1.0}, {}, {1.0, 2.0}, {}, 0), DataError);
  CHECK_THROWS_AS(make_cut(1.0, {}, {1.0}, {}, {}, 0), DataError);
  CHECK_THROWS_AS(make_cut(NAN, {}, {}, {}, {}, 0), DataError);
  CHECK_THROWS_AS(make_cut(1.0, {INFINITY}, {}, {1.0}, {}, 0), DataError);
  CHECK_THROWS_AS(c.rhs({1.0}, {0.2}), DataError);
}

TEST_CASE("device representation") {
  const ToyCase tc = four_bus(2);
  const Schedule s = make_schedule({-1, 1}, {{0, 2}}, tc.gc.fleet);
  const auto r = device_repr(s, tc.gc.fleet);
  REQUIRE(r.size() == 4);
  CHECK(r[0] == doctest::Approx(0.975));
  CHECK(r[1] == doctest::Approx(1.025));
  CHECK(r[2] == 0.0);
  CHECK(r[3] == doctest::Approx(0.2));
}

TEST_CASE("scenario validation") {
  const ToyCase tc = two_bus(2);
  auto scs = toy_set(tc, 2);
  CHECK_NOTHROW(validate_scenarios(tc.gc, scs));
  CHECK_THROWS_AS(validate_scenarios(tc.gc, {}), DataError);
  auto bad = scs;
  bad[0].weight = 0.9;
  CHECK_THROWS_AS(validate_scenarios(tc.gc, bad), DataError);
  bad = scs;
  bad[1].pv_actual[0].pop_back();
  CHECK_THROWS_AS(validate_scenarios(tc.gc, bad), DataError);
  bad = scs;
  bad[0].weight = -0.5;
  bad[1].weight = 1.5;
  CHECK_THROWS_AS(validate_scenarios(tc.gc, bad), DataError);
}

// Two buses, three taps, two hours: the recourse table is small enough to
// enumerate.
TEST_CASE("hybrid cuts on the enumerable toy") {
  const ToyCase tc = two_bus(2);
  const auto scs = toy_set(tc, 1);
  const Scenario& sc = scs[0];
  const ForecastModel m = warm_model(tc);
  const Matrix ust = predict(m, sc.features, false).ust;

  std::vector<std::vector<int>> all;
  trajectories(-1, 1, 2, all);
  int near_checks = 0;
  for (const auto& anchor : all) {
    CAPTURE(anchor[0]);
    CAPTURE(anchor[1]);
    const Schedule s = make_schedule(anchor, {}, tc.gc.fleet);
    const Recourse base = evaluate_recourse(tc.gc, sc, s, ust);
    SensitivityInfo info;
    const auto pix = discrete_sensitivity(tc.gc, sc, s, ust, base, &info);
    const auto pip = forecast_sensitivity(base.dispatch);
    REQUIRE(pix.size() == 2);
    REQUIRE(pip.size() == 2);
    CHECK(info.stuck.empty());
    const Cut cut = make_cut(base.q, pix, pip, device_repr(s, tc.gc.fleet), flatten(ust), 0);

    // Tight at the anchor.
    CHECK(std::abs(cut.rhs(cut.anchor_r, cut.anchor_ust) - base.q) <= 1e-8);

    // Secant exactness against a full re-solve at each perturbation point.
    for (int t = 0; t < 2; ++t) {
      auto taps = anchor;
      const int step = anchor[t] < 1 ? 1 : -1;
      CHECK(info.delta_r[t] == doctest::Approx(step * 0.025));
      taps[t] += step;
      const double q = true_recourse(tc.gc, sc, taps, ust);
      auto r = cut.anchor_r;
      r[t] += info.delta_r[t];
      CHECK(std::abs(cut.rhs(r, cut.anchor_ust) - q) <= 1e-6);
      CHECK(std::abs(info.q_perturbed[t] - q) <= 1e-6);
    }

    // Lower bound on every schedule within one step of the anchor.
    for (const auto& other : all) {
      if (std::abs(other[0] - anchor[0]) > 1 || std::abs(other[1] - anchor[1]) > 1) continue;
      const Schedule o = make_schedule(other, {}, tc.gc.fleet);
      const double q = true_recourse(tc.gc, sc, other, ust);
      CHECK(cut.rhs(device_repr(o, tc.gc.fleet), cut.anchor_ust) <= q + 1e-7);
      ++near_checks;
    }
  }
  CHECK(near_checks > 9);
}

TEST_CASE("backward difference at the upper tap") {
  const ToyCase tc = two_bus(1);
  const auto scs = toy_set(tc, 1, 1);
  const Matrix ust = scs[0].pv_actual;
  const Schedule top = make_schedule({1}, {}, tc.gc.fleet);
  const Recourse base = evaluate_recourse(tc.gc, scs[0], top, ust);
  const double below = true_recourse(tc.gc, scs[0], {0}, ust);
  const auto pix = discrete_sensitivity(tc.gc, scs[0], top, ust, base);
  CHECK(pix[0] == doctest::Approx(-(base.q - below) / -0.025).epsilon(1e-6));
}

TEST_CASE("isolated capacitor has no slope") {
  // A CB on a zero-impedance stub with no load changes nothing but its own
  // reactive injection at the shared node; cancel it with a matching SVG
  // range so the dispatch absorbs it.
  std::vector<BusRow> buses{{1, true, 0, 0}, {2, false, 500, 200}, {3, false, 0, 0}};
  std::vector<BranchRow> branches{{1, 2, 5.0, 4.0}, {2, 3, 0.0, 0.0}};
  nlohmann::json dev = {
      {"oltc", {{"v_base", 1.0}, {"tap_min", -1}, {"tap_max", 1}, {"dv_step", 0.025},
                {"n_max_switch", 2}}},
      {"cbs", {{{"bus", 3}, {"step_max", 1}, {"dq_step_kvar", 50}, {"n_max_switch", 2}}}},
      {"svgs", {{{"bus", 3}, {"q_min_kvar", -500}, {"q_max_kvar", 500}}}},
      {"pvs", {{{"bus", 2}, {"droop_k", -0.5}, {"capacity_kw", 400}}}}};
  LoadedNetwork ln = load_network(buses, branches, dev, 1.0, 12.66, {1.0});
  GridCase gc;
  gc.net = ln.network;
  gc.fleet = ln.fleet;
  gc.zip = ZipCoefficients{0, 0, 1, 0, 0, 1};
  Scenario sc;
  sc.loads = ln.loads;
  sc.features = {{raw(1, 12, 800, 25)}};
  sc.pv_actual = {{0.2}};
  const Schedule s = make_schedule({0}, {{0}}, gc.fleet);
  const Recourse base = evaluate_recourse(gc, sc, s, sc.pv_actual);
  const auto pix = discrete_sensitivity(gc, sc, s, sc.pv_actual, base);
  REQUIRE(pix.size() == 2);
  CHECK(std::abs(pix[1]) * 0.05 <= 1e-6);
}

TEST_CASE("master problem basics") {
  const ToyCase tc = two_bus(2);
  auto scs = toy_set(tc, 2);
  const ForecastModel m = warm_model(tc);

  SUBCASE("empty pool leaves theta at the floor") {
    MasterOptions mo;
    MasterProgram mp = build_master(tc.gc, scs, {}, m, mo);
    const MipSolution sol = solve_misocp(mp.prog, mp.ispec);
    REQUIRE(sol.has_incumbent());
    for (int th : mp.vars.theta) CHECK(sol.x[th] == doctest::Approx(0.0).epsilon(1e-7));
  }

  SUBCASE("constant cut") {
    const int nr = 2;
    std::vector<Cut> pool{make_cut(2.75, std::vector<double>(nr, 0.0), {0.0, 0.0},
                                   std::vector<double>(nr, 1.0), {0.1, 0.1}, 1)};
    MasterProgram mp = build_master(tc.gc, scs, pool, m);
    const MipSolution sol = solve_misocp(mp.prog, mp.ispec);
    REQUIRE(sol.has_incumbent());
    CHECK(sol.x[mp.vars.theta[0]] == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(sol.x[mp.vars.theta[1]] == doctest::Approx(2.75).epsilon(1e-7));
  }

  SUBCASE("identical features share forecasts") {
    scs[1].features = scs[0].features;
    std::vector<Cut> pool{make_cut(1.0, {0.0, 0.0}, {-3.0, -2.0}, {1.0, 1.0}, {0.2, 0.2}, 0),
                          make_cut(1.0, {0.0, 0.0}, {-1.0, -4.0}, {1.0, 1.0}, {0.2, 0.2}, 1)};
    MasterProgram mp = build_master(tc.gc, scs, pool, m);
    const MipSolution sol = solve_misocp(mp.prog, mp.ispec);
    REQUIRE(sol.has_incumbent());
    for (int t = 0; t < 2; ++t) {
      CHECK(mp.vars.p_da[0][0][t].eval(sol.x) == doctest::Approx(mp.vars.p_da[1][0][t].eval(sol.x)));
      CHECK(mp.vars.p_ust[0][0][t].eval(sol.x) == doctest::Approx(mp.vars.p_ust[1][0][t].eval(sol.x)));
    }
    // Every cut holds with non-negative slack.
    for (const Cut& c : pool) {
      std::vector<double> r, ust;
      for (const auto& e : mp.vars.r[c.scenario]) r.push_back(e.eval(sol.x));
      for (const auto& e : mp.vars.p_ust[c.scenario][0]) ust.push_back(e.eval(sol.x));
      CHECK(sol.x[mp.vars.theta[c.scenario]] >= c.rhs(r, ust) - 1e-7);
    }
  }

  SUBCASE("trust region") {
    MasterOptions mo;
    mo.radius = 0.0;
    MasterProgram mp = build_master(tc.gc, scs, {}, m, mo);
    const MipSolution sol = solve_misocp(mp.prog, mp.ispec);
    REQUIRE(sol.has_incumbent());
    const ForecastModel out = master_model(mp, m, sol.x);
    for (int j = 0; j < kNumFeatures; ++j) {
      CHECK(out.eta_da[0][j] == doctest::Approx(m.eta_da[0][j]));
      CHECK(out.eta_ust[0][j] == doctest::Approx(m.eta_ust[0][j]));
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(build_master(tc.gc, {}, {}, m), DataError);
    std::vector<Cut> pool{make_cut(1.0, {0.0}, {0.0, 0.0}, {1.0}, {0.2, 0.2}, 0)};
    CHECK_THROWS_AS(build_master(tc.gc, scs, pool, m), DataError);
    pool = {make_cut(1.0, {0.0, 0.0}, {0.0, 0.0}, {1.0, 1.0}, {0.2, 0.2}, 5)};
    CHECK_THROWS_AS(build_master(tc.gc, scs, pool, m), DataError);
    MasterOptions mo;
    mo.radius = -1.0;
    CHECK_THROWS_AS(build_master(tc.gc, scs, {}, m, mo), ConfigError);
  }
}

TEST_CASE("penalty regularizer matches its closed form") {
  const ToyCase tc = two_bus(2);
  const auto scs = toy_set(tc, 2);
  const ForecastModel m = warm_model(tc);
  MasterOptions mo;
  mo.radius = 0.0;
  mo.gamma_da = 0.3;
  mo.gamma_ust = 0.7;
  MasterProgram mp = build_master(tc.gc, scs, {}, m, mo);
  const MipSolution sol = solve_misocp(mp.prog, mp.ispec);
  REQUIRE(sol.has_incumbent());
  CHECK(sol.objective == doctest::Approx(forecast_penalty(m, scs, 0.3, 0.7)).epsilon(1e-6));
}

TEST_CASE("training on one toy scenario") {
  const ToyCase tc = two_bus(2);
  const auto scs = toy_set(tc, 1);
  const ForecastModel m = warm_model(tc);
  TrainConfig cfg;
  cfg.k_max = 20;
  const TrainResult res = train(tc.gc, scs, m, cfg);
  REQUIRE_FALSE(res.failed);
  CHECK(res.converged);
  CHECK(res.trace.rows.back().gap <= 1e-2);
  for (size_t i = 1; i < res.trace.rows.size(); ++i) {
    CHECK(res.trace.rows[i].lb >= res.trace.rows[i - 1].lb);
    CHECK(res.trace.rows[i].ub <= res.trace.rows[i - 1].ub);
  }
  // Secant and dual cuts are not globally valid, so LB may overshoot UB.
  const auto& last = res.trace.rows.back();
  if (last.lb > last.ub) MESSAGE("LB above UB at termination: " << last.lb << " > " << last.ub);
}

TEST_CASE("epsilon infinity stops after one iteration") {
  const ToyCase tc = two_bus(2);
  const auto scs = toy_set(tc, 2);
  const ForecastModel m = warm_model(tc);
  TrainConfig cfg;
  cfg.epsilon = kInf;
  const TrainResult res = train(tc.gc, scs, m, cfg);
  REQUIRE(res.trace.rows.size() == 2);
  CHECK(res.trace.rows[1].iteration == 1);
  CHECK(res.stop_reason == "gap");
  CHECK(res.incumbent_iteration <= 1);
  // The incumbent is whichever of the two evaluated points scored lower.
  CHECK(res.trace.rows[1].ub == std::min(res.trace.rows[0].z, res.trace.rows[1].z));
}

TEST_CASE("training determinism and trace output") {
  const ToyCase tc = two_bus(2);
  const auto scs = toy_set(tc, 3);
  const ForecastModel m = warm_model(tc);
  TrainConfig cfg;
  cfg.k_max = 4;
  const TrainResult a = train(tc.gc, scs, m, cfg);
  const TrainResult b = train(tc.gc, scs, m, cfg);
  REQUIRE(a.trace.rows.size() == b.trace.rows.size());
  for (size_t i = 0; i < a.trace.rows.size(); ++i) {
    CHECK(a.trace.rows[i].lb == b.trace.rows[i].lb);
    CHECK(a.trace.rows[i].ub == b.trace.rows[i].ub);
    CHECK(a.trace.rows[i].z == b.trace.rows[i].z);
  }
  CHECK(to_json(a.model) == to_json(b.model));
  std::ostringstream os;
  a.trace.write_csv(os);
  const std::string s = os.str();
  CHECK(s.rfind("iteration,lb,ub,gap,z,cuts,seconds,z_master\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == static_cast<long>(a.trace.rows.size() + 1));
}

TEST_CASE("training argument errors") {
  const ToyCase tc = two_bus(2);
  const auto scs = toy_set(tc, 1);
  const ForecastModel m = warm_model(tc);
  TrainConfig cfg;
  cfg.k_max = 0;
  CHECK_THROWS_AS(train(tc.gc, scs, m, cfg), ConfigError);
  cfg.k_max = 3;
  cfg.epsilon = -1.0;
  CHECK_THROWS_AS(train(tc.gc, scs, m, cfg), ConfigError);
  CHECK_THROWS_AS(train(tc.gc, {}, m, {}), DataError);

  // Limits no tap can meet: every scenario is infeasible at the start.
  ToyCase hard = tc;
  hard.gc.limits.v_min = 1.2;
  hard.gc.limits.v_max = 1.3;
  hard.gc.limits.root_max = 1.3;
  CHECK_THROWS_AS(train(hard.gc, scs, m, {}), ConfigError);
}
