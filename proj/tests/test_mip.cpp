#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "dfcvr/mip.hpp"
#include "test_util.hpp"

using namespace dfcvr;
using dfcvr::testing::Gen;

TEST_CASE("single integer above a fractional bound") {
  ConeProgram p;
  int x = p.add_variable(0.0, 10.0, "x");
  p.set_cost(x, 1.0);
  p.add_nonneg(AffineExpr::var(x) - AffineExpr(1.5));
  IntegerSpec spec{{x}, {}, {}};
  MipSolution s = solve_misocp(p, spec);
  REQUIRE(s.status == MipStatus::kOptimal);
  CHECK(s.x[x] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(s.objective == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("integral root needs one node") {
  ConeProgram p;
  int x = p.add_variable(-5.0, 5.0);
  int y = p.add_variable(-5.0, 5.0);
  p.set_cost(x, 1.0);
  p.set_cost(y, 1.0);
  p.add_nonneg(AffineExpr::var(x) + AffineExpr::var(y) - AffineExpr(2.0));
  p.add_nonneg(AffineExpr::var(x) - AffineExpr(1.0));
  p.add_nonneg(AffineExpr::var(y) - AffineExpr(1.0));
  MipSolution s = solve_misocp(p, IntegerSpec{{x, y}, {}, {}});
  REQUIRE(s.status == MipStatus::kOptimal);
  CHECK(s.nodes == 1);
  CHECK(s.objective == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("infeasible integer range") {
  ConeProgram p;
  int x = p.add_variable(0.0, 1.0);
  p.add_nonneg(AffineExpr::var(x) - AffineExpr(0.3));
  p.add_nonneg(AffineExpr(0.7) - AffineExpr::var(x));
  MipSolution s = solve_misocp(p, IntegerSpec{{x}, {}, {}});
  CHECK(s.status == MipStatus::kInfeasible);
  CHECK_FALSE(s.has_incumbent());
}

namespace {

// Random small MISOCP: minimize ||W z - target|| + c'z over integers z and a
// continuous shift u, with linear side constraints.
struct Instance {
  ConeProgram prog;
  IntegerSpec spec;
  std::vector<int> ints;
  std::vector<int> lo, hi;
};

Instance random_instance(Gen& g, bool one_hot) {
  Instance in;
  auto& p = in.prog;
  const int n = g.integer(2, 3);
  for (int i = 0; i < n; ++i) {
    in.lo.push_back(g.integer(-2, 0));
    in.hi.push_back(in.lo.back() + g.integer(1, 3));
    in.ints.push_back(p.add_variable(in.lo.back(), in.hi.back()));
    p.set_cost(in.ints.back(), g.uniform(-0.5, 0.5));
  }
  const int u = p.add_variable(-1.0, 1.0);
  const int t = p.add_variable();
  p.set_cost(t, 1.0);
  p.set_cost(u, g.uniform(-0.2, 0.2));
  std::vector<AffineExpr> rows{AffineExpr::var(t)};
  for (int r = 0; r < 3; ++r) {
    AffineExpr e(-g.uniform(-2.0, 2.0));
    for (int v : in.ints) e.add(v, g.uniform(-1.0, 1.0));
    e.add(u, g.uniform(-1.0, 1.0));
    rows.push_back(e);
  }
  p.add_soc(rows);
  AffineExpr side(g.uniform(1.0, 3.0));
  for (int v : in.ints) side.add(v, -g.uniform(0.0, 1.0));
  p.add_nonneg(side);
  in.spec.vars = in.ints;
  if (one_hot) {
    // Encode the first integer with binaries as well.
    OneHotGroup grp;
    grp.level = in.ints[0];
    std::vector<Term> sum, level{{in.ints[0], -1.0}};
    for (int k = in.lo[0]; k <= in.hi[0]; ++k) {
      int b = p.add_variable(0.0, 1.0);
      grp.binaries.push_back(b);
      grp.values.push_back(k);
      sum.push_back({b, 1.0});
      level.push_back({b, static_cast<double>(k)});
      in.spec.vars.push_back(b);
    }
    p.add_equality(sum, 1.0);
    p.add_equality(level, 0.0);
    in.spec.one_hot.push_back(grp);
  }
  return in;
}

double enumerate(const Instance& in) {
  double best = kInf;
  std::vector<double> lb = in.prog.lower_bounds(), ub = in.prog.upper_bounds();
  std::function<void(size_t)> rec = [&](size_t i) {
    if (i == in.ints.size()) {
      // One-hot binaries follow from the level; fix them too.
      std::vector<double> l = lb, u = ub;
      for (const auto& grp : in.spec.one_hot) {
        for (size_t k = 0; k < grp.binaries.size(); ++k) {
          double v = grp.values[k] == l[grp.level] ? 1.0 : 0.0;
          l[grp.binaries[k]] = u[grp.binaries[k]] = v;
        }
      }
      ConeSolution s = solve_socp(in.prog, l, u);
      if (s.ok()) best = std::min(best, s.objective);
      return;
    }
    for (int k = in.lo[i]; k <= in.hi[i]; ++k) {
      lb[in.ints[i]] = ub[in.ints[i]] = k;
      rec(i + 1);
    }
    lb[in.ints[i]] = in.lo[i];
    ub[in.ints[i]] = in.hi[i];
  };
  rec(0);
  return best;
}

}  // namespace

TEST_CASE("branch-and-bound matches enumeration") {
  Gen g(20240611);
  for (int trial = 0; trial < 20; ++trial) {
    CAPTURE(trial);
    Instance in = random_instance(g, trial % 2 == 1);
    const double oracle = enumerate(in);
    MipSolution s = solve_misocp(in.prog, in.spec);
    if (!std::isfinite(oracle)) {
      CHECK(s.status == MipStatus::kInfeasible);
      continue;
    }
    REQUIRE(s.status == MipStatus::kOptimal);
    CHECK(s.objective == doctest::Approx(oracle).epsilon(1e-6));
    for (int v : in.spec.vars) CHECK(s.x[v] == std::round(s.x[v]));

    // Global bound never decreases and never exceeds the incumbent.
    for (size_t k = 1; k < s.bound_trace.size(); ++k) {
      CHECK(s.bound_trace[k] >= s.bound_trace[k - 1] - 1e-9);
    }
    CHECK(s.best_bound <= s.objective + 1e-7);
  }
}

TEST_CASE("node limit reports the limit status") {
  Gen g(7);
  Instance in = random_instance(g, false);
  MipOptions o;
  o.node_limit = 1;
  o.rounding_threshold = 0.0;
  MipSolution s = solve_misocp(in.prog, in.spec, o);
  CHECK(s.nodes <= 1);
  if (s.status != MipStatus::kOptimal) CHECK(s.status == MipStatus::kLimit);
}
