#include <algorithm>
#include <cmath>
#include <ostream>

#include "dfcvr/conic.hpp"
#include "dfcvr/errors.hpp"

namespace dfcvr {

AffineExpr& AffineExpr::operator+=(const AffineExpr& o) {
  terms.insert(terms.end(), o.terms.begin(), o.terms.end());
  constant += o.constant;
  return *this;
}

AffineExpr& AffineExpr::operator*=(double s) {
  for (auto& t : terms) t.coef *= s;
  constant *= s;
  return *this;
}

double AffineExpr::eval(const std::vector<double>& x) const {
  double v = constant;
  for (const auto& t : terms) v += t.coef * x[t.var];
  return v;
}

AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
AffineExpr operator-(AffineExpr a, const AffineExpr& b) {
  AffineExpr nb = b;
  nb *= -1.0;
  return a += nb;
}
AffineExpr operator*(double s, AffineExpr a) { return a *= s; }

int ConeProgram::add_variable(double lb, double ub, std::string name) {
  if (std::isnan(lb) || std::isnan(ub)) throw DataError("NaN variable bound");
  lb_.push_back(lb);
  ub_.push_back(ub);
  cost_.push_back(0.0);
  names_.push_back(std::move(name));
  return num_variables() - 1;
}

void ConeProgram::set_cost(int var, double c) { cost_.at(var) = c; }
void ConeProgram::add_cost(int var, double c) { cost_.at(var) += c; }

void ConeProgram::check_expr(const AffineExpr& e) const {
  for (const auto& t : e.terms) {
    if (t.var < 0 || t.var >= num_variables()) {
      throw DataError("cone program term references unknown variable");
    }
    if (!std::isfinite(t.coef)) throw DataError("non-finite coefficient");
  }
  if (!std::isfinite(e.constant)) throw DataError("non-finite constant");
}

int ConeProgram::add_equality(std::vector<Term> terms, double rhs,
                              std::string tag) {
  check_expr(AffineExpr(terms));
  if (!std::isfinite(rhs)) throw DataError("non-finite equality rhs");
  eqs_.push_back({std::move(terms), rhs, std::move(tag)});
  return static_cast<int>(eqs_.size()) - 1;
}

void ConeProgram::add_nonneg(AffineExpr expr) {
  check_expr(expr);
  cones_.push_back({ConeConstraint::kNonneg, {std::move(expr)}});
}

void ConeProgram::add_soc(std::vector<AffineExpr> rows) {
  if (rows.empty()) throw DataError("empty second-order cone");
  for (const auto& r : rows) check_expr(r);
  if (rows.size() == 1) {
    add_nonneg(std::move(rows[0]));
    return;
  }
  cones_.push_back({ConeConstraint::kSoc, std::move(rows)});
}

void ConeProgram::add_rotated_soc(const AffineExpr& u, const AffineExpr& v,
                                  std::vector<AffineExpr> w) {
  const double k = 1.0 / std::sqrt(2.0);
  std::vector<AffineExpr> rows;
  rows.reserve(w.size() + 2);
  rows.push_back(k * (u + v));
  rows.push_back(k * (u - v));
  for (auto& e : w) rows.push_back(std::move(e));
  add_soc(std::move(rows));
}

void ConeProgram::set_bounds(int var, double lb, double ub) {
  lb_.at(var) = lb;
  ub_.at(var) = ub;
}

double ConeProgram::objective(const std::vector<double>& x) const {
  double v = objective_constant_;
  for (int j = 0; j < num_variables(); ++j) v += cost_[j] * x[j];
  return v;
}

void ConeProgram::write_debug(std::ostream& os) const {
  os.precision(17);
  os << "variables " << num_variables() << "\n";
  os << "equalities " << eqs_.size() << "\n";
  os << "cones " << cones_.size() << "\n";
  os << "objective_constant " << objective_constant_ << "\n";
  for (int j = 0; j < num_variables(); ++j) {
    os << "var " << j << " " << lb_[j] << " " << ub_[j] << " " << cost_[j];
    if (!names_[j].empty()) os << " " << names_[j];
    os << "\n";
  }
  for (size_t i = 0; i < eqs_.size(); ++i) {
    os << "eq " << i << " rhs " << eqs_[i].rhs;
    if (!eqs_[i].tag.empty()) os << " tag " << eqs_[i].tag;
    os << "\n";
    for (const auto& t : eqs_[i].terms) {
      os << "  " << i << " " << t.var << " " << t.coef << "\n";
    }
  }
  for (size_t k = 0; k < cones_.size(); ++k) {
    const auto& c = cones_[k];
    os << "cone " << k << (c.kind == ConeConstraint::kSoc ? " soc " : " nonneg ")
       << c.rows.size() << "\n";
    for (size_t r = 0; r < c.rows.size(); ++r) {
      os << "  row " << r << " const " << c.rows[r].constant << "\n";
      for (const auto& t : c.rows[r].terms) {
        os << "    " << r << " " << t.var << " " << t.coef << "\n";
      }
    }
  }
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kOptimalInaccurate: return "optimal_inaccurate";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kUnbounded: return "unbounded";
    case SolveStatus::kIterationLimit: return "iteration_limit";
    case SolveStatus::kNumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

namespace {

double soc_violation(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double tail = 0.0;
  for (size_t i = 1; i < v.size(); ++i) tail += v[i] * v[i];
  return std::max(0.0, std::sqrt(tail) - v[0]);
}

}  // namespace

KktResiduals kkt_residuals(const ConeProgram& prog, const ConeSolution& sol) {
  KktResiduals r;
  const int n = prog.num_variables();
  if (static_cast<int>(sol.x.size()) != n) {
    throw DataError("solution dimension does not match program");
  }
  auto dual_at = [](const std::vector<double>& v, size_t i) {
    return i < v.size() ? v[i] : 0.0;
  };

  std::vector<double> grad(prog.costs());
  double dual_obj = prog.objective_constant();
  for (size_t i = 0; i < prog.equalities().size(); ++i) {
    const auto& row = prog.equalities()[i];
    double ax = 0.0;
    for (const auto& t : row.terms) ax += t.coef * sol.x[t.var];
    r.primal_res = std::max(r.primal_res, std::abs(ax - row.rhs));
    const double y = dual_at(sol.eq_duals, i);
    for (const auto& t : row.terms) grad[t.var] -= t.coef * y;
    dual_obj += row.rhs * y;
  }
  for (size_t k = 0; k < prog.cones().size(); ++k) {
    const auto& cone = prog.cones()[k];
    std::vector<double> val(cone.rows.size());
    std::vector<double> z(cone.rows.size(), 0.0);
    for (size_t q = 0; q < cone.rows.size(); ++q) {
      val[q] = cone.rows[q].eval(sol.x);
      if (k < sol.cone_duals.size() && q < sol.cone_duals[k].size()) {
        z[q] = sol.cone_duals[k][q];
      }
      for (const auto& t : cone.rows[q].terms) grad[t.var] -= t.coef * z[q];
      dual_obj -= cone.rows[q].constant * z[q];
    }
    if (cone.kind == ConeConstraint::kNonneg) {
      r.cone_violation = std::max({r.cone_violation, -val[0], -z[0]});
    } else {
      r.cone_violation =
          std::max({r.cone_violation, soc_violation(val), soc_violation(z)});
    }
  }
  for (int j = 0; j < n; ++j) {
    const double zl = dual_at(sol.lower_duals, j);
    const double zu = dual_at(sol.upper_duals, j);
    grad[j] -= zl - zu;
    const double lb = prog.lower(j), ub = prog.upper(j);
    if (std::isfinite(lb)) {
      r.cone_violation = std::max(r.cone_violation, lb - sol.x[j]);
      dual_obj += lb * zl;
    }
    if (std::isfinite(ub)) {
      r.cone_violation = std::max(r.cone_violation, sol.x[j] - ub);
      dual_obj -= ub * zu;
    }
    r.cone_violation = std::max({r.cone_violation, -zl, -zu});
    r.dual_res = std::max(r.dual_res, std::abs(grad[j]));
  }
  const double primal_obj = prog.objective(sol.x);
  r.gap = std::abs(primal_obj - dual_obj) / (1.0 + std::abs(primal_obj));
  return r;
}

}  // namespace dfcvr
