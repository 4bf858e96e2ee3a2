#pragma once

// Second-order cone programs in constraint form
//
//   min  c'x + c0
//   s.t. A x = b                     (tagged equality rows)
//        e_k(x) in K_k               (affine expressions in a cone)
//        lb <= x <= ub
//
// where every K_k is the non-negative orthant of dimension one or a
// second-order cone {(t, u) : t >= ||u||}. Rotated cones are converted to
// standard ones when added. The solver is a homogeneous self-dual
// primal-dual interior-point method with Nesterov-Todd scaling.

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace dfcvr {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Term {
  int var = 0;
  double coef = 0.0;
};

struct AffineExpr {
  std::vector<Term> terms;
  double constant = 0.0;

  AffineExpr() = default;
  AffineExpr(double c) : constant(c) {}  // NOLINT: implicit constant
  AffineExpr(std::vector<Term> t, double c = 0.0)
      : terms(std::move(t)), constant(c) {}

  static AffineExpr var(int v, double coef = 1.0) { return AffineExpr({{v, coef}}); }
  AffineExpr& add(int v, double coef) {
    terms.push_back({v, coef});
    return *this;
  }
  AffineExpr& operator+=(const AffineExpr& o);
  AffineExpr& operator*=(double s);
  double eval(const std::vector<double>& x) const;
};

AffineExpr operator+(AffineExpr a, const AffineExpr& b);
AffineExpr operator-(AffineExpr a, const AffineExpr& b);
AffineExpr operator*(double s, AffineExpr a);

struct EqualityRow {
  std::vector<Term> terms;
  double rhs = 0.0;
  std::string tag;
};

// One cone constraint. For kNonneg `rows` has a single entry.
struct ConeConstraint {
  enum Kind { kNonneg, kSoc };
  Kind kind = kNonneg;
  std::vector<AffineExpr> rows;
};

class ConeProgram {
 public:
  int add_variable(double lb = -kInf, double ub = kInf, std::string name = {});
  int num_variables() const { return static_cast<int>(lb_.size()); }

  void set_cost(int var, double c);
  void add_cost(int var, double c);
  void add_objective_constant(double c) { objective_constant_ += c; }

  // Returns the row index used for dual lookup.
  int add_equality(std::vector<Term> terms, double rhs, std::string tag = {});
  void set_equality_rhs(int row, double rhs) { eqs_.at(row).rhs = rhs; }
  // expr >= 0
  void add_nonneg(AffineExpr expr);
  // rows[0] >= ||rows[1..]||
  void add_soc(std::vector<AffineExpr> rows);
  // 2*u*v >= ||w||^2 with u, v >= 0.
  void add_rotated_soc(const AffineExpr& u, const AffineExpr& v,
                       std::vector<AffineExpr> w);

  void set_bounds(int var, double lb, double ub);
  double lower(int var) const { return lb_[var]; }
  double upper(int var) const { return ub_[var]; }
  const std::vector<double>& lower_bounds() const { return lb_; }
  const std::vector<double>& upper_bounds() const { return ub_; }
  const std::string& name(int var) const { return names_[var]; }

  const std::vector<double>& costs() const { return cost_; }
  double objective_constant() const { return objective_constant_; }
  const std::vector<EqualityRow>& equalities() const { return eqs_; }
  const std::vector<ConeConstraint>& cones() const { return cones_; }

  double objective(const std::vector<double>& x) const;

  // Plain-text dump: dimensions followed by sparse triplets.
  void write_debug(std::ostream& os) const;

 private:
  void check_expr(const AffineExpr& e) const;

  std::vector<double> lb_, ub_, cost_;
  std::vector<std::string> names_;
  double objective_constant_ = 0.0;
  std::vector<EqualityRow> eqs_;
  std::vector<ConeConstraint> cones_;
};

enum class SolveStatus {
  kOptimal,
  kOptimalInaccurate,  // stalled close to optimal at reduced accuracy
  kInfeasible,
  kUnbounded,
  kIterationLimit,
  kNumericalFailure,
};

const char* to_string(SolveStatus s);

struct SolverOptions {
  double tol_feas = 1e-8;
  double tol_gap = 1e-8;
  int max_iter = 200;
  double step_fraction = 0.99;
  bool verbose = false;
};

struct ConeSolution {
  SolveStatus status = SolveStatus::kNumericalFailure;
  std::vector<double> x;
  // Per equality row, the derivative of the optimal value w.r.t. its rhs.
  std::vector<double> eq_duals;
  // Per cone constraint, multipliers in the dual cone (same shape as rows).
  std::vector<std::vector<double>> cone_duals;
  // Multipliers of the variable bounds (both >= 0).
  std::vector<double> lower_duals, upper_duals;
  double objective = 0.0;
  double dual_objective = 0.0;
  int iterations = 0;

  bool ok() const {
    return status == SolveStatus::kOptimal ||
           status == SolveStatus::kOptimalInaccurate;
  }
};

ConeSolution solve_socp(const ConeProgram& prog, const SolverOptions& opts = {});

// Same program with replacement variable bounds (branch-and-bound nodes).
ConeSolution solve_socp(const ConeProgram& prog, const std::vector<double>& lb,
                        const std::vector<double>& ub,
                        const SolverOptions& opts = {});

struct KktResiduals {
  double primal_res = 0.0;      // max |Ax - b|
  double dual_res = 0.0;        // max |c - A'y - sum G'z - zl + zu|
  double gap = 0.0;             // |primal - dual| / (1 + |primal|)
  double cone_violation = 0.0;  // bounds, primal cones, dual cones
};

KktResiduals kkt_residuals(const ConeProgram& prog, const ConeSolution& sol);

}  // namespace dfcvr
