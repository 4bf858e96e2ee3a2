// Homogeneous self-dual interior-point method for the internal form
//
//   min c'x  s.t.  A x = b,  G x + s = h,  s in K
//
// K = R^l_+ x SOC(q_1) x ... x SOC(q_N). The layout and the exit tests
// follow ECOS; the KKT system is factored with a sparse LDL' and refined
// against the unregularized matrix.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dfcvr/conic.hpp"
#include "dfcvr/errors.hpp"

namespace dfcvr {
namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Trip = Eigen::Triplet<double>;

constexpr double kStaticReg = 7e-8;
constexpr int kMaxRefine = 8;
constexpr double kReducedTol = 5e-5;
constexpr int kEquilibrationPasses = 3;

struct Reduced {
  int n = 0, p = 0, m = 0, l = 0;
  std::vector<int> soc_dims;
  SpMat A, G;
  Vec c, b, h;
  double obj_const = 0.0;
  std::vector<int> col_of;  // user var -> internal column, -1 when fixed
  std::vector<double> fixed;
  std::vector<int> eq_row;    // user equality -> internal row or -1
  std::vector<int> cone_row;  // user cone -> first internal G row or -1
  std::vector<int> lb_row, ub_row;
  bool infeasible = false;
};

Reduced reduce(const ConeProgram& prog, const std::vector<double>& lb,
               const std::vector<double>& ub) {
  Reduced r;
  const int nu = prog.num_variables();
  r.col_of.assign(nu, -1);
  r.fixed.assign(nu, 0.0);
  r.lb_row.assign(nu, -1);
  r.ub_row.assign(nu, -1);
  r.obj_const = prog.objective_constant();
  for (int j = 0; j < nu; ++j) {
    if (lb[j] > ub[j]) r.infeasible = true;
    if (lb[j] == ub[j]) {
      r.fixed[j] = lb[j];
      r.obj_const += prog.costs()[j] * lb[j];
    } else {
      r.col_of[j] = r.n++;
    }
  }
  if (r.infeasible) return r;

  // Collects free terms of an affine expression; returns the constant
  // including fixed-variable contributions.
  auto split = [&](const AffineExpr& e, std::vector<std::pair<int, double>>& out) {
    double k = e.constant;
    for (const auto& t : e.terms) {
      if (t.coef == 0.0) continue;
      if (r.col_of[t.var] >= 0) out.push_back({r.col_of[t.var], t.coef});
      else k += t.coef * r.fixed[t.var];
    }
    return k;
  };

  std::vector<Trip> at, gt;
  std::vector<double> bv, hv;
  r.eq_row.assign(prog.equalities().size(), -1);
  for (size_t i = 0; i < prog.equalities().size(); ++i) {
    const auto& row = prog.equalities()[i];
    std::vector<std::pair<int, double>> free;
    double k = split(AffineExpr(row.terms), free);
    double rhs = row.rhs - k;
    if (free.empty()) {
      if (std::abs(rhs) > 1e-9 * (1.0 + std::abs(row.rhs))) r.infeasible = true;
      continue;
    }
    r.eq_row[i] = r.p;
    for (auto [c, v] : free) at.emplace_back(r.p, c, v);
    bv.push_back(rhs);
    ++r.p;
  }

  // Nonnegative rows: variable bounds, then user rows. SOC blocks after.
  for (int j = 0; j < nu; ++j) {
    const int c = r.col_of[j];
    if (c < 0) continue;
    if (std::isfinite(lb[j])) {
      r.lb_row[j] = r.m;
      gt.emplace_back(r.m++, c, -1.0);
      hv.push_back(-lb[j]);
    }
    if (std::isfinite(ub[j])) {
      r.ub_row[j] = r.m;
      gt.emplace_back(r.m++, c, 1.0);
      hv.push_back(ub[j]);
    }
  }
  const auto& cones = prog.cones();
  r.cone_row.assign(cones.size(), -1);
  for (size_t k = 0; k < cones.size(); ++k) {
    if (cones[k].kind != ConeConstraint::kNonneg) continue;
    std::vector<std::pair<int, double>> free;
    double h = split(cones[k].rows[0], free);
    if (free.empty()) {
      if (h < -1e-9 * (1.0 + std::abs(h))) r.infeasible = true;
      continue;
    }
    r.cone_row[k] = r.m;
    for (auto [c, v] : free) gt.emplace_back(r.m, c, -v);
    hv.push_back(h);
    ++r.m;
  }
  r.l = r.m;
  for (size_t k = 0; k < cones.size(); ++k) {
    if (cones[k].kind != ConeConstraint::kSoc) continue;
    const auto& rows = cones[k].rows;
    std::vector<std::vector<std::pair<int, double>>> free(rows.size());
    std::vector<double> consts(rows.size());
    bool any = false;
    for (size_t q = 0; q < rows.size(); ++q) {
      consts[q] = split(rows[q], free[q]);
      any = any || !free[q].empty();
    }
    if (!any) {
      double tail = 0.0;
      for (size_t q = 1; q < rows.size(); ++q) tail += consts[q] * consts[q];
      if (std::sqrt(tail) - consts[0] > 1e-9 * (1.0 + std::abs(consts[0]))) {
        r.infeasible = true;
      }
      continue;
    }
    r.cone_row[k] = r.m;
    for (size_t q = 0; q < rows.size(); ++q) {
      for (auto [c, v] : free[q]) gt.emplace_back(r.m, c, -v);
      hv.push_back(consts[q]);
      ++r.m;
    }
    r.soc_dims.push_back(static_cast<int>(rows.size()));
  }

  r.A.resize(r.p, r.n);
  r.A.setFromTriplets(at.begin(), at.end());
  r.G.resize(r.m, r.n);
  r.G.setFromTriplets(gt.begin(), gt.end());
  r.c = Vec::Zero(r.n);
  for (int j = 0; j < nu; ++j) {
    if (r.col_of[j] >= 0) r.c[r.col_of[j]] = prog.costs()[j];
  }
  r.b = Eigen::Map<Vec>(bv.data(), static_cast<Eigen::Index>(bv.size()));
  r.h = Eigen::Map<Vec>(hv.data(), static_cast<Eigen::Index>(hv.size()));
  return r;
}

// Cone layout helper: nonnegative part [0, l), then SOC blocks.
struct Layout {
  int l = 0;
  std::vector<int> start, dim;
  int m = 0;
  int degree() const { return l + static_cast<int>(dim.size()); }
};

void add_e(const Layout& L, Vec& v, double alpha) {
  for (int i = 0; i < L.l; ++i) v[i] += alpha;
  for (size_t k = 0; k < L.dim.size(); ++k) v[L.start[k]] += alpha;
}

// u o v
Vec jordan_product(const Layout& L, const Vec& u, const Vec& v) {
  Vec r(L.m);
  for (int i = 0; i < L.l; ++i) r[i] = u[i] * v[i];
  for (size_t k = 0; k < L.dim.size(); ++k) {
    const int s = L.start[k], d = L.dim[k];
    r[s] = u.segment(s, d).dot(v.segment(s, d));
    r.segment(s + 1, d - 1) =
        u[s] * v.segment(s + 1, d - 1) + v[s] * u.segment(s + 1, d - 1);
  }
  return r;
}

// w with lambda o w = v
Vec jordan_divide(const Layout& L, const Vec& lam, const Vec& v) {
  Vec r(L.m);
  for (int i = 0; i < L.l; ++i) r[i] = v[i] / lam[i];
  for (size_t k = 0; k < L.dim.size(); ++k) {
    const int s = L.start[k], d = L.dim[k];
    const double l0 = lam[s];
    const auto l1 = lam.segment(s + 1, d - 1);
    const double det = l0 * l0 - l1.squaredNorm();
    const double w0 = (l0 * v[s] - l1.dot(v.segment(s + 1, d - 1))) / det;
    r[s] = w0;
    r.segment(s + 1, d - 1) = (v.segment(s + 1, d - 1) - w0 * l1) / l0;
  }
  return r;
}

// Largest alpha with lam + alpha * d in the cone (capped at `cap`).
double max_step(const Layout& L, const Vec& lam, const Vec& d, double cap) {
  double alpha = cap;
  for (int i = 0; i < L.l; ++i) {
    if (d[i] < 0.0) alpha = std::min(alpha, -lam[i] / d[i]);
  }
  for (size_t k = 0; k < L.dim.size(); ++k) {
    const int s = L.start[k], dm = L.dim[k];
    const double x0 = lam[s], d0 = d[s];
    const auto x1 = lam.segment(s + 1, dm - 1);
    const auto d1 = d.segment(s + 1, dm - 1);
    const double a = d0 * d0 - d1.squaredNorm();
    const double b = x0 * d0 - x1.dot(d1);
    const double c = x0 * x0 - x1.squaredNorm();
    // f(t) = a t^2 + 2 b t + c, f(0) = c > 0.
    double root = kInf;
    if (a == 0.0) {
      if (b < 0.0) root = -c / (2.0 * b);
    } else {
      const double disc = b * b - a * c;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double q = -(b + std::copysign(sq, b));
        double r1 = (a != 0.0) ? q / a : kInf;
        double r2 = (q != 0.0) ? c / q : kInf;
        if (r1 > 0.0) root = std::min(root, r1);
        if (r2 > 0.0) root = std::min(root, r2);
      }
    }
    if (d0 < 0.0) root = std::min(root, -x0 / d0);
    alpha = std::min(alpha, root);
  }
  return std::max(alpha, 0.0);
}

double min_eig(const Layout& L, const Vec& v) {
  double e = kInf;
  for (int i = 0; i < L.l; ++i) e = std::min(e, v[i]);
  for (size_t k = 0; k < L.dim.size(); ++k) {
    const int s = L.start[k], d = L.dim[k];
    e = std::min(e, v[s] - v.segment(s + 1, d - 1).norm());
  }
  return e;
}

// Nesterov-Todd scaling: W z = W^{-1} s = lambda.
struct Scaling {
  Vec w_l;  // nonnegative part, W = diag(w_l)
  std::vector<Mat> W, W2;

  void update(const Layout& L, const Vec& s, const Vec& z) {
    w_l.resize(L.l);
    for (int i = 0; i < L.l; ++i) w_l[i] = std::sqrt(s[i] / z[i]);
    W.resize(L.dim.size());
    W2.resize(L.dim.size());
    for (size_t k = 0; k < L.dim.size(); ++k) {
      const int st = L.start[k], d = L.dim[k];
      Vec sk = s.segment(st, d), zk = z.segment(st, d);
      const double sres = sk[0] * sk[0] - sk.tail(d - 1).squaredNorm();
      const double zres = zk[0] * zk[0] - zk.tail(d - 1).squaredNorm();
      const double sn = std::sqrt(std::max(sres, 1e-300));
      const double zn = std::sqrt(std::max(zres, 1e-300));
      Vec sb = sk / sn, zb = zk / zn;
      const double gamma = std::sqrt(std::max((1.0 + sb.dot(zb)) / 2.0, 1e-300));
      Vec wb(d);
      wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
      wb.tail(d - 1) = (sb.tail(d - 1) - zb.tail(d - 1)) / (2.0 * gamma);
      const double eta = std::sqrt(sn / zn);
      const double a = wb[0];
      Vec q = wb.tail(d - 1);
      Mat w(d, d);
      w(0, 0) = a;
      w.block(0, 1, 1, d - 1) = q.transpose();
      w.block(1, 0, d - 1, 1) = q;
      w.block(1, 1, d - 1, d - 1) =
          Mat::Identity(d - 1, d - 1) + q * q.transpose() / (1.0 + a);
      W[k] = eta * w;
      W2[k] = W[k] * W[k];
    }
  }

  void identity(const Layout& L) {
    w_l = Vec::Ones(L.l);
    W.resize(L.dim.size());
    W2.resize(L.dim.size());
    for (size_t k = 0; k < L.dim.size(); ++k) {
      W[k] = Mat::Identity(L.dim[k], L.dim[k]);
      W2[k] = W[k];
    }
  }

  Vec apply(const Layout& L, const Vec& v) const {
    Vec r(L.m);
    for (int i = 0; i < L.l; ++i) r[i] = w_l[i] * v[i];
    for (size_t k = 0; k < L.dim.size(); ++k) {
      r.segment(L.start[k], L.dim[k]) = W[k] * v.segment(L.start[k], L.dim[k]);
    }
    return r;
  }

  Vec apply_sq(const Layout& L, const Vec& v) const {
    Vec r(L.m);
    for (int i = 0; i < L.l; ++i) r[i] = w_l[i] * w_l[i] * v[i];
    for (size_t k = 0; k < L.dim.size(); ++k) {
      r.segment(L.start[k], L.dim[k]) = W2[k] * v.segment(L.start[k], L.dim[k]);
    }
    return r;
  }
};

class KktSystem {
 public:
  KktSystem(const SpMat& A, const SpMat& G, const Layout& L)
      : A_(A), G_(G), L_(L), n_(A.cols()), p_(A.rows()), m_(G.rows()) {
    const int N = n_ + p_ + m_;
    for (int j = 0; j < n_; ++j) trips_.emplace_back(j, j, kStaticReg);
    for (int j = 0; j < A.outerSize(); ++j) {
      for (SpMat::InnerIterator it(A, j); it; ++it) {
        trips_.emplace_back(n_ + it.row(), j, it.value());
      }
    }
    for (int i = 0; i < p_; ++i) trips_.emplace_back(n_ + i, n_ + i, -kStaticReg);
    for (int j = 0; j < G.outerSize(); ++j) {
      for (SpMat::InnerIterator it(G, j); it; ++it) {
        trips_.emplace_back(n_ + p_ + it.row(), j, it.value());
      }
    }
    w_begin_ = trips_.size();
    const int o = n_ + p_;
    for (int i = 0; i < L.l; ++i) trips_.emplace_back(o + i, o + i, -1.0);
    for (size_t k = 0; k < L.dim.size(); ++k) {
      const int s = L.start[k], d = L.dim[k];
      for (int c = 0; c < d; ++c) {
        for (int r = c; r < d; ++r) trips_.emplace_back(o + s + r, o + s + c, -1.0);
      }
    }
    K_.resize(N, N);
    K_.setFromTriplets(trips_.begin(), trips_.end());
    ldlt_.analyzePattern(K_);
  }

  bool factor(const Scaling& sc) {
    scaling_ = &sc;
    size_t pos = w_begin_;
    const int o = n_ + p_;
    for (int i = 0; i < L_.l; ++i) {
      trips_[pos++] = Trip(o + i, o + i, -sc.w_l[i] * sc.w_l[i] - kStaticReg);
    }
    for (size_t k = 0; k < L_.dim.size(); ++k) {
      const int s = L_.start[k], d = L_.dim[k];
      for (int c = 0; c < d; ++c) {
        for (int r = c; r < d; ++r) {
          double v = -sc.W2[k](r, c);
          if (r == c) v -= kStaticReg;
          trips_[pos++] = Trip(o + s + r, o + s + c, v);
        }
      }
    }
    K_.setFromTriplets(trips_.begin(), trips_.end());
    ldlt_.factorize(K_);
    return ldlt_.info() == Eigen::Success;
  }

  Vec solve(const Vec& rhs) const {
    Vec u = ldlt_.solve(rhs);
    double err_norm = kInf;
    for (int k = 0; k < kMaxRefine; ++k) {
      Vec e = rhs - multiply(u);
      const double en = e.lpNorm<Eigen::Infinity>();
      if (!(en < err_norm)) break;
      err_norm = en;
      if (en <= 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) break;
      u += ldlt_.solve(e);
    }
    return u;
  }

 private:
  // Unregularized K * u.
  Vec multiply(const Vec& u) const {
    Vec r(n_ + p_ + m_);
    const auto ux = u.head(n_);
    const auto uy = u.segment(n_, p_);
    const Vec uz = u.tail(m_);
    r.head(n_) = A_.transpose() * uy + G_.transpose() * uz;
    r.segment(n_, p_) = A_ * ux;
    r.tail(m_) = G_ * ux - scaling_->apply_sq(L_, uz);
    return r;
  }

  const SpMat& A_;
  const SpMat& G_;
  const Layout& L_;
  int n_, p_, m_;
  std::vector<Trip> trips_;
  size_t w_begin_ = 0;
  SpMat K_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  const Scaling* scaling_ = nullptr;
};

// Row/column equilibration; SOC blocks share one row factor.
void equilibrate(Reduced& r, const Layout& L, Vec& dc, Vec& dra, Vec& drg) {
  dc = Vec::Ones(r.n);
  dra = Vec::Ones(r.p);
  drg = Vec::Ones(r.m);
  auto clamp_scale = [](double norm) {
    if (norm < 1e-6) return 1.0;
    return std::clamp(1.0 / std::sqrt(norm), 1e-4, 1e4);
  };
  for (int pass = 0; pass < kEquilibrationPasses; ++pass) {
    Vec col = Vec::Zero(r.n), ra = Vec::Zero(r.p), rg = Vec::Zero(r.m);
    for (int j = 0; j < r.n; ++j) {
      for (SpMat::InnerIterator it(r.A, j); it; ++it) {
        const double v = std::abs(it.value());
        col[j] = std::max(col[j], v);
        ra[it.row()] = std::max(ra[it.row()], v);
      }
      for (SpMat::InnerIterator it(r.G, j); it; ++it) {
        const double v = std::abs(it.value());
        col[j] = std::max(col[j], v);
        rg[it.row()] = std::max(rg[it.row()], v);
      }
    }
    for (size_t k = 0; k < L.dim.size(); ++k) {
      const double mx = rg.segment(L.start[k], L.dim[k]).maxCoeff();
      rg.segment(L.start[k], L.dim[k]).setConstant(mx);
    }
    Vec sc(r.n), sa(r.p), sg(r.m);
    for (int j = 0; j < r.n; ++j) sc[j] = clamp_scale(col[j]);
    for (int i = 0; i < r.p; ++i) sa[i] = clamp_scale(ra[i]);
    for (int i = 0; i < r.m; ++i) sg[i] = clamp_scale(rg[i]);
    for (int j = 0; j < r.n; ++j) {
      for (SpMat::InnerIterator it(r.A, j); it; ++it) it.valueRef() *= sa[it.row()] * sc[j];
      for (SpMat::InnerIterator it(r.G, j); it; ++it) it.valueRef() *= sg[it.row()] * sc[j];
    }
    dc.array() *= sc.array();
    dra.array() *= sa.array();
    drg.array() *= sg.array();
  }
  r.c.array() *= dc.array();
  r.b.array() *= dra.array();
  r.h.array() *= drg.array();
}

struct Iterate {
  Vec x, y, z, s;
  double tau = 1.0, kappa = 1.0;
};

struct Stats {
  double pres = kInf, dres = kInf, pcost = 0.0, dcost = 0.0, gap = kInf;
  double score = kInf;
};

void fill_solution(const ConeProgram& prog, const Reduced& r, const Iterate& it,
                   const Vec& dc, const Vec& dra, const Vec& drg,
                   ConeSolution& sol) {
  const int nu = prog.num_variables();
  const double tau = it.tau;
  sol.x.assign(nu, 0.0);
  for (int j = 0; j < nu; ++j) {
    const int c = r.col_of[j];
    sol.x[j] = (c >= 0) ? dc[c] * it.x[c] / tau : r.fixed[j];
  }
  sol.eq_duals.assign(prog.equalities().size(), 0.0);
  for (size_t i = 0; i < sol.eq_duals.size(); ++i) {
    const int row = r.eq_row[i];
    if (row >= 0) sol.eq_duals[i] = -dra[row] * it.y[row] / tau;
  }
  auto zval = [&](int row) { return drg[row] * it.z[row] / tau; };
  sol.cone_duals.assign(prog.cones().size(), {});
  for (size_t k = 0; k < prog.cones().size(); ++k) {
    const size_t d = prog.cones()[k].rows.size();
    sol.cone_duals[k].assign(d, 0.0);
    if (r.cone_row[k] < 0) continue;
    for (size_t q = 0; q < d; ++q) sol.cone_duals[k][q] = zval(r.cone_row[k] + static_cast<int>(q));
  }
  sol.lower_duals.assign(nu, 0.0);
  sol.upper_duals.assign(nu, 0.0);
  for (int j = 0; j < nu; ++j) {
    if (r.lb_row[j] >= 0) sol.lower_duals[j] = zval(r.lb_row[j]);
    if (r.ub_row[j] >= 0) sol.upper_duals[j] = zval(r.ub_row[j]);
  }
  // Fixed variables: reduced cost split onto the bound multipliers.
  std::vector<double> red(prog.costs());
  bool any_fixed = false;
  for (int j = 0; j < nu; ++j) any_fixed = any_fixed || r.col_of[j] < 0;
  if (any_fixed) {
    for (size_t i = 0; i < prog.equalities().size(); ++i) {
      for (const auto& t : prog.equalities()[i].terms) red[t.var] -= t.coef * sol.eq_duals[i];
    }
    for (size_t k = 0; k < prog.cones().size(); ++k) {
      const auto& rows = prog.cones()[k].rows;
      for (size_t q = 0; q < rows.size(); ++q) {
        for (const auto& t : rows[q].terms) red[t.var] -= t.coef * sol.cone_duals[k][q];
      }
    }
    for (int j = 0; j < nu; ++j) {
      if (r.col_of[j] >= 0) continue;
      sol.lower_duals[j] = std::max(red[j], 0.0);
      sol.upper_duals[j] = std::max(-red[j], 0.0);
    }
  }
  sol.objective = prog.objective(sol.x);
  double dobj = prog.objective_constant();
  for (size_t i = 0; i < prog.equalities().size(); ++i) {
    dobj += prog.equalities()[i].rhs * sol.eq_duals[i];
  }
  for (size_t k = 0; k < prog.cones().size(); ++k) {
    const auto& rows = prog.cones()[k].rows;
    for (size_t q = 0; q < rows.size(); ++q) dobj -= rows[q].constant * sol.cone_duals[k][q];
  }
  for (int j = 0; j < nu; ++j) {
    if (sol.lower_duals[j] != 0.0) dobj += prog.lower(j) * sol.lower_duals[j];
    if (sol.upper_duals[j] != 0.0) dobj -= prog.upper(j) * sol.upper_duals[j];
  }
  sol.dual_objective = dobj;
}

}  // namespace

ConeSolution solve_socp(const ConeProgram& prog, const SolverOptions& opts) {
  return solve_socp(prog, prog.lower_bounds(), prog.upper_bounds(), opts);
}

ConeSolution solve_socp(const ConeProgram& prog, const std::vector<double>& lb,
                        const std::vector<double>& ub, const SolverOptions& opts) {
  if (static_cast<int>(lb.size()) != prog.num_variables() ||
      static_cast<int>(ub.size()) != prog.num_variables()) {
    throw DataError("bound vectors do not match the program dimension");
  }
  ConeSolution sol;
  Reduced r = reduce(prog, lb, ub);
  if (r.infeasible) {
    sol.status = SolveStatus::kInfeasible;
    sol.x.assign(prog.num_variables(), 0.0);
    return sol;
  }

  Layout L;
  L.l = r.l;
  L.m = r.m;
  int pos = r.l;
  for (int d : r.soc_dims) {
    L.start.push_back(pos);
    L.dim.push_back(d);
    pos += d;
  }

  Iterate it;
  Vec dc, dra, drg;
  if (r.n == 0) {
    // Nothing left to optimize; the reduction already checked feasibility.
    it.x = Vec::Zero(0);
    it.y = Vec::Zero(r.p);
    it.z = Vec::Zero(r.m);
    dc = Vec::Zero(0);
    dra = Vec::Ones(r.p);
    drg = Vec::Ones(r.m);
    bool ok = r.p == 0 || r.b.lpNorm<Eigen::Infinity>() <= 1e-9;
    ok = ok && (r.m == 0 || min_eig(L, r.h) >= -1e-9);
    sol.status = ok ? SolveStatus::kOptimal : SolveStatus::kInfeasible;
    fill_solution(prog, r, it, dc, dra, drg, sol);
    return sol;
  }

  const double bnorm = std::max(1.0, r.b.norm());
  const double hnorm = std::max(1.0, r.h.norm());
  const double cnorm = std::max(1.0, r.c.norm());
  equilibrate(r, L, dc, dra, drg);

  KktSystem kkt(r.A, r.G, L);
  Scaling sc;
  sc.identity(L);
  if (!kkt.factor(sc)) {
    sol.status = SolveStatus::kNumericalFailure;
    sol.x.assign(prog.num_variables(), 0.0);
    return sol;
  }
  const int N = r.n + r.p + r.m;
  {
    Vec rhs = Vec::Zero(N);
    rhs.segment(r.n, r.p) = r.b;
    rhs.tail(r.m) = r.h;
    Vec u = kkt.solve(rhs);
    it.x = u.head(r.n);
    it.s = -u.tail(r.m);
    rhs.setZero();
    rhs.head(r.n) = -r.c;
    u = kkt.solve(rhs);
    it.y = u.segment(r.n, r.p);
    it.z = u.tail(r.m);
    if (r.m > 0) {
      // Shift onto the interior when on or outside the boundary.
      double a = -min_eig(L, it.s);
      if (a >= -1e-8 * std::max(1.0, it.s.norm())) add_e(L, it.s, 1.0 + a);
      a = -min_eig(L, it.z);
      if (a >= -1e-8 * std::max(1.0, it.z.norm())) add_e(L, it.z, 1.0 + a);
    }
    it.tau = 1.0;
    it.kappa = 1.0;
  }

  Iterate best = it;
  Stats best_stats;
  SolveStatus status = SolveStatus::kIterationLimit;
  const double D = L.degree();
  int iter = 0;
  const Vec e_rhs_c = -r.c;

  for (;; ++iter) {
    // Residuals of the homogeneous embedding (scaled space).
    Vec Fx = r.A.transpose() * it.y + r.G.transpose() * it.z + r.c * it.tau;
    Vec Fy = -(r.A * it.x) + r.b * it.tau;
    Vec Fz = -(r.G * it.x) + r.h * it.tau - it.s;
    const double cx = r.c.dot(it.x), by = r.b.dot(it.y), hz = r.h.dot(it.z);
    const double Ft = -cx - by - hz - it.kappa;

    Stats st;
    const double tau = it.tau;
    st.pres = std::max((Fy.array() / dra.array()).matrix().norm() / bnorm,
                       (Fz.array() / drg.array()).matrix().norm() / hnorm) / tau;
    st.dres = (Fx.array() / dc.array()).matrix().norm() / cnorm / tau;
    st.pcost = cx / tau;
    st.dcost = -(by + hz) / tau;
    st.gap = it.s.dot(it.z) / (tau * tau);
    const double rel = 1.0 + std::abs(st.pcost);
    const double gap_rel = std::max(st.gap, std::abs(st.pcost - st.dcost)) / rel;
    st.score = std::max({st.pres, st.dres, gap_rel});

    if (opts.verbose) {
      std::fprintf(stderr, "%3d pcost %+.6e dcost %+.6e gap %.2e pres %.2e dres %.2e k/t %.2e mins %.2e minz %.2e\n",
                   iter, st.pcost, st.dcost, st.gap, st.pres, st.dres, it.kappa / tau,
                   r.m ? min_eig(L, it.s) : 0.0, r.m ? min_eig(L, it.z) : 0.0);
    }
    if (st.score < best_stats.score) {
      best = it;
      best_stats = st;
    }
    if (st.pres < opts.tol_feas && st.dres < opts.tol_feas &&
        gap_rel < opts.tol_gap) {
      status = SolveStatus::kOptimal;
      best = it;
      best_stats = st;
      break;
    }
    // Infeasibility certificates (unscaled norms, no tau normalization).
    if (by + hz < 0.0 && it.kappa > it.tau) {
      Vec aty = ((Fx - r.c * it.tau).array() / dc.array()).matrix();
      if (aty.norm() / -(by + hz) < opts.tol_feas) {
        status = SolveStatus::kInfeasible;
        break;
      }
    }
    if (cx < 0.0 && it.kappa > it.tau) {
      Vec ax = ((r.b * it.tau - Fy).array() / dra.array()).matrix();
      Vec gxs = ((r.h * it.tau - Fz).array() / drg.array()).matrix();
      if (std::max(ax.norm(), gxs.norm()) / -cx < opts.tol_feas) {
        status = SolveStatus::kUnbounded;
        break;
      }
    }
    if (iter >= opts.max_iter) break;

    // Scaling and factorization.
    sc.update(L, it.s, it.z);
    const Vec lam = sc.apply(L, it.z);
    if (!kkt.factor(sc)) {
      status = SolveStatus::kNumericalFailure;
      break;
    }
    const double mu = (it.s.dot(it.z) + it.tau * it.kappa) / (D + 1.0);

    Vec rhs1(N);
    rhs1.head(r.n) = e_rhs_c;
    rhs1.segment(r.n, r.p) = r.b;
    rhs1.tail(r.m) = r.h;
    const Vec u1 = kkt.solve(rhs1);
    const double denom_base = -(r.c.dot(u1.head(r.n)) + r.b.dot(u1.segment(r.n, r.p)) +
                                r.h.dot(u1.tail(r.m)));

    // Solves the Newton system for a given centering target.
    struct Dir {
      Vec x, y, z, s;
      double tau = 0.0, kappa = 0.0;
    };
    auto direction = [&](double sigma, const Vec& ds, double dkappa, Dir& d,
                         Vec& Wdz) {
      const Vec wlds = sc.apply(L, jordan_divide(L, lam, ds));
      Vec rhs2(N);
      rhs2.head(r.n) = -(1.0 - sigma) * Fx;
      rhs2.segment(r.n, r.p) = (1.0 - sigma) * Fy;
      rhs2.tail(r.m) = (1.0 - sigma) * Fz - wlds;
      const Vec u2 = kkt.solve(rhs2);
      const double num = -(1.0 - sigma) * Ft + dkappa / it.tau +
                         r.c.dot(u2.head(r.n)) + r.b.dot(u2.segment(r.n, r.p)) +
                         r.h.dot(u2.tail(r.m));
      const double den = it.kappa / it.tau + denom_base;
      d.tau = num / den;
      d.x = u2.head(r.n) + d.tau * u1.head(r.n);
      d.y = u2.segment(r.n, r.p) + d.tau * u1.segment(r.n, r.p);
      d.z = u2.tail(r.m) + d.tau * u1.tail(r.m);
      Wdz = sc.apply(L, d.z);
      // W^{-1} ds_dir = lambda \ ds - W dz
      d.s = jordan_divide(L, lam, ds) - Wdz;  // scaled form, mapped below
      d.kappa = (dkappa - it.kappa * d.tau) / it.tau;
    };
    auto step_length = [&](const Dir& d, const Vec& Wdz, double cap) {
      double a = cap;
      if (r.m > 0) {
        a = std::min(a, max_step(L, lam, d.s, cap));
        a = std::min(a, max_step(L, lam, Wdz, cap));
      }
      if (d.tau < 0.0) a = std::min(a, -it.tau / d.tau);
      if (d.kappa < 0.0) a = std::min(a, -it.kappa / d.kappa);
      return a;
    };

    // Affine (predictor) direction.
    Vec ds_aff = -jordan_product(L, lam, lam);
    Dir da;
    Vec Wdz_a;
    direction(0.0, ds_aff, -it.kappa * it.tau, da, Wdz_a);
    const double alpha_aff = step_length(da, Wdz_a, 1.0);
    double sigma = std::pow(1.0 - alpha_aff, 3);
    sigma = std::clamp(sigma, 1e-8, 1.0);

    // Combined direction.
    Vec ds = ds_aff - jordan_product(L, da.s, Wdz_a);
    add_e(L, ds, sigma * mu);
    const double dkappa = -it.kappa * it.tau - da.kappa * da.tau + sigma * mu;
    Dir dd;
    Vec Wdz;
    direction(sigma, ds, dkappa, dd, Wdz);
    double alpha = step_length(dd, Wdz, kInf);
    alpha = std::min(1.0, opts.step_fraction * alpha);
    if (!std::isfinite(alpha) || !dd.x.allFinite() || !dd.z.allFinite()) {
      status = SolveStatus::kNumericalFailure;
      break;
    }
    if (alpha < 1e-10) {
      status = SolveStatus::kNumericalFailure;
      break;
    }
    const Vec dsv = sc.apply(L, dd.s);  // W (W^{-1} ds)
    it.x += alpha * dd.x;
    it.y += alpha * dd.y;
    it.z += alpha * dd.z;
    it.s += alpha * dsv;
    it.tau += alpha * dd.tau;
    it.kappa += alpha * dd.kappa;
  }

  if (status == SolveStatus::kInfeasible || status == SolveStatus::kUnbounded) {
    sol.status = status;
    sol.iterations = iter;
    fill_solution(prog, r, it, dc, dra, drg, sol);
    return sol;
  }
  if (status != SolveStatus::kOptimal) {
    if (best_stats.score < kReducedTol) status = SolveStatus::kOptimalInaccurate;
  }
  sol.status = status;
  sol.iterations = iter;
  fill_solution(prog, r, best, dc, dra, drg, sol);
  return sol;
}

}  // namespace dfcvr
