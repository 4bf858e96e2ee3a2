#include "distflow.hpp"

#include <cmath>

#include "dfcvr/errors.hpp"

namespace dfcvr::detail {

namespace {

std::string label(const std::string& prefix, const char* kind, int id, int t) {
  return prefix + kind + "[" + std::to_string(id) + "," + std::to_string(t) + "]";
}

// Moves an injection expression to the left-hand side of a balance row.
void subtract(std::vector<Term>& terms, double& rhs, const AffineExpr& e) {
  for (const auto& t : e.terms) terms.push_back({t.var, -t.coef});
  rhs += e.constant;
}

}  // namespace

NetworkState empty_state(int buses, int branches, int horizon) {
  NetworkState s;
  auto mat = [&](int rows) { return Matrix(rows, std::vector<double>(horizon, 0.0)); };
  s.v_sq = mat(buses);
  s.i_sq = mat(branches);
  s.p_flow = mat(branches);
  s.q_flow = mat(branches);
  s.p_sub.assign(horizon, 0.0);
  s.q_sub.assign(horizon, 0.0);
  s.p_load = mat(buses);
  s.q_load = mat(buses);
  s.p_inj = mat(buses);
  s.q_inj = mat(buses);
  return s;
}

DistFlowVars add_distflow(ConeProgram& prog, const GridCase& gc, const LoadProfile& loads,
                          const FlowInputs& in) {
  const NetworkModel& net = gc.net;
  const int nb = net.num_buses();
  const int nl = net.num_branches();
  const int H = static_cast<int>(in.hours.size());
  if (loads.num_buses() != nb) throw DataError("load profile does not match the network");
  if (in.root_vsq.size() != in.hours.size()) throw DataError("root voltage per hour missing");
  if (in.pv_p.size() != gc.fleet.pvs.size()) throw DataError("PV injection rows mismatch");
  if (static_cast<int>(in.q_inj.size()) != nb) throw DataError("reactive injection rows mismatch");

  const ZipLinear zl = zip_linear_terms(gc.zip);
  const VoltageLimits& lim = gc.limits;
  const double w = in.objective_weight;
  const double vlo = in.soft ? 0.25 : lim.v_min * lim.v_min;
  const double vhi = in.soft ? 2.25 : lim.v_max * lim.v_max;

  DistFlowVars d;
  d.hours = in.hours;
  d.v.assign(nb, std::vector<int>(H, -1));
  d.l.assign(nl, std::vector<int>(H, -1));
  d.p.assign(nl, std::vector<int>(H, -1));
  d.q.assign(nl, std::vector<int>(H, -1));
  d.p_row.assign(nb, std::vector<int>(H, -1));
  d.q_row.assign(nb, std::vector<int>(H, -1));
  d.over.assign(nb, std::vector<int>(H, -1));
  d.under.assign(nb, std::vector<int>(H, -1));
  d.p_sub.assign(H, -1);
  d.q_sub.assign(H, -1);

  for (int h = 0; h < H; ++h) {
    const int t = in.hours[h];
    if (t < 0 || t >= loads.horizon()) throw DataError("hour outside the load horizon");

    for (int i = 0; i < nb; ++i) {
      const int id = net.bus_ids()[i];
      if (i == net.root()) {
        const AffineExpr& rv = in.root_vsq[h];
        if (rv.terms.empty()) {
          d.v[i][h] = prog.add_variable(rv.constant, rv.constant, label(in.prefix, "v", id, t));
        } else {
          d.v[i][h] = prog.add_variable(lim.root_min * lim.root_min, lim.root_max * lim.root_max,
                                        label(in.prefix, "v", id, t));
          std::vector<Term> terms{{d.v[i][h], 1.0}};
          double rhs = 0.0;
          subtract(terms, rhs, rv);
          prog.add_equality(terms, rhs, label(in.prefix, "root", id, t));
        }
      } else {
        d.v[i][h] = prog.add_variable(vlo, vhi, label(in.prefix, "v", id, t));
        if (in.soft) {
          d.over[i][h] = prog.add_variable(0.0, kInf, label(in.prefix, "so", id, t));
          d.under[i][h] = prog.add_variable(0.0, kInf, label(in.prefix, "su", id, t));
          prog.set_cost(d.over[i][h], w * in.penalty);
          prog.set_cost(d.under[i][h], w * in.penalty);
          const double hi = lim.v_max * lim.v_max, lo = lim.v_min * lim.v_min;
          prog.add_nonneg(AffineExpr({{d.over[i][h], 1.0}, {d.v[i][h], -1.0}}, hi));
          prog.add_nonneg(AffineExpr({{d.under[i][h], 1.0}, {d.v[i][h], 1.0}}, -lo));
        }
      }
      // Linearized ZIP load enters the objective through v.
      const double rp = loads.rated_p[i][t];
      prog.add_cost(d.v[i][h], w * gc.weights.w_load * rp * zl.a_p);
      prog.add_objective_constant(w * gc.weights.w_load * rp * zl.b_p);
    }
    for (int k = 0; k < nl; ++k) {
      const int to_id = net.bus_ids()[net.branch(k).to];
      d.l[k][h] = prog.add_variable(0.0, kInf, label(in.prefix, "l", to_id, t));
      d.p[k][h] = prog.add_variable(-kInf, kInf, label(in.prefix, "P", to_id, t));
      d.q[k][h] = prog.add_variable(-kInf, kInf, label(in.prefix, "Q", to_id, t));
      prog.set_cost(d.l[k][h], w * gc.weights.w_loss * net.branch(k).r);
    }
    d.p_sub[h] = prog.add_variable(-kInf, kInf, label(in.prefix, "psub", 0, t));
    d.q_sub[h] = prog.add_variable(-kInf, kInf, label(in.prefix, "qsub", 0, t));

    for (int i = 0; i < nb; ++i) {
      const int id = net.bus_ids()[i];
      std::vector<Term> pt, qt;
      double prhs = -loads.rated_p[i][t] * zl.b_p;
      double qrhs = -loads.rated_q[i][t] * zl.b_q;
      pt.push_back({d.v[i][h], loads.rated_p[i][t] * zl.a_p});
      qt.push_back({d.v[i][h], loads.rated_q[i][t] * zl.a_q});
      for (int c : net.child_branches(i)) {
        pt.push_back({d.p[c][h], 1.0});
        qt.push_back({d.q[c][h], 1.0});
      }
      const int par = net.parent_branch(i);
      if (par >= 0) {
        pt.push_back({d.p[par][h], -1.0});
        pt.push_back({d.l[par][h], net.branch(par).r});
        qt.push_back({d.q[par][h], -1.0});
        qt.push_back({d.l[par][h], net.branch(par).x});
      } else {
        pt.push_back({d.p_sub[h], -1.0});
        qt.push_back({d.q_sub[h], -1.0});
      }
      for (size_t g = 0; g < gc.fleet.pvs.size(); ++g) {
        if (gc.fleet.pvs[g].bus == i) subtract(pt, prhs, in.pv_p[g][h]);
      }
      subtract(qt, qrhs, in.q_inj[i][h]);
      d.p_row[i][h] = prog.add_equality(pt, prhs, label(in.prefix, "pbal", id, t));
      d.q_row[i][h] = prog.add_equality(qt, qrhs, label(in.prefix, "qbal", id, t));
    }

    for (int k = 0; k < nl; ++k) {
      const Branch& b = net.branch(k);
      const int to_id = net.bus_ids()[b.to];
      const int vi = d.v[b.from][h], vj = d.v[b.to][h];
      prog.add_equality({{vj, 1.0},
                         {vi, -1.0},
                         {d.p[k][h], 2.0 * b.r},
                         {d.q[k][h], 2.0 * b.x},
                         {d.l[k][h], -(b.r * b.r + b.x * b.x)}},
                        0.0, label(in.prefix, "drop", to_id, t));
      prog.add_soc({AffineExpr({{d.l[k][h], 1.0}, {vi, 1.0}}),
                    AffineExpr::var(d.p[k][h], 2.0),
                    AffineExpr::var(d.q[k][h], 2.0),
                    AffineExpr({{d.l[k][h], 1.0}, {vi, -1.0}})});
    }
  }
  return d;
}

void extract_state(const GridCase& gc, const LoadProfile& loads, const FlowInputs& in,
                   const DistFlowVars& d, const std::vector<double>& x, NetworkState& s) {
  const NetworkModel& net = gc.net;
  const ZipLinear zl = zip_linear_terms(gc.zip);
  for (size_t h = 0; h < d.hours.size(); ++h) {
    const int t = d.hours[h];
    for (int i = 0; i < net.num_buses(); ++i) {
      const double v = x[d.v[i][h]];
      s.v_sq[i][t] = v;
      s.p_load[i][t] = loads.rated_p[i][t] * (zl.a_p * v + zl.b_p);
      s.q_load[i][t] = loads.rated_q[i][t] * (zl.a_q * v + zl.b_q);
      s.p_inj[i][t] = 0.0;
      s.q_inj[i][t] = in.q_inj[i][h].eval(x);
    }
    for (size_t g = 0; g < gc.fleet.pvs.size(); ++g) {
      s.p_inj[gc.fleet.pvs[g].bus][t] += in.pv_p[g][h].eval(x);
    }
    for (int k = 0; k < net.num_branches(); ++k) {
      s.i_sq[k][t] = x[d.l[k][h]];
      s.p_flow[k][t] = x[d.p[k][h]];
      s.q_flow[k][t] = x[d.q[k][h]];
    }
    s.p_sub[t] = x[d.p_sub[h]];
    s.q_sub[t] = x[d.q_sub[h]];
  }
}

}  // namespace dfcvr::detail
