#include "koopgas/simulate.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "koopgas/errors.hpp"

namespace koopgas {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Friction in dM/dt units for one element, with derivatives w.r.t.
// (p_in, p_out, m_in, m_out). Nonlinear: lambda c^2 s|s| / (4 d A q) with
// s = m_in + m_out, q = p_in + p_out; local: lambda vbar s / (4 d).
struct ElementFriction {
  double value = 0.0;
  double d_p = 0.0;  // same for both endpoint pressures
  double d_m = 0.0;  // same for both endpoint mfrs
};

bool element_friction(const PipelineParams& params, const FrictionMode& mode, double p_sum,
                      double m_sum, ElementFriction& out) {
  if (mode.local) {
    const double coeff = params.friction_factor * mode.vbar / (4.0 * params.diameter);
    out = {coeff * m_sum, 0.0, coeff};
    return true;
  }
  if (!(p_sum > 0.0)) return false;
  const double c2 = params.sound_speed * params.sound_speed;
  const double coeff = params.friction_factor * c2 / (4.0 * params.diameter * params.area());
  out.value = coeff * m_sum * std::abs(m_sum) / p_sum;
  out.d_m = coeff * 2.0 * std::abs(m_sum) / p_sum;
  out.d_p = -coeff * m_sum * std::abs(m_sum) / (p_sum * p_sum);
  return true;
}

// ---------------------------------------------------------------------------
// Single pipeline backward-Euler step
//
// Unknowns z = [M_0, p_1, M_1, ..., p_K, M_K]; the inlet pressure and the
// outlet MFR are boundary data. Rows: mass and momentum per element, then
// the outlet MFR condition. All rows are scaled to be dimensionless.
// ---------------------------------------------------------------------------

struct PipeStepSystem {
  const PipelineParams& params;
  const GridState& prev;
  double dt;
  double p_in_bc;
  double m_out_bc;
  const FrictionMode& mode;
  const NewtonOptions& opts;

  Eigen::Index segments() const { return prev.segments(); }
  Eigen::Index size() const { return 2 * segments() + 1; }

  static Eigen::Index idx_m(Eigen::Index k) { return k == 0 ? 0 : 2 * k; }
  static Eigen::Index idx_p(Eigen::Index k) { return 2 * k - 1; }

  Eigen::VectorXd pack(const GridState& g) const {
    Eigen::VectorXd z(size());
    z[0] = g.mfrs[0];
    for (Eigen::Index k = 1; k <= segments(); ++k) {
      z[idx_p(k)] = g.pressures[k];
      z[idx_m(k)] = g.mfrs[k];
    }
    return z;
  }

  GridState unpack(const Eigen::VectorXd& z) const {
    GridState g;
    g.segment_length = prev.segment_length;
    g.pressures.resize(segments() + 1);
    g.mfrs.resize(segments() + 1);
    g.pressures[0] = p_in_bc;
    g.mfrs[0] = z[0];
    for (Eigen::Index k = 1; k <= segments(); ++k) {
      g.pressures[k] = z[idx_p(k)];
      g.mfrs[k] = z[idx_m(k)];
    }
    return g;
  }

  // false when the candidate state is nonphysical for the friction closure
  bool residual(const Eigen::VectorXd& z, Eigen::VectorXd& r) const {
    const Eigen::Index n = segments();
    const double a = params.area();
    const double c2 = params.sound_speed * params.sound_speed;
    const double dx = prev.segment_length;
    const double pb = opts.base_pressure, mb = opts.base_mfr;
    r.resize(size());
    for (Eigen::Index k = 1; k <= n; ++k) {
      const double pk = z[idx_p(k)];
      const double pk1 = (k == 1) ? p_in_bc : z[idx_p(k - 1)];
      const double mk = z[idx_m(k)];
      const double mk1 = z[idx_m(k - 1)];
      ElementFriction f;
      if (!element_friction(params, mode, pk + pk1, mk + mk1, f)) return false;
      r[2 * (k - 1)] = (pk - prev.pressures[k] + dt * (c2 / a) * (mk - mk1) / dx) / pb;
      r[2 * (k - 1) + 1] =
          (mk - prev.mfrs[k] + dt * (a * (pk - pk1) / dx + f.value)) / mb;
    }
    r[2 * n] = (z[idx_m(n)] - m_out_bc) / mb;
    return true;
  }

  void jacobian(const Eigen::VectorXd& z, Eigen::MatrixXd& jac) const {
    const Eigen::Index n = segments();
    const double a = params.area();
    const double c2 = params.sound_speed * params.sound_speed;
    const double dx = prev.segment_length;
    const double pb = opts.base_pressure, mb = opts.base_mfr;
    jac.setZero(size(), size());
    for (Eigen::Index k = 1; k <= n; ++k) {
      const double pk = z[idx_p(k)];
      const double pk1 = (k == 1) ? p_in_bc : z[idx_p(k - 1)];
      const double mk = z[idx_m(k)];
      const double mk1 = z[idx_m(k - 1)];
      ElementFriction f;
      element_friction(params, mode, pk + pk1, mk + mk1, f);

      const Eigen::Index row_mass = 2 * (k - 1);
      jac(row_mass, idx_p(k)) = 1.0 / pb;
      jac(row_mass, idx_m(k)) = dt * (c2 / a) / dx / pb;
      jac(row_mass, idx_m(k - 1)) = -dt * (c2 / a) / dx / pb;

      const Eigen::Index row_mom = row_mass + 1;
      jac(row_mom, idx_m(k)) = (1.0 + dt * f.d_m) / mb;
      jac(row_mom, idx_m(k - 1)) = dt * f.d_m / mb;
      jac(row_mom, idx_p(k)) = dt * (a / dx + f.d_p) / mb;
      if (k > 1) jac(row_mom, idx_p(k - 1)) = dt * (-a / dx + f.d_p) / mb;
    }
    jac(2 * n, idx_m(n)) = 1.0 / mb;
  }
};

GridState pipeline_step(const PipelineParams& params, const GridState& prev, double dt,
                        double p_in_bc, double m_out_bc, const FrictionMode& mode,
                        const NewtonOptions& opts) {
  PipeStepSystem sys{params, prev, dt, p_in_bc, m_out_bc, mode, opts};
  Eigen::VectorXd z = sys.pack(prev);  // warm start from the previous step
  Eigen::VectorXd r, r_new;
  if (!sys.residual(z, r))
    throw NonPhysicalState("pipeline '" + params.id + "': nonpositive pressure at step start");
  double norm = r.lpNorm<Eigen::Infinity>();

  Eigen::MatrixXd jac;
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (norm <= opts.tolerance) return sys.unpack(z);
    sys.jacobian(z, jac);
    Eigen::VectorXd step = jac.partialPivLu().solve(-r);

    double alpha = 1.0;
    double best_norm = kInf;
    Eigen::VectorXd best_z;
    bool any_physical = false;
    for (int d = 0; d <= opts.max_damping; ++d) {
      Eigen::VectorXd cand = z + alpha * step;
      bool physical = sys.residual(cand, r_new);
      if (physical) {
        for (Eigen::Index k = 1; k <= sys.segments(); ++k)
          if (!(cand[PipeStepSystem::idx_p(k)] > 0.0)) { physical = false; break; }
      }
      if (physical) {
        any_physical = true;
        const double cand_norm = r_new.lpNorm<Eigen::Infinity>();
        if (cand_norm < best_norm) { best_norm = cand_norm; best_z = cand; }
        if (cand_norm < norm) break;
      }
      alpha *= 0.5;
    }
    if (!any_physical)
      throw NonPhysicalState("pipeline '" + params.id +
                             "': pressure nonpositive during Newton iteration after damping");
    z = best_z;
    sys.residual(z, r);
    norm = r.lpNorm<Eigen::Infinity>();
  }
  if (norm <= opts.tolerance) return sys.unpack(z);
  std::ostringstream msg;
  msg << "pipeline '" << params.id << "': Newton did not reach " << opts.tolerance << " in "
      << opts.max_iterations << " iterations (residual " << norm << ")";
  throw NewtonDivergence(msg.str(), norm);
}

// ---------------------------------------------------------------------------
// Network backward-Euler step (also used with dt = inf markers for steady)
//
// Unknowns: pressures of non-source nodes first, then per pipeline
// [M_0, p_1, M_1, ..., p_{K-1}, M_{K-1}, M_K] (pipe end pressures live on
// the nodes). Rows: per-pipe mass/momentum, then one balance row per
// non-source node.
// ---------------------------------------------------------------------------

struct NetworkSystem {
  const GasNetworkSpec& net;
  const NetworkState* prev;  // nullptr -> steady equations
  double dt;
  const std::map<std::string, double>& source_pressure;  // Pa, per source id
  const std::map<std::string, double>& withdrawal;       // kg/s, per load id
  const FrictionMode& mode;
  const NewtonOptions& opts;
  const std::vector<GridState>& grids;  // geometry reference (K, dx per pipe)

  std::vector<int> free_nodes;       // node index -> order among unknowns, -1 for sources
  std::vector<Eigen::Index> pipe_offset;
  Eigen::Index n_unknowns = 0;
  Eigen::Index n_free = 0;

  NetworkSystem(const GasNetworkSpec& net_, const NetworkState* prev_, double dt_,
                const std::map<std::string, double>& source_pressure_,
                const std::map<std::string, double>& withdrawal_, const FrictionMode& mode_,
                const NewtonOptions& opts_, const std::vector<GridState>& grids_)
      : net(net_), prev(prev_), dt(dt_), source_pressure(source_pressure_),
        withdrawal(withdrawal_), mode(mode_), opts(opts_), grids(grids_) {
    init_layout();
  }

  void init_layout() {
    free_nodes.assign(net.nodes.size(), -1);
    int f = 0;
    for (size_t n = 0; n < net.nodes.size(); ++n)
      if (net.nodes[n].role != NodeRole::Source) free_nodes[n] = f++;
    n_free = f;
    pipe_offset.resize(net.pipelines.size());
    Eigen::Index off = n_free;
    for (size_t e = 0; e < net.pipelines.size(); ++e) {
      pipe_offset[e] = off;
      off += 2 * grids[e].segments();
    }
    n_unknowns = off;
  }

  // per-pipe block [M_0, p_1, M_1, ..., p_{K-1}, M_{K-1}, M_K], 2K entries
  Eigen::Index idx_m(size_t e, Eigen::Index k) const {
    const Eigen::Index K = grids[e].segments();
    return pipe_offset[e] + (k == K ? 2 * K - 1 : 2 * k);
  }
  Eigen::Index idx_p(size_t e, Eigen::Index k) const { return pipe_offset[e] + 2 * k - 1; }

  double source_p(int node) const {
    auto it = source_pressure.find(net.nodes[node].id);
    if (it == source_pressure.end())
      throw SpecError("missing source pressure for node '" + net.nodes[node].id + "'");
    return it->second;
  }

  double node_withdrawal(int node) const {
    if (net.nodes[node].role != NodeRole::Load) return 0.0;
    auto it = withdrawal.find(net.nodes[node].id);
    return it == withdrawal.end() ? 0.0 : it->second;
  }

  double node_pressure_of(const Eigen::VectorXd& z, int node) const {
    return free_nodes[node] >= 0 ? z[free_nodes[node]] : source_p(node);
  }

  Eigen::VectorXd pack(const NetworkState& s) const {
    Eigen::VectorXd z(n_unknowns);
    for (size_t n = 0; n < net.nodes.size(); ++n)
      if (free_nodes[n] >= 0) z[free_nodes[n]] = s.node_pressure[n];
    for (size_t e = 0; e < net.pipelines.size(); ++e) {
      const auto& g = s.pipes[e];
      const Eigen::Index K = g.segments();
      z[idx_m(e, 0)] = g.mfrs[0];
      for (Eigen::Index k = 1; k < K; ++k) {
        z[idx_p(e, k)] = g.pressures[k];
        z[idx_m(e, k)] = g.mfrs[k];
      }
      z[idx_m(e, K)] = g.mfrs[K];
    }
    return z;
  }

  NetworkState unpack(const Eigen::VectorXd& z) const {
    NetworkState s;
    s.node_pressure.resize(net.nodes.size());
    for (size_t n = 0; n < net.nodes.size(); ++n) s.node_pressure[n] = node_pressure_of(z, static_cast<int>(n));
    s.pipes.resize(net.pipelines.size());
    for (size_t e = 0; e < net.pipelines.size(); ++e) {
      const Eigen::Index K = grids[e].segments();
      GridState g;
      g.segment_length = grids[e].segment_length;
      g.pressures.resize(K + 1);
      g.mfrs.resize(K + 1);
      g.pressures[0] = s.node_pressure[net.node_index(net.pipelines[e].from)];
      g.pressures[K] = s.node_pressure[net.node_index(net.pipelines[e].to)];
      g.mfrs[0] = z[idx_m(e, 0)];
      for (Eigen::Index k = 1; k < K; ++k) {
        g.pressures[k] = z[idx_p(e, k)];
        g.mfrs[k] = z[idx_m(e, k)];
      }
      g.mfrs[K] = z[idx_m(e, K)];
      s.pipes[e] = g;
    }
    return s;
  }

  double pipe_pressure(const Eigen::VectorXd& z, size_t e, Eigen::Index k) const {
    const Eigen::Index K = grids[e].segments();
    if (k == 0) return node_pressure_of(z, net.node_index(net.pipelines[e].from));
    if (k == K) return node_pressure_of(z, net.node_index(net.pipelines[e].to));
    return z[idx_p(e, k)];
  }

  // unknown index carrying the pressure at pipe node k, or -1 when fixed
  Eigen::Index pressure_col(size_t e, Eigen::Index k) const {
    const Eigen::Index K = grids[e].segments();
    if (k == 0) {
      int n = net.node_index(net.pipelines[e].from);
      return free_nodes[n] >= 0 ? free_nodes[n] : -1;
    }
    if (k == K) {
      int n = net.node_index(net.pipelines[e].to);
      return free_nodes[n] >= 0 ? free_nodes[n] : -1;
    }
    return idx_p(e, k);
  }

  bool residual(const Eigen::VectorXd& z, Eigen::VectorXd& r) const {
    const double pb = opts.base_pressure, mb = opts.base_mfr;
    r.resize(n_unknowns);
    Eigen::Index row = 0;
    for (size_t e = 0; e < net.pipelines.size(); ++e) {
      const auto& params = net.pipelines[e].params;
      const double a = params.area();
      const double c2 = params.sound_speed * params.sound_speed;
      const double dx = grids[e].segment_length;
      const Eigen::Index K = grids[e].segments();
      for (Eigen::Index k = 1; k <= K; ++k) {
        const double pk = pipe_pressure(z, e, k);
        const double pk1 = pipe_pressure(z, e, k - 1);
        const double mk = z[idx_m(e, k)];
        const double mk1 = z[idx_m(e, k - 1)];
        if (!(pk > 0.0)) return false;
        ElementFriction f;
        if (!element_friction(params, mode, pk + pk1, mk + mk1, f)) return false;
        if (prev) {
          r[row++] = (pk - prev->pipes[e].pressures[k] + dt * (c2 / a) * (mk - mk1) / dx) / pb;
          r[row++] = (mk - prev->pipes[e].mfrs[k] + dt * (a * (pk - pk1) / dx + f.value)) / mb;
        } else {
          // steady: mass row as flow mismatch, momentum row as pressure mismatch
          r[row++] = (mk - mk1) / mb;
          r[row++] = (pk - pk1 + f.value * dx / a) / pb;
        }
      }
    }
    for (size_t n = 0; n < net.nodes.size(); ++n) {
      if (free_nodes[n] < 0) continue;
      double balance = -node_withdrawal(static_cast<int>(n));
      for (int e : net.pipelines_to(static_cast<int>(n)))
        balance += z[idx_m(e, grids[e].segments())];
      for (int e : net.pipelines_from(static_cast<int>(n))) balance -= z[idx_m(e, 0)];
      r[row++] = balance / mb;
    }
    return true;
  }

  void jacobian(const Eigen::VectorXd& z, Eigen::SparseMatrix<double>& jac) const {
    const double pb = opts.base_pressure, mb = opts.base_mfr;
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::Index row = 0;
    for (size_t e = 0; e < net.pipelines.size(); ++e) {
      const auto& params = net.pipelines[e].params;
      const double a = params.area();
      const double c2 = params.sound_speed * params.sound_speed;
      const double dx = grids[e].segment_length;
      const Eigen::Index K = grids[e].segments();
      for (Eigen::Index k = 1; k <= K; ++k) {
        const double pk = pipe_pressure(z, e, k);
        const double pk1 = pipe_pressure(z, e, k - 1);
        const double mk = z[idx_m(e, k)];
        const double mk1 = z[idx_m(e, k - 1)];
        ElementFriction f;
        element_friction(params, mode, pk + pk1, mk + mk1, f);
        const Eigen::Index col_pk = pressure_col(e, k);
        const Eigen::Index col_pk1 = pressure_col(e, k - 1);

        // mass row
        if (prev) {
          if (col_pk >= 0) trips.emplace_back(row, col_pk, 1.0 / pb);
          trips.emplace_back(row, idx_m(e, k), dt * (c2 / a) / dx / pb);
          trips.emplace_back(row, idx_m(e, k - 1), -dt * (c2 / a) / dx / pb);
        } else {
          trips.emplace_back(row, idx_m(e, k), 1.0 / mb);
          trips.emplace_back(row, idx_m(e, k - 1), -1.0 / mb);
        }
        ++row;

        // momentum row
        if (prev) {
          trips.emplace_back(row, idx_m(e, k), (1.0 + dt * f.d_m) / mb);
          trips.emplace_back(row, idx_m(e, k - 1), dt * f.d_m / mb);
          if (col_pk >= 0) trips.emplace_back(row, col_pk, dt * (a / dx + f.d_p) / mb);
          if (col_pk1 >= 0) trips.emplace_back(row, col_pk1, dt * (-a / dx + f.d_p) / mb);
        } else {
          const double scale = dx / a / pb;
          trips.emplace_back(row, idx_m(e, k), f.d_m * scale);
          trips.emplace_back(row, idx_m(e, k - 1), f.d_m * scale);
          if (col_pk >= 0) trips.emplace_back(row, col_pk, (1.0 + f.d_p * dx / a) / pb);
          if (col_pk1 >= 0) trips.emplace_back(row, col_pk1, (-1.0 + f.d_p * dx / a) / pb);
        }
        ++row;
      }
    }
    for (size_t n = 0; n < net.nodes.size(); ++n) {
      if (free_nodes[n] < 0) continue;
      for (int e : net.pipelines_to(static_cast<int>(n)))
        trips.emplace_back(row, idx_m(e, grids[e].segments()), 1.0 / mb);
      for (int e : net.pipelines_from(static_cast<int>(n)))
        trips.emplace_back(row, idx_m(e, 0), -1.0 / mb);
      ++row;
    }
    jac.resize(n_unknowns, n_unknowns);
    jac.setFromTriplets(trips.begin(), trips.end());
  }
};

Eigen::VectorXd network_newton(NetworkSystem& sys, Eigen::VectorXd z, const NewtonOptions& opts,
                               const std::string& what) {
  Eigen::VectorXd r, r_new;
  if (!sys.residual(z, r))
    throw NonPhysicalState(what + ": nonpositive pressure at iteration start");
  double norm = r.lpNorm<Eigen::Infinity>();

  Eigen::SparseMatrix<double> jac;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (norm <= opts.tolerance) return z;
    sys.jacobian(z, jac);
    lu.compute(jac);
    if (lu.info() != Eigen::Success)
      throw NewtonDivergence(what + ": singular Jacobian", norm);
    Eigen::VectorXd step = lu.solve(-r);

    double alpha = 1.0;
    double best_norm = kInf;
    Eigen::VectorXd best_z;
    bool any_physical = false;
    for (int d = 0; d <= opts.max_damping; ++d) {
      Eigen::VectorXd cand = z + alpha * step;
      if (sys.residual(cand, r_new)) {
        any_physical = true;
        const double cand_norm = r_new.lpNorm<Eigen::Infinity>();
        if (cand_norm < best_norm) { best_norm = cand_norm; best_z = cand; }
        if (cand_norm < norm) break;
      }
      alpha *= 0.5;
    }
    if (!any_physical)
      throw NonPhysicalState(what + ": pressure nonpositive during Newton iteration after damping");
    z = best_z;
    sys.residual(z, r);
    norm = r.lpNorm<Eigen::Infinity>();
  }
  if (norm <= opts.tolerance) return z;
  std::ostringstream msg;
  msg << what << ": Newton did not reach " << opts.tolerance << " in " << opts.max_iterations
      << " iterations (residual " << norm << ")";
  throw NewtonDivergence(msg.str(), norm);
}

}  // namespace

// ---------------------------------------------------------------------------

void BoundaryProfile::validate() const {
  if (inlet_pressure.size() != outlet_mfr.size())
    throw LengthMismatch("boundary arrays differ in length");
  if (inlet_pressure.size() < 1) throw LengthMismatch("boundary needs at least one step");
  if (!(dt > 0.0)) throw SpecError("boundary dt must be positive");
  if ((inlet_pressure.array() <= 0.0).any())
    throw SpecError("boundary inlet pressures must be positive");
}

Eigen::Index NetworkBoundary::steps() const {
  if (!source_pressure.empty()) return source_pressure.begin()->second.size();
  if (!load_withdrawal.empty()) return load_withdrawal.begin()->second.size();
  return 0;
}

void NetworkBoundary::validate(const GasNetworkSpec& net) const {
  if (!(dt > 0.0)) throw SpecError("network boundary dt must be positive");
  const Eigen::Index n = steps();
  if (n < 1) throw SpecError("network boundary needs at least one step");
  for (int s : net.source_indices()) {
    auto it = source_pressure.find(net.nodes[s].id);
    if (it == source_pressure.end())
      throw SpecError("boundary missing pressure series for source '" + net.nodes[s].id + "'");
    if (it->second.size() != n) throw LengthMismatch("boundary series lengths differ");
    if ((it->second.array() <= 0.0).any())
      throw SpecError("source pressures must be positive");
  }
  for (size_t i = 0; i < net.nodes.size(); ++i) {
    if (net.nodes[i].role != NodeRole::Load) continue;
    auto it = load_withdrawal.find(net.nodes[i].id);
    if (it == load_withdrawal.end())
      throw SpecError("boundary missing withdrawal series for load '" + net.nodes[i].id + "'");
    if (it->second.size() != n) throw LengthMismatch("boundary series lengths differ");
  }
}

Eigen::VectorXd PipelineTrajectory::inlet_mfr_series() const {
  Eigen::VectorXd out(states.size());
  for (size_t t = 0; t < states.size(); ++t) out[t] = states[t].mfrs[0];
  return out;
}

Eigen::VectorXd PipelineTrajectory::outlet_pressure_series() const {
  Eigen::VectorXd out(states.size());
  for (size_t t = 0; t < states.size(); ++t)
    out[t] = states[t].pressures[states[t].segments()];
  return out;
}

PipelineTrajectory simulate_pipeline(const PipelineParams& params, double dt,
                                     const BoundaryProfile& boundary, const GridState& init,
                                     const FrictionMode& mode, const NewtonOptions& options) {
  params.validate();
  boundary.validate();
  init.validate();
  if (std::abs(boundary.dt - dt) > 1e-9)
    throw SpecError("boundary dt disagrees with simulation dt");

  PipelineTrajectory traj;
  traj.dt = dt;
  traj.states.reserve(boundary.steps() + 1);
  traj.states.push_back(init);
  GridState current = init;
  for (Eigen::Index t = 0; t < boundary.steps(); ++t) {
    current = pipeline_step(params, current, dt, boundary.inlet_pressure[t],
                            boundary.outlet_mfr[t], mode, options);
    traj.states.push_back(current);
  }
  return traj;
}

NetworkTrajectory simulate_network(const GasNetworkSpec& net, double dt,
                                   const NetworkBoundary& boundary, const NetworkState& init,
                                   const FrictionMode& mode, const NewtonOptions& options) {
  net.validate();
  boundary.validate(net);
  if (std::abs(boundary.dt - dt) > 1e-9)
    throw SpecError("boundary dt disagrees with simulation dt");
  if (init.pipes.size() != net.pipelines.size() ||
      init.node_pressure.size() != static_cast<Eigen::Index>(net.nodes.size()))
    throw DimensionMismatch("initial network state does not match the spec");

  // initial continuity check: pipe end pressures vs node pressures, node balance
  for (size_t e = 0; e < net.pipelines.size(); ++e) {
    const auto& g = init.pipes[e];
    const double pf = init.node_pressure[net.node_index(net.pipelines[e].from)];
    const double pt = init.node_pressure[net.node_index(net.pipelines[e].to)];
    if (std::abs(g.pressures[0] - pf) > 1e-6 * options.base_pressure ||
        std::abs(g.pressures[g.segments()] - pt) > 1e-6 * options.base_pressure)
      throw SpecError("initial state violates pressure continuity at pipeline '" +
                      net.pipelines[e].params.id + "'");
  }
  for (size_t n = 0; n < net.nodes.size(); ++n) {
    if (net.nodes[n].role == NodeRole::Source) continue;
    double balance = 0.0;
    if (net.nodes[n].role == NodeRole::Load) {
      auto it = boundary.load_withdrawal.find(net.nodes[n].id);
      balance -= it->second[0];
    }
    for (int e : net.pipelines_to(static_cast<int>(n)))
      balance += init.pipes[e].mfrs[init.pipes[e].segments()];
    for (int e : net.pipelines_from(static_cast<int>(n))) balance -= init.pipes[e].mfrs[0];
    if (std::abs(balance) > 1e-6 * options.base_mfr)
      throw SpecError("initial state violates mass balance at node '" + net.nodes[n].id + "'");
  }

  NetworkTrajectory traj;
  traj.dt = dt;
  traj.states.reserve(boundary.steps() + 1);
  traj.states.push_back(init);

  NetworkState current = init;
  for (Eigen::Index t = 0; t < boundary.steps(); ++t) {
    std::map<std::string, double> sp, lw;
    for (const auto& [id, series] : boundary.source_pressure) sp[id] = series[t];
    for (const auto& [id, series] : boundary.load_withdrawal) lw[id] = series[t];

    NetworkSystem sys{net, &current, dt, sp, lw, mode, options, current.pipes};
    Eigen::VectorXd z = network_newton(sys, sys.pack(current), options,
                                       "network '" + net.name + "' step " + std::to_string(t));
    current = sys.unpack(z);
    traj.states.push_back(current);
  }
  return traj;
}

NetworkState steady_network_state(const GasNetworkSpec& net,
                                  const std::map<std::string, double>& source_pressure,
                                  const std::map<std::string, double>& load_withdrawal,
                                  const std::map<std::string, int>& segments,
                                  const NewtonOptions& options) {
  net.validate();

  // geometry + initial guess: flat pressures at the mean source value,
  // flows from a least-squares fit of the node balances
  double p0 = 0.0;
  for (int s : net.source_indices()) {
    auto it = source_pressure.find(net.nodes[s].id);
    if (it == source_pressure.end())
      throw SpecError("missing source pressure for node '" + net.nodes[s].id + "'");
    p0 += it->second;
  }
  p0 /= static_cast<double>(net.source_indices().size());

  const size_t n_pipes = net.pipelines.size();
  std::vector<int> free_rows(net.nodes.size(), -1);
  int nf = 0;
  for (size_t n = 0; n < net.nodes.size(); ++n)
    if (net.nodes[n].role != NodeRole::Source) free_rows[n] = nf++;
  Eigen::MatrixXd incidence = Eigen::MatrixXd::Zero(nf, n_pipes);
  Eigen::VectorXd demand = Eigen::VectorXd::Zero(nf);
  for (size_t e = 0; e < n_pipes; ++e) {
    int a = net.node_index(net.pipelines[e].from);
    int b = net.node_index(net.pipelines[e].to);
    if (free_rows[a] >= 0) incidence(free_rows[a], e) = -1.0;
    if (free_rows[b] >= 0) incidence(free_rows[b], e) = 1.0;
  }
  for (size_t n = 0; n < net.nodes.size(); ++n) {
    if (free_rows[n] < 0 || net.nodes[n].role != NodeRole::Load) continue;
    auto it = load_withdrawal.find(net.nodes[n].id);
    demand[free_rows[n]] = it == load_withdrawal.end() ? 0.0 : it->second;
  }
  Eigen::VectorXd flows = incidence.completeOrthogonalDecomposition().solve(demand);

  NetworkState guess;
  guess.node_pressure = Eigen::VectorXd::Constant(net.nodes.size(), p0);
  for (int s : net.source_indices())
    guess.node_pressure[s] = source_pressure.at(net.nodes[s].id);
  guess.pipes.resize(n_pipes);
  for (size_t e = 0; e < n_pipes; ++e) {
    const auto& params = net.pipelines[e].params;
    auto it = segments.find(params.id);
    const int K = it != segments.end() ? it->second : default_segments(params);
    GridState g;
    g.segment_length = params.length / K;
    g.pressures = Eigen::VectorXd::Constant(K + 1, p0);
    g.pressures[0] = guess.node_pressure[net.node_index(net.pipelines[e].from)];
    g.pressures[K] = guess.node_pressure[net.node_index(net.pipelines[e].to)];
    g.mfrs = Eigen::VectorXd::Constant(K + 1, flows[e]);
    guess.pipes[e] = g;
  }

  FrictionMode mode = FrictionMode::nonlinear();
  NetworkSystem sys{net,  nullptr, 0.0, source_pressure, load_withdrawal,
                    mode, options, guess.pipes};
  Eigen::VectorXd z = network_newton(sys, sys.pack(guess), options,
                                     "network '" + net.name + "' steady state");
  return sys.unpack(z);
}

double network_linepack(const GasNetworkSpec& net, const NetworkState& state) {
  double total = 0.0;
  for (size_t e = 0; e < net.pipelines.size(); ++e)
    total += linepack_mass(net.pipelines[e].params, state.pipes[e]);
  return total;
}

// ---------------------------------------------------------------------------

void ExcitationConfig::validate(const PipelineParams& params) const {
  if (pressure_band < 0.0 || pressure_walk_step < 0.0 || mfr_walk_step < 0.0)
    throw ExcitationOutOfBounds("excitation band and walk steps must be nonnegative");
  if (pressure_sine_frac < 0.0 || pressure_sine_frac > 1.0 || mfr_sine_frac < 0.0 ||
      mfr_sine_frac > 1.0)
    throw ExcitationOutOfBounds("sine fractions must lie in [0, 1]");
  if (walk_revert < 0.0 || walk_revert > 1.0)
    throw ExcitationOutOfBounds("walk reversion must lie in [0, 1]");
  for (double t : pressure_periods_h)
    if (!(t > 0.0)) throw ExcitationOutOfBounds("pressure periods must be positive");
  for (double t : mfr_periods_h)
    if (!(t > 0.0)) throw ExcitationOutOfBounds("MFR periods must be positive");
  if (pressure_nominal * (1.0 + pressure_band) > params.p_max ||
      pressure_nominal * (1.0 - pressure_band) < params.p_min)
    throw ExcitationOutOfBounds("pressure excitation band exceeds pipeline limits");
  const double lo = std::max(mfr_low, params.mfr_min);
  const double hi = std::min(mfr_high, params.mfr_max);
  if (!(lo <= hi))
    throw ExcitationOutOfBounds("MFR excitation range does not overlap pipeline limits");
}

void SnapshotSet::validate() const {
  if (u.rows() != x.rows()) throw LengthMismatch("snapshot u/x arrays differ in length");
  if (u.cols() != 2 || x.cols() != 2) throw DimensionMismatch("snapshots must have 2 columns");
  if (!(dt > 0.0) || !(base_pressure > 0.0) || !(base_mfr > 0.0))
    throw SpecError("snapshot metadata invalid");
}

SnapshotSet generate_snapshots(const PipelineParams& params, const ExcitationConfig& excitation,
                               int count, double dt, std::uint64_t seed,
                               const NewtonOptions& options) {
  params.validate();
  excitation.validate(params);
  if (count < 15) throw SpecError("snapshot count too small for identification");
  if (!(dt > 0.0)) throw SpecError("snapshot dt must be positive");

  const double lo = std::max(excitation.mfr_low, params.mfr_min);
  const double hi = std::min(excitation.mfr_high, params.mfr_max);
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  const double p_lo = excitation.pressure_nominal * (1.0 - excitation.pressure_band);
  const double p_hi = excitation.pressure_nominal * (1.0 + excitation.pressure_band);

  const int settle_steps =
      static_cast<int>(std::lround(excitation.settle_hours * 3600.0 / dt));
  const int total = settle_steps + count;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  auto reflect = [](double v, double a, double b) {
    if (a >= b) return a;
    while (v < a || v > b) {
      if (v < a) v = 2.0 * a - v;
      if (v > b) v = 2.0 * b - v;
    }
    return v;
  };

  constexpr double kToneWeights[3] = {1.0, 0.7, 0.5};
  constexpr double kToneSum = 2.2;
  double phase_m[3], phase_p[3];
  for (double& ph : phase_m) ph = phase(rng);
  for (double& ph : phase_p) ph = phase(rng);
  const double amp_m = excitation.mfr_sine_frac * half / kToneSum;
  const double amp_p =
      excitation.pressure_sine_frac * excitation.pressure_band * excitation.pressure_nominal /
      kToneSum;

  BoundaryProfile boundary;
  boundary.dt = dt;
  boundary.inlet_pressure.resize(total);
  boundary.outlet_mfr.resize(total);

  double walk_m = 0.0, walk_p = 0.0;
  for (int t = 0; t < total; ++t) {
    walk_m = walk_m * (1.0 - excitation.walk_revert) + unit(rng) * excitation.mfr_walk_step;
    walk_p = walk_p * (1.0 - excitation.walk_revert) +
             unit(rng) * excitation.pressure_walk_step * excitation.base_pressure;
    double sine_m = 0.0, sine_p = 0.0;
    const double hours = t * dt / 3600.0;
    for (int j = 0; j < 3; ++j) {
      sine_m += kToneWeights[j] *
                std::sin(2.0 * std::numbers::pi * hours / excitation.mfr_periods_h[j] + phase_m[j]);
      sine_p += kToneWeights[j] * std::sin(2.0 * std::numbers::pi * hours /
                                               excitation.pressure_periods_h[j] +
                                           phase_p[j]);
    }
    boundary.outlet_mfr[t] = reflect(mid + amp_m * sine_m + walk_m, lo, hi);
    boundary.inlet_pressure[t] =
        reflect(excitation.pressure_nominal + amp_p * sine_p + walk_p, p_lo, p_hi);
  }

  const int K = default_segments(params);
  GridState init = steady_state_profile(params, boundary.inlet_pressure[0],
                                        boundary.outlet_mfr[0], K);
  PipelineTrajectory traj =
      simulate_pipeline(params, dt, boundary, init, FrictionMode::nonlinear(), options);

  SnapshotSet set;
  set.pipeline_id = params.id;
  set.dt = dt;
  set.base_pressure = excitation.base_pressure;
  set.base_mfr = excitation.base_mfr;
  set.seed = seed;
  set.u.resize(count, 2);
  set.x.resize(count, 2);
  for (int j = 0; j < count; ++j) {
    const int s = settle_steps + 1 + j;  // state after boundary row s-1
    const GridState& g = traj.states[s];
    set.u(j, 0) = boundary.inlet_pressure[s - 1] / set.base_pressure - 1.0;
    set.u(j, 1) = g.mfrs[0] / set.base_mfr - 1.0;
    set.x(j, 0) = g.pressures[g.segments()] / set.base_pressure - 1.0;
    set.x(j, 1) = g.mfrs[g.segments()] / set.base_mfr - 1.0;
  }
  return set;
}

void save_snapshots(const SnapshotSet& set, const std::string& csv_path) {
  set.validate();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
  csv << std::setprecision(17);
  csv << "t,p_in,m_in,p_out,m_out\n";
  for (Eigen::Index j = 0; j < set.count(); ++j)
    csv << j * set.dt << "," << set.u(j, 0) << "," << set.u(j, 1) << "," << set.x(j, 0) << ","
        << set.x(j, 1) << "\n";
  if (!csv) throw IoError("failed writing '" + csv_path + "'");

  nlohmann::json meta;
  meta["schema_version"] = 1;
  meta["pipeline_id"] = set.pipeline_id;
  meta["dt_seconds"] = set.dt;
  meta["base_pressure"] = set.base_pressure;
  meta["base_mfr"] = set.base_mfr;
  meta["seed"] = set.seed;
  meta["count"] = set.count();
  std::ofstream mj(csv_path + ".meta.json");
  if (!mj) throw IoError("cannot open '" + csv_path + ".meta.json' for writing");
  mj << meta.dump(2) << "\n";
}

SnapshotSet load_snapshots(const std::string& csv_path) {
  std::ifstream mj(csv_path + ".meta.json");
  if (!mj) throw IoError("missing snapshot metadata '" + csv_path + ".meta.json'");
  nlohmann::json meta = nlohmann::json::parse(mj, nullptr, true);
  if (!meta.contains("schema_version"))
    throw SchemaMismatch("snapshot metadata lacks schema_version");
  if (meta["schema_version"].get<int>() != 1)
    throw VersionError("snapshot metadata version " +
                       std::to_string(meta["schema_version"].get<int>()) + ", expected 1");

  SnapshotSet set;
  set.pipeline_id = meta.at("pipeline_id").get<std::string>();
  set.dt = meta.at("dt_seconds").get<double>();
  set.base_pressure = meta.at("base_pressure").get<double>();
  set.base_mfr = meta.at("base_mfr").get<double>();
  set.seed = meta.at("seed").get<std::uint64_t>();

  std::ifstream csv(csv_path);
  if (!csv) throw IoError("cannot open '" + csv_path + "'");
  std::string line;
  if (!std::getline(csv, line) || line != "t,p_in,m_in,p_out,m_out")
    throw SchemaMismatch("unexpected snapshot CSV header in '" + csv_path + "'");
  std::vector<std::array<double, 4>> rows;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::array<double, 5> vals{};
    std::stringstream ss(line);
    std::string cell;
    for (int c = 0; c < 5; ++c) {
      if (!std::getline(ss, cell, ',')) throw IoError("short row in '" + csv_path + "'");
      vals[c] = std::stod(cell);
    }
    rows.push_back({vals[1], vals[2], vals[3], vals[4]});
  }
  set.u.resize(rows.size(), 2);
  set.x.resize(rows.size(), 2);
  for (size_t j = 0; j < rows.size(); ++j) {
    set.u(j, 0) = rows[j][0];
    set.u(j, 1) = rows[j][1];
    set.x(j, 0) = rows[j][2];
    set.x(j, 1) = rows[j][3];
  }
  set.validate();
  return set;
}

void save_pipeline_trajectory_csv(const PipelineTrajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << std::setprecision(17);
  const Eigen::Index K = traj.states.front().segments();
  out << "t";
  for (Eigen::Index k = 0; k <= K; ++k) out << ",p" << k;
  for (Eigen::Index k = 0; k <= K; ++k) out << ",m" << k;
  out << "\n";
  for (size_t t = 0; t < traj.states.size(); ++t) {
    out << t * traj.dt;
    for (Eigen::Index k = 0; k <= K; ++k) out << "," << traj.states[t].pressures[k];
    for (Eigen::Index k = 0; k <= K; ++k) out << "," << traj.states[t].mfrs[k];
    out << "\n";
  }
}

double step_residual_norm(const PipelineParams& params, const GridState& prev,
                          const GridState& next, double dt, double p_in_bc, double m_out_bc,
                          const FrictionMode& mode, const NewtonOptions& options) {
  PipeStepSystem sys{params, prev, dt, p_in_bc, m_out_bc, mode, options};
  Eigen::VectorXd r;
  if (!sys.residual(sys.pack(next), r)) return kInf;
  return r.lpNorm<Eigen::Infinity>();
}

}  // namespace koopgas
