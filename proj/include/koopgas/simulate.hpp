#ifndef KOOPGAS_SIMULATE_HPP
#define KOOPGAS_SIMULATE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "koopgas/network.hpp"
#include "koopgas/pipeline.hpp"

namespace koopgas {

/// Uniformly sampled boundary controls for a single pipeline.
/// Row t holds the values active on the interval ((t)dt, (t+1)dt].
struct BoundaryProfile {
  double dt = 0.0;                 // s
  Eigen::VectorXd inlet_pressure;  // Pa
  Eigen::VectorXd outlet_mfr;      // kg/s

  Eigen::Index steps() const { return inlet_pressure.size(); }
  void validate() const;
};

/// Boundary controls for a network run: prescribed pressure per source
/// node and prescribed withdrawal per load node.
struct NetworkBoundary {
  double dt = 0.0;
  std::map<std::string, Eigen::VectorXd> source_pressure;   // Pa
  std::map<std::string, Eigen::VectorXd> load_withdrawal;   // kg/s

  Eigen::Index steps() const;
  void validate(const GasNetworkSpec& net) const;
};

struct NewtonOptions {
  double tolerance = 1e-8;  // residual, normalized by base values
  int max_iterations = 50;
  int max_damping = 10;
  double base_pressure = 5e6;  // Pa, residual scaling
  double base_mfr = 10.0;      // kg/s, residual scaling
};

struct PipelineTrajectory {
  double dt = 0.0;
  std::vector<GridState> states;  // states[0] = initial condition

  Eigen::VectorXd inlet_mfr_series() const;
  Eigen::VectorXd outlet_pressure_series() const;
};

/// Joint state of every pipeline grid plus the node pressures.
struct NetworkState {
  std::vector<GridState> pipes;    // aligned with GasNetworkSpec::pipelines
  Eigen::VectorXd node_pressure;   // aligned with GasNetworkSpec::nodes
};

struct NetworkTrajectory {
  double dt = 0.0;
  std::vector<NetworkState> states;
};

/// Backward-Euler transient simulation of one pipeline with Newton
/// iterations per step. Boundary: inlet pressure and outlet MFR.
PipelineTrajectory simulate_pipeline(const PipelineParams& params, double dt,
                                     const BoundaryProfile& boundary, const GridState& init,
                                     const FrictionMode& mode,
                                     const NewtonOptions& options = {});

/// Backward-Euler transient simulation of a whole network; one global
/// Newton solve per step enforcing pressure continuity and node balance.
NetworkTrajectory simulate_network(const GasNetworkSpec& net, double dt,
                                   const NetworkBoundary& boundary, const NetworkState& init,
                                   const FrictionMode& mode, const NewtonOptions& options = {});

/// Steady operating point of the network under constant source pressures
/// and load withdrawals (Newton on the zero-derivative equations).
NetworkState steady_network_state(const GasNetworkSpec& net,
                                  const std::map<std::string, double>& source_pressure,
                                  const std::map<std::string, double>& load_withdrawal,
                                  const std::map<std::string, int>& segments,
                                  const NewtonOptions& options = {});

/// Net source injection minus load withdrawal at each recorded step,
/// integrated against the linepack change (mass audit helper).
double network_linepack(const GasNetworkSpec& net, const NetworkState& state);

// ---------------------------------------------------------------------------
// Snapshot generation for identification
// ---------------------------------------------------------------------------

/// Randomized boundary excitation: each control is a three-tone
/// multisine (seeded random phases, fixed 1.0/0.7/0.5 amplitude ratios)
/// plus a small mean-reverting walk, reflected at the band edges.
/// Periods are in hours so the same physical signal is sampled at any
/// snapshot resolution.
struct ExcitationConfig {
  double pressure_nominal = 5.78e6;   // Pa, band center
  double pressure_band = 0.10;        // reflect at nominal*(1 +/- band)
  double pressure_sine_frac = 0.85;   // multisine share of the band
  double pressure_periods_h[3] = {8.3, 15.0, 26.8};
  double pressure_walk_step = 8e-4;   // fraction of base_pressure per step
  double mfr_low = 5.0;               // kg/s, reflecting walls
  double mfr_high = 20.0;
  double mfr_sine_frac = 0.85;
  double mfr_periods_h[3] = {10.2, 18.1, 32.2};
  double mfr_walk_step = 0.12;        // kg/s per step
  double walk_revert = 0.05;          // walk pull toward zero per step
  double settle_hours = 24.0;         // discarded before recording
  double base_pressure = 5e6;         // Pa
  double base_mfr = 10.0;             // kg/s

  void validate(const PipelineParams& params) const;
};

/// Normalized identification dataset: inputs u = (p_in, M_in) and
/// outlet states x = (p_out, M_out), stored as per-unit deviations
/// (value - base) / base.
struct SnapshotSet {
  std::string pipeline_id;
  double dt = 0.0;
  double base_pressure = 0.0;
  double base_mfr = 0.0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd u;  // count x 2
  Eigen::MatrixXd x;  // count x 2

  Eigen::Index count() const { return u.rows(); }
  void validate() const;
};

/// Runs the nonlinear simulator under a seeded excitation, discards the
/// settling window and records `count` normalized snapshots at step dt.
SnapshotSet generate_snapshots(const PipelineParams& params, const ExcitationConfig& excitation,
                               int count, double dt, std::uint64_t seed,
                               const NewtonOptions& options = {});

/// CSV persistence: header `t,p_in,m_in,p_out,m_out` plus a JSON sidecar
/// (same path with ".meta.json" appended) holding base values, dt, seed.
void save_snapshots(const SnapshotSet& set, const std::string& csv_path);
SnapshotSet load_snapshots(const std::string& csv_path);

/// Trajectory export for plotting: one row per step, node values across.
void save_pipeline_trajectory_csv(const PipelineTrajectory& traj, const std::string& path);

/// Backward-Euler residual of a recorded step pair, normalized the same
/// way as the Newton solve (diagnostic / test hook).
double step_residual_norm(const PipelineParams& params, const GridState& prev,
                          const GridState& next, double dt, double p_in_bc, double m_out_bc,
                          const FrictionMode& mode, const NewtonOptions& options = {});

}  // namespace koopgas

#endif  // KOOPGAS_SIMULATE_HPP
