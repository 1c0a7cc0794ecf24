#ifndef KOOPGAS_PIPELINE_HPP
#define KOOPGAS_PIPELINE_HPP

#include <Eigen/Dense>
#include <string>
#include <utility>

namespace koopgas {

/// Physical description of one pipeline.
///
/// Units are SI throughout: meters, pascal, kg/s. The cross-sectional
/// area is always derived from the diameter, never stored.
struct PipelineParams {
  std::string id;
  double length = 0.0;           // m
  double diameter = 0.0;         // m
  double friction_factor = 0.0;  // dimensionless
  double sound_speed = 0.0;      // m/s
  double mfr_min = 0.0;          // kg/s
  double mfr_max = 0.0;          // kg/s
  double p_min = 0.0;            // Pa
  double p_max = 0.0;            // Pa

  double area() const;  // pi d^2 / 4
  void validate() const;
};

/// Discretized pipeline state over K+1 spatial nodes (node 0 = inlet).
struct GridState {
  Eigen::VectorXd pressures;  // Pa, K+1 entries
  Eigen::VectorXd mfrs;       // kg/s, K+1 entries
  double segment_length = 0.0;

  Eigen::Index segments() const { return pressures.size() - 1; }
  void validate() const;
};

/// Friction model selector for the momentum balance.
struct FrictionMode {
  bool local = false;
  double vbar = 0.0;  // m/s, only meaningful when local

  static FrictionMode nonlinear() { return {false, 0.0}; }
  static FrictionMode local_linear(double vbar) { return {true, vbar}; }
};

/// Steady isothermal profile: uniform flow, pressure from
/// p(x)^2 = p_in^2 - lambda c^2 M^2 x / (d A^2).
/// Throws NonPhysicalSteadyState when the radicand vanishes before the outlet.
GridState steady_state_profile(const PipelineParams& params, double p_in, double mfr,
                               int segments);

/// Friction contribution to the momentum balance, in Pa/m.
/// Nonlinear: lambda c^2 M|M| / (2 d A^2 p); local: lambda vbar M / (2 d A).
double friction_term(const PipelineParams& params, double p, double mfr,
                     const FrictionMode& mode);

/// Time derivatives of the per-element states (p_k, M_k), k = 1..K,
/// for the explicit-Euler spatial scheme with the averaged M^2/p closure.
/// grid supplies the boundary values at node 0 and the current element states.
/// Returns (dp/dt, dM/dt), each of length K.
std::pair<Eigen::VectorXd, Eigen::VectorXd> semi_discrete_rhs(const PipelineParams& params,
                                                              const GridState& grid,
                                                              const FrictionMode& mode);

/// Gas mass stored in the pipeline under p = c^2 rho, using the
/// node sum conserved exactly by the spatial scheme:
///   m = sum_{k=1..K} p_k A dx / c^2.
double linepack_mass(const PipelineParams& params, const GridState& grid);

/// Default spatial segment count: one cell per ~5 km, at least 2.
int default_segments(const PipelineParams& params);

}  // namespace koopgas

#endif  // KOOPGAS_PIPELINE_HPP
