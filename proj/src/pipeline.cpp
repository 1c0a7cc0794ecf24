#include "koopgas/pipeline.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "koopgas/errors.hpp"

namespace koopgas {

double PipelineParams::area() const {
  return std::numbers::pi * diameter * diameter / 4.0;
}

void PipelineParams::validate() const {
  auto fail = [this](const std::string& what) {
    throw SpecError("pipeline '" + id + "': " + what);
  };
  if (!(length > 0.0)) fail("length must be positive");
  if (!(diameter > 0.0)) fail("diameter must be positive");
  if (!(friction_factor > 0.0)) fail("friction_factor must be positive");
  if (!(sound_speed > 0.0)) fail("sound_speed must be positive");
  if (!(mfr_min < mfr_max)) fail("mfr_min must be below mfr_max");
  if (!(p_min > 0.0)) fail("p_min must be positive");
  if (!(p_min < p_max)) fail("p_min must be below p_max");
}

void GridState::validate() const {
  if (pressures.size() != mfrs.size())
    throw DimensionMismatch("grid pressure/mfr arrays differ in length");
  if (pressures.size() < 2) throw DimensionMismatch("grid needs at least one segment");
  if (!(segment_length > 0.0)) throw DimensionMismatch("grid segment_length must be positive");
}

GridState steady_state_profile(const PipelineParams& params, double p_in, double mfr,
                               int segments) {
  if (!(p_in > 0.0)) throw DomainError("steady_state_profile: inlet pressure must be positive");
  if (segments < 1) throw DomainError("steady_state_profile: need at least one segment");

  const double a = params.area();
  const double slope = params.friction_factor * params.sound_speed * params.sound_speed *
                       mfr * std::abs(mfr) / (params.diameter * a * a);

  GridState grid;
  grid.segment_length = params.length / segments;
  grid.pressures.resize(segments + 1);
  grid.mfrs = Eigen::VectorXd::Constant(segments + 1, mfr);
  for (int k = 0; k <= segments; ++k) {
    const double x = k * grid.segment_length;
    const double radicand = p_in * p_in - slope * x;
    if (!(radicand > 0.0)) {
      std::ostringstream msg;
      msg << "pipeline '" << params.id << "' cannot sustain " << mfr << " kg/s at inlet "
          << p_in << " Pa (pressure collapses by x = " << x << " m)";
      throw NonPhysicalSteadyState(msg.str());
    }
    grid.pressures[k] = std::sqrt(radicand);
  }
  return grid;
}

double friction_term(const PipelineParams& params, double p, double mfr,
                     const FrictionMode& mode) {
  const double a = params.area();
  if (mode.local) {
    return params.friction_factor * mode.vbar * mfr / (2.0 * params.diameter * a);
  }
  if (!(p > 0.0)) throw DomainError("friction_term: nonlinear mode requires positive pressure");
  const double c2 = params.sound_speed * params.sound_speed;
  // M|M| instead of M^2 so reverse flow dissipates as well.
  return params.friction_factor * c2 * mfr * std::abs(mfr) /
         (2.0 * params.diameter * a * a * p);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> semi_discrete_rhs(const PipelineParams& params,
                                                              const GridState& grid,
                                                              const FrictionMode& mode) {
  grid.validate();
  const Eigen::Index n = grid.segments();
  const double a = params.area();
  const double c2 = params.sound_speed * params.sound_speed;
  const double dx = grid.segment_length;

  Eigen::VectorXd dp(n), dm(n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    const double p_in = grid.pressures[k - 1];
    const double p_out = grid.pressures[k];
    const double m_in = grid.mfrs[k - 1];
    const double m_out = grid.mfrs[k];

    dp[k - 1] = -(c2 / a) * (m_out - m_in) / dx;

    double friction;
    if (mode.local) {
      // A * lambda vbar M / (2 d A) with M ~ (M_in + M_out)/2
      friction = params.friction_factor * mode.vbar * (m_out + m_in) / (4.0 * params.diameter);
    } else {
      const double p_sum = p_out + p_in;
      if (!(p_sum > 0.0))
        throw DomainError("semi_discrete_rhs: nonpositive pressure in nonlinear friction");
      const double m_sum = m_out + m_in;
      friction = params.friction_factor * c2 * m_sum * std::abs(m_sum) /
                 (4.0 * params.diameter * a * p_sum);
    }
    dm[k - 1] = -a * (p_out - p_in) / dx - friction;
  }
  return {std::move(dp), std::move(dm)};
}

double linepack_mass(const PipelineParams& params, const GridState& grid) {
  const double c2 = params.sound_speed * params.sound_speed;
  const Eigen::Index n = grid.segments();
  double sum = 0.0;
  for (Eigen::Index k = 1; k <= n; ++k) sum += grid.pressures[k];
  return sum * params.area() * grid.segment_length / c2;
}

int default_segments(const PipelineParams& params) {
  const int by_length = static_cast<int>(std::lround(params.length / 5000.0));
  return std::max(2, by_length);
}

}  // namespace koopgas
