#include <doctest.h>

#include <cmath>
#include <random>

#include "koopgas/errors.hpp"
#include "koopgas/pipeline.hpp"

using namespace koopgas;

namespace {

PipelineParams reference_pipeline() {
  PipelineParams p;
  p.id = "ref";
  p.length = 30e3;
  p.diameter = 0.5;
  p.friction_factor = 0.0108;
  p.sound_speed = 340.0;
  p.mfr_min = 0.0;
  p.mfr_max = 50.0;
  p.p_min = 3e6;
  p.p_max = 7e6;
  return p;
}

}  // namespace

TEST_CASE("pipeline parameter validation") {
  PipelineParams p = reference_pipeline();
  CHECK_NOTHROW(p.validate());
  CHECK(p.area() == doctest::Approx(0.19634954084936207).epsilon(1e-15));

  PipelineParams bad = p;
  bad.diameter = 0.0;
  CHECK_THROWS_AS(bad.validate(), SpecError);
  bad = p;
  bad.p_min = -1.0;
  CHECK_THROWS_AS(bad.validate(), SpecError);
  bad = p;
  bad.mfr_min = bad.mfr_max;
  CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("steady profile: zero flow is uniform") {
  const auto grid = steady_state_profile(reference_pipeline(), 5.78e6, 0.0, 6);
  CHECK(grid.segments() == 6);
  for (Eigen::Index k = 0; k <= 6; ++k) {
    CHECK(grid.pressures[k] == doctest::Approx(5.78e6).epsilon(1e-15));
    CHECK(grid.mfrs[k] == 0.0);
  }
}

TEST_CASE("steady profile: closed-form outlet pressures") {
  const auto params = reference_pipeline();
  // frozen from the closed form p(L) = sqrt(p_in^2 - lambda c^2 M^2 L / (d A^2))
  const auto g10 = steady_state_profile(params, 5.78e6, 10.0, 6);
  CHECK(g10.pressures[6] == doctest::Approx(5763167.52177139).epsilon(1e-12));
  const auto g15 = steady_state_profile(params, 5.78e6, 15.0, 6);
  CHECK(g15.pressures[6] == doctest::Approx(5742057.535326629).epsilon(1e-12));

  for (Eigen::Index k = 0; k < 6; ++k) {
    CHECK(g10.pressures[k] > g10.pressures[k + 1]);  // strictly decreasing
    CHECK(g10.mfrs[k] == 10.0);
  }
}

TEST_CASE("steady profile: nonphysical flow rejected") {
  auto params = reference_pipeline();
  CHECK_THROWS_AS(steady_state_profile(params, 1e5, 40.0, 4), NonPhysicalSteadyState);
  CHECK_THROWS_AS(steady_state_profile(params, -1.0, 1.0, 4), DomainError);
}

TEST_CASE("friction term values") {
  const auto params = reference_pipeline();
  CHECK(friction_term(params, 5.78e6, 0.0, FrictionMode::nonlinear()) == 0.0);
  CHECK(friction_term(params, 5.78e6, 0.0, FrictionMode::local_linear(1.0)) == 0.0);

  // frozen from lambda c^2 M^2 / (2 d A^2 p) and lambda vbar M / (2 d A)
  CHECK(friction_term(params, 5.78e6, 10.0, FrictionMode::nonlinear()) ==
        doctest::Approx(0.560265617068671).epsilon(1e-14));
  CHECK(friction_term(params, 0.0, 10.0, FrictionMode::local_linear(1.0)) ==
        doctest::Approx(0.5500394833255904).epsilon(1e-14));

  CHECK_THROWS_AS(friction_term(params, 0.0, 10.0, FrictionMode::nonlinear()), DomainError);
}

TEST_CASE("friction term: odd in M, decreasing in p, linear in M (local)") {
  const auto params = reference_pipeline();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pd(4e6, 6.5e6), md(0.5, 30.0);
  for (int i = 0; i < 50; ++i) {
    const double p = pd(rng), m = md(rng);
    const double f = friction_term(params, p, m, FrictionMode::nonlinear());
    CHECK(friction_term(params, p, -m, FrictionMode::nonlinear()) ==
          doctest::Approx(-f).epsilon(1e-13));
    CHECK(friction_term(params, p * 1.1, m, FrictionMode::nonlinear()) < f);

    const double fl = friction_term(params, p, m, FrictionMode::local_linear(1.3));
    CHECK(friction_term(params, p, 2.0 * m, FrictionMode::local_linear(1.3)) ==
          doctest::Approx(2.0 * fl).epsilon(1e-13));
  }
}

TEST_CASE("semi-discrete rhs vanishes at a steady profile") {
  const auto params = reference_pipeline();
  const auto grid = steady_state_profile(params, 5.78e6, 12.0, 8);
  const auto [dp, dm] = semi_discrete_rhs(params, grid, FrictionMode::nonlinear());
  // scale: dp against p/tau, dm against M; steady is an equilibrium of this scheme
  for (Eigen::Index k = 0; k < 8; ++k) {
    CHECK(std::abs(dp[k]) / 5.78e6 < 1e-9);
    CHECK(std::abs(dm[k]) / 12.0 < 1e-9);
  }
}

TEST_CASE("semi-discrete rhs: mass conservation sign") {
  const auto params = reference_pipeline();
  GridState grid;
  grid.segment_length = params.length;
  grid.pressures = Eigen::VectorXd::Constant(2, 5e6);
  grid.mfrs.resize(2);
  grid.mfrs << 8.0, 12.0;  // outflow exceeds inflow
  const auto [dp, dm] = semi_discrete_rhs(params, grid, FrictionMode::nonlinear());
  CHECK(dp[0] < 0.0);
}

TEST_CASE("semi-discrete rhs matches an element-by-element re-evaluation") {
  const auto params = reference_pipeline();
  const double a = params.area();
  const double c2 = params.sound_speed * params.sound_speed;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pd(4.5e6, 6.2e6), md(-5.0, 25.0);

  for (int trial = 0; trial < 20; ++trial) {
    const int segments = 2 + static_cast<int>(rng() % 6);
    GridState grid;
    grid.segment_length = params.length / segments;
    grid.pressures.resize(segments + 1);
    grid.mfrs.resize(segments + 1);
    for (int k = 0; k <= segments; ++k) {
      grid.pressures[k] = pd(rng);
      grid.mfrs[k] = md(rng);
    }
    const auto [dp, dm] = semi_discrete_rhs(params, grid, FrictionMode::nonlinear());
    for (int k = 1; k <= segments; ++k) {
      const double expected_dp =
          -(c2 / a) * (grid.mfrs[k] - grid.mfrs[k - 1]) / grid.segment_length;
      const double msum = grid.mfrs[k] + grid.mfrs[k - 1];
      const double psum = grid.pressures[k] + grid.pressures[k - 1];
      const double expected_dm =
          -a * (grid.pressures[k] - grid.pressures[k - 1]) / grid.segment_length -
          params.friction_factor * c2 * msum * std::abs(msum) /
              (4.0 * params.diameter * a * psum);
      CHECK(dp[k - 1] == doctest::Approx(expected_dp).epsilon(1e-13));
      CHECK(dm[k - 1] == doctest::Approx(expected_dm).epsilon(1e-13));
    }

    const auto [dpl, dml] = semi_discrete_rhs(params, grid, FrictionMode::local_linear(1.5));
    for (int k = 1; k <= segments; ++k) {
      const double msum = grid.mfrs[k] + grid.mfrs[k - 1];
      const double expected_dm =
          -a * (grid.pressures[k] - grid.pressures[k - 1]) / grid.segment_length -
          params.friction_factor * 1.5 * msum / (4.0 * params.diameter);
      CHECK(dml[k - 1] == doctest::Approx(expected_dm).epsilon(1e-13));
      CHECK(dpl[k - 1] == doctest::Approx(dp[k - 1]).epsilon(1e-13));
    }
  }
}

TEST_CASE("default segment count") {
  auto params = reference_pipeline();
  CHECK(default_segments(params) == 6);  // 30 km / 5 km
  params.length = 4e3;
  CHECK(default_segments(params) == 2);  // floor of 2
  params.length = 52.4e3;
  CHECK(default_segments(params) == 10);
}

TEST_CASE("linepack mass tracks the scheme's conserved sum") {
  const auto params = reference_pipeline();
  const auto grid = steady_state_profile(params, 5.78e6, 10.0, 5);
  double expected = 0.0;
  for (Eigen::Index k = 1; k <= 5; ++k)
    expected += grid.pressures[k] * params.area() * grid.segment_length /
                (params.sound_speed * params.sound_speed);
  CHECK(linepack_mass(params, grid) == doctest::Approx(expected).epsilon(1e-14));
}
