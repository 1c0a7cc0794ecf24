#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "koopgas/errors.hpp"
#include "koopgas/simulate.hpp"

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

// inlet 5.78 MPa, outlet MFR stepping 15 -> 10 kg/s at t = 1 h
BoundaryProfile step_boundary(double dt, double hours) {
  BoundaryProfile b;
  b.dt = dt;
  const int steps = static_cast<int>(std::lround(hours * 3600.0 / dt));
  b.inlet_pressure = Eigen::VectorXd::Constant(steps, 5.78e6);
  b.outlet_mfr.resize(steps);
  for (int t = 0; t < steps; ++t)
    b.outlet_mfr[t] = ((t + 1) * dt <= 3600.0 + 1e-9) ? 15.0 : 10.0;
  return b;
}

GasNetworkSpec y_network() {
  GasNetworkSpec net;
  net.name = "y";
  net.nodes = {{"S", NodeRole::Source, 3e6, 7e6},
               {"J", NodeRole::Junction, 3e6, 7e6},
               {"A", NodeRole::Load, 3e6, 7e6},
               {"B", NodeRole::Load, 3e6, 7e6}};
  PipelineParams trunk = reference_pipeline();
  trunk.id = "trunk";
  PipelineParams branch = reference_pipeline();
  branch.id = "ba";
  branch.length = 15e3;
  PipelineParams branch2 = branch;
  branch2.id = "bb";
  net.pipelines = {{"S", "J", trunk}, {"J", "A", branch}, {"J", "B", branch2}};
  return net;
}

}  // namespace

TEST_CASE("equilibrium: constant boundaries keep the steady state") {
  const auto params = reference_pipeline();
  const auto init = steady_state_profile(params, 5.78e6, 12.0, 6);
  BoundaryProfile b;
  b.dt = 900.0;
  b.inlet_pressure = Eigen::VectorXd::Constant(12, 5.78e6);
  b.outlet_mfr = Eigen::VectorXd::Constant(12, 12.0);
  const auto traj = simulate_pipeline(params, 900.0, b, init, FrictionMode::nonlinear());
  REQUIRE(traj.states.size() == 13);
  for (const auto& s : traj.states) {
    CHECK((s.pressures - init.pressures).cwiseAbs().maxCoeff() / 5.78e6 < 1e-8);
    CHECK((s.mfrs - init.mfrs).cwiseAbs().maxCoeff() / 12.0 < 1e-8);
  }
}

TEST_CASE("load step settles to the new steady state within about an hour") {
  const auto params = reference_pipeline();
  const auto init = steady_state_profile(params, 5.78e6, 15.0, 6);
  const auto traj = simulate_pipeline(params, 900.0, step_boundary(900.0, 6.0), init,
                                      FrictionMode::nonlinear());
  const auto inlet = traj.inlet_mfr_series();
  const auto p_out = traj.outlet_pressure_series();

  const double final_inlet = inlet[inlet.size() - 1];
  CHECK(final_inlet == doctest::Approx(10.0).epsilon(1e-3));  // 10 +/- 0.01 kg/s

  // settled within ~1 h of the step at t = 1 h: from t = 2 h on, inlet stays near final
  for (Eigen::Index t = 8; t < inlet.size(); ++t)
    CHECK(std::abs(inlet[t] - final_inlet) < 0.05);

  // final outlet pressure matches the analytic steady profile within 0.1%
  const auto steady = steady_state_profile(params, 5.78e6, 10.0, 6);
  CHECK(std::abs(p_out[p_out.size() - 1] - steady.pressures[6]) / steady.pressures[6] < 1e-3);
}

TEST_CASE("recorded steps satisfy the backward-Euler residual") {
  const auto params = reference_pipeline();
  const auto init = steady_state_profile(params, 5.78e6, 15.0, 6);
  const auto boundary = step_boundary(900.0, 4.0);
  const auto traj =
      simulate_pipeline(params, 900.0, boundary, init, FrictionMode::nonlinear());
  for (Eigen::Index t = 0; t < boundary.steps(); ++t) {
    const double r = step_residual_norm(params, traj.states[t], traj.states[t + 1], 900.0,
                                        boundary.inlet_pressure[t], boundary.outlet_mfr[t],
                                        FrictionMode::nonlinear());
    CHECK(r <= 1e-8);
  }
}

TEST_CASE("pipeline mass audit closes") {
  const auto params = reference_pipeline();
  const auto init = steady_state_profile(params, 5.78e6, 15.0, 6);
  const auto boundary = step_boundary(900.0, 5.0);
  const auto traj =
      simulate_pipeline(params, 900.0, boundary, init, FrictionMode::nonlinear());

  double net_in = 0.0;
  for (Eigen::Index t = 0; t + 1 < static_cast<Eigen::Index>(traj.states.size()); ++t) {
    const auto& s = traj.states[t + 1];
    net_in += (s.mfrs[0] - s.mfrs[s.segments()]) * 900.0;
  }
  const double stored = linepack_mass(params, traj.states.back()) -
                        linepack_mass(params, traj.states.front());
  CHECK(std::abs(net_in - stored) < 0.01 * std::max(std::abs(stored), 1.0));
}

TEST_CASE("local mode: distinct settled pressures per average velocity") {
  const auto params = reference_pipeline();
  const auto boundary = step_boundary(900.0, 6.0);

  std::vector<double> finals;
  for (double vbar : {0.5, 1.0, 2.0}) {
    // start from the local-model steady state (linear pressure drop)
    GridState init;
    const int segments = 6;
    init.segment_length = params.length / segments;
    init.pressures.resize(segments + 1);
    init.mfrs = Eigen::VectorXd::Constant(segments + 1, 15.0);
    for (int k = 0; k <= segments; ++k) {
      const double x = k * init.segment_length;
      init.pressures[k] =
          5.78e6 - params.friction_factor * vbar * 15.0 * x / (2 * params.diameter * params.area());
    }
    const auto traj =
        simulate_pipeline(params, 900.0, boundary, init, FrictionMode::local_linear(vbar));
    finals.push_back(traj.outlet_pressure_series()[traj.states.size() - 1]);
  }
  CHECK(std::abs(finals[0] - finals[1]) > 1e3);
  CHECK(std::abs(finals[1] - finals[2]) > 1e3);
  CHECK(std::abs(finals[0] - finals[2]) > 1e3);
}

TEST_CASE("settled values are insensitive to halving the time step") {
  const auto params = reference_pipeline();
  const auto init = steady_state_profile(params, 5.78e6, 15.0, 6);
  const auto coarse = simulate_pipeline(params, 900.0, step_boundary(900.0, 6.0), init,
                                        FrictionMode::nonlinear());
  const auto fine = simulate_pipeline(params, 450.0, step_boundary(450.0, 6.0), init,
                                      FrictionMode::nonlinear());
  const double pc = coarse.outlet_pressure_series()[coarse.states.size() - 1];
  const double pf = fine.outlet_pressure_series()[fine.states.size() - 1];
  const double mc = coarse.inlet_mfr_series()[coarse.states.size() - 1];
  const double mf = fine.inlet_mfr_series()[fine.states.size() - 1];
  CHECK(std::abs(pc - pf) / pf < 1e-4);
  CHECK(std::abs(mc - mf) / mf < 1e-4);
}

TEST_CASE("two-node network reduces to the single pipeline") {
  GasNetworkSpec net;
  net.name = "pair";
  net.nodes = {{"S", NodeRole::Source, 3e6, 7e6}, {"L", NodeRole::Load, 3e6, 7e6}};
  net.pipelines = {{"S", "L", reference_pipeline()}};

  const auto steady = steady_network_state(net, {{"S", 5.78e6}}, {{"L", 12.0}}, {});
  CHECK(steady.pipes[0].mfrs[0] == doctest::Approx(12.0).epsilon(1e-8));

  NetworkBoundary boundary;
  boundary.dt = 900.0;
  boundary.source_pressure["S"] = Eigen::VectorXd::Constant(8, 5.78e6);
  boundary.load_withdrawal["L"] = Eigen::VectorXd::Constant(8, 12.0);
  const auto traj = simulate_network(net, 900.0, boundary, steady, FrictionMode::nonlinear());
  for (const auto& s : traj.states) {
    CHECK(std::abs(s.pipes[0].mfrs[0] - 12.0) / 12.0 < 1e-7);
    CHECK(std::abs(s.pipes[0].mfrs[6] - 12.0) / 12.0 < 1e-7);
  }

  // source injection equals load withdrawal throughout
  for (const auto& s : traj.states)
    CHECK(s.pipes[0].mfrs[0] == doctest::Approx(s.pipes[0].mfrs[6]).epsilon(1e-7));
}

TEST_CASE("symmetric Y-network keeps branch flows equal") {
  const auto net = y_network();
  const auto steady = steady_network_state(net, {{"S", 5.78e6}}, {{"A", 6.0}, {"B", 6.0}}, {});

  NetworkBoundary boundary;
  boundary.dt = 900.0;
  boundary.source_pressure["S"] = Eigen::VectorXd::Constant(10, 5.78e6);
  boundary.load_withdrawal["A"] = Eigen::VectorXd::Constant(10, 6.0);
  boundary.load_withdrawal["B"] = Eigen::VectorXd::Constant(10, 6.0);
  // perturb both loads identically after a few steps
  for (int t = 4; t < 10; ++t) {
    boundary.load_withdrawal["A"][t] = 8.0;
    boundary.load_withdrawal["B"][t] = 8.0;
  }

  const auto traj = simulate_network(net, 900.0, boundary, steady, FrictionMode::nonlinear());
  for (const auto& s : traj.states) {
    CHECK(s.pipes[1].mfrs[0] == doctest::Approx(s.pipes[2].mfrs[0]).epsilon(1e-8));
    CHECK(s.pipes[1].mfrs.maxCoeff() == doctest::Approx(s.pipes[2].mfrs.maxCoeff()).epsilon(1e-8));
  }
}

TEST_CASE("Y-network load step: source converges and mass audit closes") {
  const auto net = y_network();
  const auto steady = steady_network_state(net, {{"S", 5.78e6}}, {{"A", 6.0}, {"B", 6.0}}, {});

  const int steps = 40;  // 10 h
  NetworkBoundary boundary;
  boundary.dt = 900.0;
  boundary.source_pressure["S"] = Eigen::VectorXd::Constant(steps, 5.78e6);
  boundary.load_withdrawal["A"] = Eigen::VectorXd::Constant(steps, 6.0);
  boundary.load_withdrawal["B"] = Eigen::VectorXd::Constant(steps, 6.0);
  for (int t = 8; t < steps; ++t) boundary.load_withdrawal["A"][t] = 9.0;

  const auto traj = simulate_network(net, 900.0, boundary, steady, FrictionMode::nonlinear());

  // node balance at every step (junction J): trunk outflow feeds both branches
  for (const auto& s : traj.states) {
    const double balance = s.pipes[0].mfrs[s.pipes[0].segments()] - s.pipes[1].mfrs[0] -
                           s.pipes[2].mfrs[0];
    CHECK(std::abs(balance) < 1e-6);
  }

  // source settles to the new total load
  const auto& last = traj.states.back();
  CHECK(last.pipes[0].mfrs[0] == doctest::Approx(15.0).epsilon(1e-3));

  // mass audit: boundary net inflow equals linepack change within 1%
  double net_in = 0.0;
  for (size_t t = 1; t < traj.states.size(); ++t) {
    const auto& s = traj.states[t];
    double in = s.pipes[0].mfrs[0];
    double out = boundary.load_withdrawal.at("A")[t - 1] + boundary.load_withdrawal.at("B")[t - 1];
    net_in += (in - out) * 900.0;
  }
  const double stored = network_linepack(net, traj.states.back()) -
                        network_linepack(net, traj.states.front());
  CHECK(std::abs(net_in - stored) < 0.01 * std::max(std::abs(stored), 1.0));
}

TEST_CASE("network rejects bad input") {
  GasNetworkSpec net = y_network();
  net.pipelines.pop_back();  // node B becomes unreachable
  CHECK_THROWS_AS(net.validate(), TopologyError);

  GasNetworkSpec no_source = y_network();
  no_source.nodes[0].role = NodeRole::Junction;
  CHECK_THROWS_AS(no_source.validate(), TopologyError);
}

TEST_CASE("snapshot generation is deterministic and honors count") {
  const auto params = reference_pipeline();
  ExcitationConfig exc;  // defaults target this pipeline class
  const auto a = generate_snapshots(params, exc, 120, 900.0, 42);
  const auto b = generate_snapshots(params, exc, 120, 900.0, 42);
  CHECK(a.count() == 120);
  CHECK((a.u - b.u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);

  const auto c = generate_snapshots(params, exc, 120, 900.0, 43);
  CHECK((a.u - c.u).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("snapshot ranges respect the excitation bands") {
  const auto params = reference_pipeline();
  ExcitationConfig exc;
  const auto set = generate_snapshots(params, exc, 400, 900.0, 7);

  // snapshots are per-unit deviations; denormalize via base*(1 + value)
  const auto p_in = (set.u.col(0).array() + 1.0) * set.base_pressure;
  const auto m_out = (set.x.col(1).array() + 1.0) * set.base_mfr;
  CHECK(p_in.minCoeff() >= exc.pressure_nominal * 0.9 - 1e-6);
  CHECK(p_in.maxCoeff() <= exc.pressure_nominal * 1.1 + 1e-6);
  CHECK(m_out.minCoeff() >= 5.0 - 1e-9);
  CHECK(m_out.maxCoeff() <= 20.0 + 1e-9);

  // responses stay physical
  CHECK(((set.x.col(0).array() + 1.0) * set.base_pressure).minCoeff() > 0.0);
  CHECK(((set.u.col(1).array() + 1.0) * set.base_mfr).minCoeff() > 0.0);
}

TEST_CASE("constant excitation at steady state gives constant snapshots") {
  const auto params = reference_pipeline();
  ExcitationConfig exc;
  exc.pressure_sine_frac = 0.0;
  exc.pressure_walk_step = 0.0;
  exc.pressure_band = 0.0;
  exc.mfr_sine_frac = 0.0;
  exc.mfr_walk_step = 0.0;
  exc.mfr_low = exc.mfr_high = 10.0;
  const auto set = generate_snapshots(params, exc, 50, 900.0, 1);
  for (Eigen::Index j = 1; j < set.count(); ++j) {
    CHECK((set.x.row(j) - set.x.row(0)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((set.u.row(j) - set.u.row(0)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("excitation bounds are validated") {
  auto params = reference_pipeline();
  ExcitationConfig exc;
  exc.mfr_low = 100.0;
  exc.mfr_high = 200.0;  // outside pipeline limits
  CHECK_THROWS_AS(generate_snapshots(params, exc, 50, 900.0, 1), ExcitationOutOfBounds);

  ExcitationConfig high_band;
  high_band.pressure_band = 0.5;  // would exceed p_max
  CHECK_THROWS_AS(generate_snapshots(params, high_band, 50, 900.0, 1), ExcitationOutOfBounds);
}

TEST_CASE("snapshot CSV round trip") {
  const auto params = reference_pipeline();
  ExcitationConfig exc;
  const auto set = generate_snapshots(params, exc, 64, 900.0, 5);

  const auto dir = std::filesystem::temp_directory_path() / "koopgas_test_snapshots";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "set.csv").string();
  save_snapshots(set, path);
  const auto loaded = load_snapshots(path);

  CHECK(loaded.pipeline_id == set.pipeline_id);
  CHECK(loaded.dt == set.dt);
  CHECK(loaded.seed == set.seed);
  CHECK((loaded.u - set.u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.x - set.x).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(load_snapshots((dir / "missing.csv").string()), IoError);
  std::filesystem::remove_all(dir);
}
