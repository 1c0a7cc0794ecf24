#ifndef KOOPGAS_OBSERVABLES_HPP
#define KOOPGAS_OBSERVABLES_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace koopgas {

/// Dictionary of scalar observables over the normalized outlet state
/// (p, m). The first two lifted components are always the state itself,
/// so extraction is the fixed matrix C = [I2 0].
///
/// Beyond the identity pair, each entry applies one of two maps to a
/// designated component:
///   map 0:  f(x) = -x exp(-x)
///   map 1:  f(x) = exp(-x) sin(-x)
struct ObservableSet {
  struct Extra {
    int component;  // 0 = pressure, 1 = mfr
    int map;        // 0 or 1
  };

  std::string id;
  std::vector<Extra> extras;

  int dim() const { return 2 + static_cast<int>(extras.size()); }

  Eigen::VectorXd lift(double p, double m) const;
  Eigen::VectorXd lift(const Eigen::Vector2d& state) const { return lift(state[0], state[1]); }

  /// Samples the normalized box [-2, 2]^2 and checks every map stays
  /// finite and bounded with finite central-difference slopes.
  void check_regularity() const;

  /// Built-in sets: "v5a" (N = 4, extra maps on pressure only) and
  /// "c4" (N = 6, extra maps on both components).
  static ObservableSet by_name(const std::string& name);
};

}  // namespace koopgas

#endif  // KOOPGAS_OBSERVABLES_HPP
