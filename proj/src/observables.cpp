#include "koopgas/observables.hpp"

#include <cmath>

#include "koopgas/errors.hpp"

namespace koopgas {

namespace {

double apply_map(int map, double x) {
  switch (map) {
    case 0: return -x * std::exp(-x);
    case 1: return std::exp(-x) * std::sin(-x);
    default: throw SpecError("unknown observable map id " + std::to_string(map));
  }
}

}  // namespace

Eigen::VectorXd ObservableSet::lift(double p, double m) const {
  Eigen::VectorXd psi(dim());
  psi[0] = p;
  psi[1] = m;
  for (size_t i = 0; i < extras.size(); ++i) {
    const double x = extras[i].component == 0 ? p : m;
    psi[2 + i] = apply_map(extras[i].map, x);
  }
  return psi;
}

void ObservableSet::check_regularity() const {
  constexpr int kSamples = 41;
  constexpr double kBound = 1e3;
  constexpr double kH = 1e-6;
  for (const auto& extra : extras) {
    if (extra.component != 0 && extra.component != 1)
      throw SpecError("observable set '" + id + "': component index out of range");
    for (int i = 0; i < kSamples; ++i) {
      const double x = -2.0 + 4.0 * i / (kSamples - 1);
      const double v = apply_map(extra.map, x);
      const double slope = (apply_map(extra.map, x + kH) - apply_map(extra.map, x - kH)) / (2 * kH);
      if (!std::isfinite(v) || std::abs(v) > kBound)
        throw SpecError("observable set '" + id + "': map unbounded on [-2,2]");
      if (!std::isfinite(slope) || std::abs(slope) > kBound)
        throw SpecError("observable set '" + id + "': map slope unbounded on [-2,2]");
    }
  }
}

ObservableSet ObservableSet::by_name(const std::string& name) {
  ObservableSet set;
  set.id = name;
  if (name == "v5a") {
    set.extras = {{0, 0}, {0, 1}};
  } else if (name == "c4") {
    set.extras = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  } else {
    throw SpecError("unknown observable set '" + name + "' (expected v5a or c4)");
  }
  return set;
}

}  // namespace koopgas
