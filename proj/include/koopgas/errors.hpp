#ifndef KOOPGAS_ERRORS_HPP
#define KOOPGAS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace koopgas {

// Validation failure in a user-supplied spec or config.
struct SpecError : std::runtime_error {
  explicit SpecError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TopologyError : SpecError {
  explicit TopologyError(const std::string& msg) : SpecError(msg) {}
};

struct DomainError : std::domain_error {
  explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

// Requested flow cannot be sustained at the given inlet pressure.
struct NonPhysicalSteadyState : DomainError {
  explicit NonPhysicalSteadyState(const std::string& msg) : DomainError(msg) {}
};

struct NonPhysicalState : std::runtime_error {
  explicit NonPhysicalState(const std::string& msg) : std::runtime_error(msg) {}
};

struct NewtonDivergence : std::runtime_error {
  double last_residual;
  NewtonDivergence(const std::string& msg, double residual)
      : std::runtime_error(msg), last_residual(residual) {}
};

struct ExcitationOutOfBounds : SpecError {
  explicit ExcitationOutOfBounds(const std::string& msg) : SpecError(msg) {}
};

struct InsufficientData : std::runtime_error {
  explicit InsufficientData(const std::string& msg) : std::runtime_error(msg) {}
};

struct RankDeficient : std::runtime_error {
  explicit RankDeficient(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonConvergence : std::runtime_error {
  explicit NonConvergence(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

struct LengthMismatch : DimensionMismatch {
  explicit LengthMismatch(const std::string& msg) : DimensionMismatch(msg) {}
};

struct HorizonMismatch : DimensionMismatch {
  explicit HorizonMismatch(const std::string& msg) : DimensionMismatch(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SchemaMismatch : IoError {
  explicit SchemaMismatch(const std::string& msg) : IoError(msg) {}
};

struct VersionError : SchemaMismatch {
  explicit VersionError(const std::string& msg) : SchemaMismatch(msg) {}
};

struct Infeasible : std::runtime_error {
  std::string worst_row;
  double max_violation;
  Infeasible(const std::string& msg, std::string row, double violation)
      : std::runtime_error(msg), worst_row(std::move(row)), max_violation(violation) {}
};

struct Unbounded : std::runtime_error {
  explicit Unbounded(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace koopgas

#endif  // KOOPGAS_ERRORS_HPP
