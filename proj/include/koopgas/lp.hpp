#ifndef KOOPGAS_LP_HPP
#define KOOPGAS_LP_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <limits>
#include <string>
#include <vector>

namespace koopgas {

/// minimize c'x  s.t.  A_eq x = b_eq,  A_ineq x <= b_ineq,  lower <= x <= upper.
/// Bounds may be +/- infinity. Row/variable names are optional diagnostics.
struct LinearProgram {
  Eigen::Index n = 0;
  Eigen::VectorXd c;
  Eigen::SparseMatrix<double> eq;    // rows x n
  Eigen::VectorXd eq_rhs;
  Eigen::SparseMatrix<double> ineq;  // rows x n
  Eigen::VectorXd ineq_rhs;
  Eigen::VectorXd lower, upper;
  std::vector<std::string> eq_names, ineq_names, var_names;

  void validate() const;
};

/// Incremental builder used by the dispatch assembly.
class LpBuilder {
 public:
  int add_variable(const std::string& name, double lo, double hi, double cost = 0.0);
  void add_eq(const std::string& name, const std::vector<std::pair<int, double>>& terms,
              double rhs);
  void add_ineq(const std::string& name, const std::vector<std::pair<int, double>>& terms,
                double rhs);  // terms . x <= rhs
  LinearProgram build() const;

  int variables() const { return static_cast<int>(cost_.size()); }
  int eq_rows() const { return static_cast<int>(eq_rhs_.size()); }
  int ineq_rows() const { return static_cast<int>(ineq_rhs_.size()); }

 private:
  std::vector<double> cost_, lo_, hi_;
  std::vector<std::string> names_;
  std::vector<Eigen::Triplet<double>> eq_terms_, ineq_terms_;
  std::vector<double> eq_rhs_, ineq_rhs_;
  std::vector<std::string> eq_names_, ineq_names_;
};

struct LpSolution {
  Eigen::VectorXd x;
  double objective = 0.0;
  double primal_residual = 0.0;  // scaled max violation over all constraints
  double duality_gap = 0.0;      // relative
  int iterations = 0;
  std::string status;            // "optimal"
};

/// Primal-dual interior-point solve (Mehrotra predictor-corrector on the
/// standard-form conversion). Deterministic. Throws Infeasible (with the
/// worst-violated row) or Unbounded.
LpSolution solve_lp(const LinearProgram& lp);

/// Independent feasibility re-check of a candidate point: returns the
/// maximum scaled violation over equalities, inequalities and bounds.
double max_violation(const LinearProgram& lp, const Eigen::VectorXd& x);

/// Name of the most-violated row/bound at a candidate point.
std::string worst_violated_row(const LinearProgram& lp, const Eigen::VectorXd& x);

}  // namespace koopgas

#endif  // KOOPGAS_LP_HPP
