#include "koopgas/lp.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>

#include "koopgas/errors.hpp"

namespace koopgas {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kOptTol = 1e-9;
constexpr double kAcceptTol = 1e-7;
constexpr int kMaxIterations = 200;

bool finite(double v) { return std::isfinite(v); }

// ---------------------------------------------------------------------------
// Standard computational form: min c'x  s.t. Ax = b, 0 <= x (<= u).
// Finite lower bounds shift, upper-only bounds mirror, free variables split,
// fixed variables substitute, inequality rows gain slacks.
// ---------------------------------------------------------------------------

struct StandardForm {
  Eigen::SparseMatrix<double> a;
  Eigen::VectorXd b, c, u;

  enum class Kind { Fixed, Shift, Mirror, Split };
  struct Recovery {
    Kind kind;
    Eigen::Index column;
    double offset;
  };
  std::vector<Recovery> recover;  // per original variable
};

StandardForm to_standard_form(const LinearProgram& lp) {
  lp.validate();
  StandardForm sf;
  sf.recover.resize(lp.n);

  std::vector<double> fixed_value(lp.n, 0.0);
  std::vector<char> is_fixed(lp.n, 0);
  Eigen::Index cols = 0;
  std::vector<double> cost, upper;
  for (Eigen::Index j = 0; j < lp.n; ++j) {
    const double lo = lp.lower[j], hi = lp.upper[j];
    const std::string var = j < static_cast<Eigen::Index>(lp.var_names.size()) && !lp.var_names[j].empty()
                                ? lp.var_names[j]
                                : "x" + std::to_string(j);
    if (lo > hi) throw Infeasible("infeasible bounds on " + var, "bound " + var, lo - hi);
    if (finite(lo) && finite(hi) && hi - lo < 1e-14) {
      sf.recover[j] = {StandardForm::Kind::Fixed, -1, lo};
      is_fixed[j] = 1;
      fixed_value[j] = lo;
    } else if (finite(lo)) {
      sf.recover[j] = {StandardForm::Kind::Shift, cols++, lo};
      cost.push_back(lp.c[j]);
      upper.push_back(finite(hi) ? hi - lo : kInf);
    } else if (finite(hi)) {
      sf.recover[j] = {StandardForm::Kind::Mirror, cols++, hi};
      cost.push_back(-lp.c[j]);
      upper.push_back(kInf);
    } else {
      sf.recover[j] = {StandardForm::Kind::Split, cols, 0.0};
      cols += 2;
      cost.push_back(lp.c[j]);
      cost.push_back(-lp.c[j]);
      upper.push_back(kInf);
      upper.push_back(kInf);
    }
  }

  const Eigen::Index m_eq = lp.eq.rows(), m_ineq = lp.ineq.rows();
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::VectorXd rhs(m_eq + m_ineq);

  auto convert_entry = [&](Eigen::Index row, Eigen::Index j, double v, double& adjusted) {
    if (is_fixed[j]) {
      adjusted -= v * fixed_value[j];
      return;
    }
    const auto& rec = sf.recover[j];
    switch (rec.kind) {
      case StandardForm::Kind::Shift:
        trips.emplace_back(row, rec.column, v);
        adjusted -= v * rec.offset;
        break;
      case StandardForm::Kind::Mirror:
        trips.emplace_back(row, rec.column, -v);
        adjusted -= v * rec.offset;
        break;
      case StandardForm::Kind::Split:
        trips.emplace_back(row, rec.column, v);
        trips.emplace_back(row, rec.column + 1, -v);
        break;
      case StandardForm::Kind::Fixed:
        break;
    }
  };

  const Eigen::SparseMatrix<double, Eigen::RowMajor> eq_rm(lp.eq), ineq_rm(lp.ineq);
  for (Eigen::Index r = 0; r < m_eq; ++r) {
    double adjusted = lp.eq_rhs[r];
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(eq_rm, r); it; ++it)
      convert_entry(r, it.col(), it.value(), adjusted);
    rhs[r] = adjusted;
  }
  for (Eigen::Index r = 0; r < m_ineq; ++r) {
    const Eigen::Index row = m_eq + r;
    double adjusted = lp.ineq_rhs[r];
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(ineq_rm, r); it; ++it)
      convert_entry(row, it.col(), it.value(), adjusted);
    trips.emplace_back(row, cols, 1.0);  // slack
    cost.push_back(0.0);
    upper.push_back(kInf);
    ++cols;
    rhs[row] = adjusted;
  }

  sf.a.resize(m_eq + m_ineq, cols);
  sf.a.setFromTriplets(trips.begin(), trips.end());
  sf.a.makeCompressed();
  sf.b = std::move(rhs);
  sf.c = Eigen::Map<Eigen::VectorXd>(cost.data(), cost.size());
  sf.u = Eigen::Map<Eigen::VectorXd>(upper.data(), upper.size());
  return sf;
}

// ---------------------------------------------------------------------------
// Mehrotra predictor-corrector with upper bounds; normal-equations solve.
// ---------------------------------------------------------------------------

struct IpmResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  double rel_primal = 0.0;
  double rel_dual = 0.0;
  double rel_gap = 0.0;
  int iterations = 0;
  bool optimal = false;
  bool diverging_primal = false;  // suspected unbounded
  bool stuck_infeasible = false;  // suspected infeasible
};

IpmResult ipm_solve(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& c, const Eigen::VectorXd& u) {
  const Eigen::Index m = a.rows(), n = a.cols();
  std::vector<Eigen::Index> bounded;
  for (Eigen::Index j = 0; j < n; ++j)
    if (finite(u[j])) bounded.push_back(j);

  Eigen::VectorXd x(n), z(n), w = Eigen::VectorXd::Zero(n), s = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    x[j] = finite(u[j]) ? std::max(1e-8, 0.5 * u[j]) : 1.0;
    z[j] = 1.0 + std::abs(c[j]);
  }
  for (Eigen::Index j : bounded) {
    s[j] = std::max(1e-8, u[j] - x[j]);
    w[j] = 1.0;
  }
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);

  const double b_scale = 1.0 + (m ? b.cwiseAbs().maxCoeff() : 0.0);
  const double c_scale = 1.0 + (n ? c.cwiseAbs().maxCoeff() : 0.0);
  const double comp_count = static_cast<double>(n + bounded.size());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool pattern_ready = false;

  IpmResult res;
  double best = kInf;
  int since_best = 0;

  for (int it = 0; it < kMaxIterations; ++it) {
    const Eigen::VectorXd r_p = b - a * x;
    const Eigen::VectorXd r_d = c - a.transpose() * y - z + w;
    double mu = x.dot(z);
    for (Eigen::Index j : bounded) mu += s[j] * w[j];
    mu /= comp_count;

    const double obj_p = c.dot(x);
    double obj_d = b.dot(y);
    for (Eigen::Index j : bounded) obj_d -= u[j] * w[j];

    res.rel_primal = (m ? r_p.cwiseAbs().maxCoeff() : 0.0) / b_scale;
    res.rel_dual = (n ? r_d.cwiseAbs().maxCoeff() : 0.0) / c_scale;
    res.rel_gap = std::abs(obj_p - obj_d) / (1.0 + std::abs(obj_p));
    res.objective = obj_p;
    res.x = x;
    res.iterations = it;

    const double worst = std::max({res.rel_primal, res.rel_dual, res.rel_gap});
    if (worst <= kOptTol) {
      res.optimal = true;
      return res;
    }
    if (worst < 0.9 * best) {
      best = worst;
      since_best = 0;
    } else if (++since_best > 25) {
      if (worst <= kAcceptTol) {
        res.optimal = true;
        return res;
      }
      res.stuck_infeasible = res.rel_primal > kAcceptTol;
      res.diverging_primal = !res.stuck_infeasible && obj_p < -1e10 * c_scale;
      return res;
    }
    if (obj_p < -1e14 * c_scale || x.cwiseAbs().maxCoeff() > 1e13) {
      res.diverging_primal = res.rel_primal <= 1e-5;
      res.stuck_infeasible = !res.diverging_primal;
      return res;
    }

    Eigen::VectorXd d_inv = z.cwiseQuotient(x);
    for (Eigen::Index j : bounded) d_inv[j] += w[j] / s[j];
    const Eigen::VectorXd d = d_inv.cwiseInverse();

    if (m > 0) {
      Eigen::SparseMatrix<double> normal =
          Eigen::SparseMatrix<double>(a * d.asDiagonal() * a.transpose());
      double diag_max = 1.0;
      for (Eigen::Index k = 0; k < m; ++k) diag_max = std::max(diag_max, normal.coeff(k, k));
      for (Eigen::Index k = 0; k < m; ++k) normal.coeffRef(k, k) += 1e-12 * diag_max;
      if (!pattern_ready) {
        ldlt.analyzePattern(normal);
        pattern_ready = true;
      }
      ldlt.factorize(normal);
      if (ldlt.info() != Eigen::Success) {
        for (Eigen::Index k = 0; k < m; ++k) normal.coeffRef(k, k) += 1e-8 * diag_max;
        ldlt.factorize(normal);
        if (ldlt.info() != Eigen::Success)
          throw NonConvergence("interior point: normal equations factorization failed");
      }
    }

    auto newton_step = [&](const Eigen::VectorXd& rxz, const Eigen::VectorXd& rsw,
                           Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& dz,
                           Eigen::VectorXd& dw) {
      Eigen::VectorXd rhat = r_d - rxz.cwiseQuotient(x);
      for (Eigen::Index j : bounded) rhat[j] += rsw[j] / s[j];
      if (m > 0) {
        const Eigen::VectorXd rhs = r_p + a * d.cwiseProduct(rhat);
        dy = ldlt.solve(rhs);
        dx = d.cwiseProduct(a.transpose() * dy - rhat);
      } else {
        dy.resize(0);
        dx = -d.cwiseProduct(rhat);
      }
      dz = (rxz - z.cwiseProduct(dx)).cwiseQuotient(x);
      dw = Eigen::VectorXd::Zero(n);
      for (Eigen::Index j : bounded) dw[j] = (rsw[j] + w[j] * dx[j]) / s[j];
    };

    auto step_lengths = [&](const Eigen::VectorXd& dx, const Eigen::VectorXd& dz,
                            const Eigen::VectorXd& dw, double& alpha_p, double& alpha_d) {
      alpha_p = 1.0;
      alpha_d = 1.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (dx[j] < 0.0) alpha_p = std::min(alpha_p, -x[j] / dx[j]);
        if (dz[j] < 0.0) alpha_d = std::min(alpha_d, -z[j] / dz[j]);
      }
      for (Eigen::Index j : bounded) {
        if (dx[j] > 0.0) alpha_p = std::min(alpha_p, s[j] / dx[j]);
        if (dw[j] < 0.0) alpha_d = std::min(alpha_d, -w[j] / dw[j]);
      }
    };

    Eigen::VectorXd rxz = -x.cwiseProduct(z);
    Eigen::VectorXd rsw = Eigen::VectorXd::Zero(n);
    for (Eigen::Index j : bounded) rsw[j] = -s[j] * w[j];
    Eigen::VectorXd dx_a, dy_a, dz_a, dw_a;
    newton_step(rxz, rsw, dx_a, dy_a, dz_a, dw_a);
    double ap, ad;
    step_lengths(dx_a, dz_a, dw_a, ap, ad);

    double mu_aff = (x + std::min(1.0, ap) * dx_a).dot(z + std::min(1.0, ad) * dz_a);
    for (Eigen::Index j : bounded)
      mu_aff += (s[j] - std::min(1.0, ap) * dx_a[j]) * (w[j] + std::min(1.0, ad) * dw_a[j]);
    mu_aff = std::max(0.0, mu_aff) / comp_count;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    for (Eigen::Index j = 0; j < n; ++j) rxz[j] += sigma * mu - dx_a[j] * dz_a[j];
    for (Eigen::Index j : bounded) rsw[j] += sigma * mu + dx_a[j] * dw_a[j];
    Eigen::VectorXd dx, dy, dz, dw;
    newton_step(rxz, rsw, dx, dy, dz, dw);
    step_lengths(dx, dz, dw, ap, ad);

    const double tau = mu > 1e-10 ? 0.9995 : 0.99995;
    ap = std::min(1.0, tau * ap);
    ad = std::min(1.0, tau * ad);

    x += ap * dx;
    y += ad * dy;
    z += ad * dz;
    for (Eigen::Index j : bounded) {
      s[j] -= ap * dx[j];
      w[j] += ad * dw[j];
    }
  }
  res.optimal = std::max({res.rel_primal, res.rel_dual, res.rel_gap}) <= kAcceptTol;
  res.stuck_infeasible = !res.optimal && res.rel_primal > kAcceptTol;
  return res;
}

Eigen::VectorXd recover_original(const StandardForm& sf, const Eigen::VectorXd& xs,
                                 Eigen::Index n_original) {
  Eigen::VectorXd x(n_original);
  for (Eigen::Index j = 0; j < n_original; ++j) {
    const auto& rec = sf.recover[j];
    switch (rec.kind) {
      case StandardForm::Kind::Fixed: x[j] = rec.offset; break;
      case StandardForm::Kind::Shift: x[j] = rec.offset + xs[rec.column]; break;
      case StandardForm::Kind::Mirror: x[j] = rec.offset - xs[rec.column]; break;
      case StandardForm::Kind::Split: x[j] = xs[rec.column] - xs[rec.column + 1]; break;
    }
  }
  return x;
}

std::string row_label(const LinearProgram& lp, bool equality, Eigen::Index row) {
  const auto& names = equality ? lp.eq_names : lp.ineq_names;
  if (row < static_cast<Eigen::Index>(names.size()) && !names[row].empty()) return names[row];
  return (equality ? "eq[" : "ineq[") + std::to_string(row) + "]";
}

}  // namespace

// ---------------------------------------------------------------------------

void LinearProgram::validate() const {
  if (n < 1) throw SpecError("linear program has no variables");
  if (c.size() != n || lower.size() != n || upper.size() != n)
    throw DimensionMismatch("linear program vector sizes disagree with n");
  if (eq.cols() != n || ineq.cols() != n)
    throw DimensionMismatch("linear program matrix widths disagree with n");
  if (eq.rows() != eq_rhs.size() || ineq.rows() != ineq_rhs.size())
    throw DimensionMismatch("linear program rhs sizes disagree with row counts");
}

int LpBuilder::add_variable(const std::string& name, double lo, double hi, double cost) {
  cost_.push_back(cost);
  lo_.push_back(lo);
  hi_.push_back(hi);
  names_.push_back(name);
  return static_cast<int>(cost_.size()) - 1;
}

void LpBuilder::add_eq(const std::string& name,
                       const std::vector<std::pair<int, double>>& terms, double rhs) {
  const int row = static_cast<int>(eq_rhs_.size());
  for (const auto& [col, v] : terms)
    if (v != 0.0) eq_terms_.emplace_back(row, col, v);
  eq_rhs_.push_back(rhs);
  eq_names_.push_back(name);
}

void LpBuilder::add_ineq(const std::string& name,
                         const std::vector<std::pair<int, double>>& terms, double rhs) {
  const int row = static_cast<int>(ineq_rhs_.size());
  for (const auto& [col, v] : terms)
    if (v != 0.0) ineq_terms_.emplace_back(row, col, v);
  ineq_rhs_.push_back(rhs);
  ineq_names_.push_back(name);
}

LinearProgram LpBuilder::build() const {
  LinearProgram lp;
  lp.n = static_cast<Eigen::Index>(cost_.size());
  lp.c = Eigen::Map<const Eigen::VectorXd>(cost_.data(), cost_.size());
  lp.lower = Eigen::Map<const Eigen::VectorXd>(lo_.data(), lo_.size());
  lp.upper = Eigen::Map<const Eigen::VectorXd>(hi_.data(), hi_.size());
  lp.eq.resize(static_cast<Eigen::Index>(eq_rhs_.size()), lp.n);
  lp.eq.setFromTriplets(eq_terms_.begin(), eq_terms_.end());
  lp.eq_rhs = Eigen::Map<const Eigen::VectorXd>(eq_rhs_.data(), eq_rhs_.size());
  lp.ineq.resize(static_cast<Eigen::Index>(ineq_rhs_.size()), lp.n);
  lp.ineq.setFromTriplets(ineq_terms_.begin(), ineq_terms_.end());
  lp.ineq_rhs = Eigen::Map<const Eigen::VectorXd>(ineq_rhs_.data(), ineq_rhs_.size());
  lp.var_names = names_;
  lp.eq_names = eq_names_;
  lp.ineq_names = ineq_names_;
  return lp;
}

double max_violation(const LinearProgram& lp, const Eigen::VectorXd& x) {
  lp.validate();
  double worst = 0.0;
  if (lp.eq.rows() > 0) {
    const Eigen::VectorXd r = lp.eq * x - lp.eq_rhs;
    for (Eigen::Index i = 0; i < r.size(); ++i)
      worst = std::max(worst, std::abs(r[i]) / (1.0 + std::abs(lp.eq_rhs[i])));
  }
  if (lp.ineq.rows() > 0) {
    const Eigen::VectorXd r = lp.ineq * x - lp.ineq_rhs;
    for (Eigen::Index i = 0; i < r.size(); ++i)
      worst = std::max(worst, r[i] / (1.0 + std::abs(lp.ineq_rhs[i])));
  }
  for (Eigen::Index j = 0; j < lp.n; ++j) {
    const double ref = 1.0 + std::max(finite(lp.lower[j]) ? std::abs(lp.lower[j]) : 0.0,
                                      finite(lp.upper[j]) ? std::abs(lp.upper[j]) : 0.0);
    if (finite(lp.lower[j])) worst = std::max(worst, (lp.lower[j] - x[j]) / ref);
    if (finite(lp.upper[j])) worst = std::max(worst, (x[j] - lp.upper[j]) / ref);
  }
  return worst;
}

std::string worst_violated_row(const LinearProgram& lp, const Eigen::VectorXd& x) {
  double worst = -kInf;
  std::string label = "none";
  if (lp.eq.rows() > 0) {
    const Eigen::VectorXd r = lp.eq * x - lp.eq_rhs;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const double v = std::abs(r[i]) / (1.0 + std::abs(lp.eq_rhs[i]));
      if (v > worst) {
        worst = v;
        label = row_label(lp, true, i);
      }
    }
  }
  if (lp.ineq.rows() > 0) {
    const Eigen::VectorXd r = lp.ineq * x - lp.ineq_rhs;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const double v = r[i] / (1.0 + std::abs(lp.ineq_rhs[i]));
      if (v > worst) {
        worst = v;
        label = row_label(lp, false, i);
      }
    }
  }
  for (Eigen::Index j = 0; j < lp.n; ++j) {
    double v = -kInf;
    if (finite(lp.lower[j])) v = std::max(v, lp.lower[j] - x[j]);
    if (finite(lp.upper[j])) v = std::max(v, x[j] - lp.upper[j]);
    if (v > worst) {
      worst = v;
      label = "bound " + (j < static_cast<Eigen::Index>(lp.var_names.size()) &&
                                  !lp.var_names[j].empty()
                              ? lp.var_names[j]
                              : "x" + std::to_string(j));
    }
  }
  return label;
}

LpSolution solve_lp(const LinearProgram& lp) {
  const StandardForm sf = to_standard_form(lp);
  const IpmResult core = ipm_solve(sf.a, sf.b, sf.c, sf.u);

  if (!core.optimal) {
    if (core.stuck_infeasible) {
      // elastic diagnosis: min 1't  s.t.  Ax + t+ - t- = b, t >= 0
      const Eigen::Index m = sf.a.rows(), n = sf.a.cols();
      std::vector<Eigen::Triplet<double>> trips;
      for (Eigen::Index k = 0; k < sf.a.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(sf.a, k); it; ++it)
          trips.emplace_back(it.row(), it.col(), it.value());
      for (Eigen::Index r = 0; r < m; ++r) {
        trips.emplace_back(r, n + 2 * r, 1.0);
        trips.emplace_back(r, n + 2 * r + 1, -1.0);
      }
      Eigen::SparseMatrix<double> elastic(m, n + 2 * m);
      elastic.setFromTriplets(trips.begin(), trips.end());
      Eigen::VectorXd c_e = Eigen::VectorXd::Zero(n + 2 * m);
      c_e.tail(2 * m).setOnes();
      Eigen::VectorXd u_e(n + 2 * m);
      u_e.head(n) = sf.u;
      u_e.tail(2 * m).setConstant(kInf);
      const IpmResult phase1 = ipm_solve(elastic, sf.b, c_e, u_e);
      if (phase1.objective > 1e-6 * (1.0 + sf.b.cwiseAbs().maxCoeff())) {
        const Eigen::VectorXd x_best = recover_original(sf, phase1.x.head(n), lp.n);
        const std::string row = worst_violated_row(lp, x_best);
        throw Infeasible("linear program infeasible; worst row: " + row, row,
                         max_violation(lp, x_best));
      }
      throw NonConvergence("interior point stalled on a feasible problem");
    }
    if (core.diverging_primal) throw Unbounded("linear program is unbounded below");
    throw NonConvergence("interior point failed to reach the requested tolerance");
  }

  LpSolution sol;
  sol.x = recover_original(sf, core.x, lp.n);
  sol.objective = lp.c.dot(sol.x);
  sol.primal_residual = max_violation(lp, sol.x);
  sol.duality_gap = core.rel_gap;
  sol.iterations = core.iterations;
  sol.status = "optimal";
  return sol;
}

}  // namespace koopgas
