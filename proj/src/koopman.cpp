#include "koopgas/koopman.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "koopgas/errors.hpp"

namespace koopgas {

namespace {

constexpr double kRidge = 1e-10;
constexpr int kMaxAdmmIterations = 30000;
constexpr int kAdmmCheckEvery = 10;
constexpr double kAdmmStallTol = 1e-8;   // relative improvement treated as stalled
constexpr double kAdmmSettleTol = 1e-5;  // acceptable trailing improvement at the cap

Eigen::MatrixXd flatten_blocks(const std::vector<Eigen::MatrixXd>& kx,
                               const std::vector<Eigen::MatrixXd>& ku) {
  const Eigen::Index n = kx.front().rows();
  Eigen::Index width = 0;
  for (const auto& b : kx) width += b.cols();
  for (const auto& b : ku) width += b.cols();
  Eigen::MatrixXd w(n, width);
  Eigen::Index off = 0;
  for (const auto& b : kx) { w.middleCols(off, b.cols()) = b; off += b.cols(); }
  for (const auto& b : ku) { w.middleCols(off, b.cols()) = b; off += b.cols(); }
  return w;
}

double sum_sigma_max(const std::vector<Eigen::MatrixXd>& blocks) {
  double s = 0.0;
  for (const auto& b : blocks)
    s += Eigen::JacobiSVD<Eigen::MatrixXd>(b).singularValues()[0];
  return s;
}

std::vector<Eigen::MatrixXd> kx_blocks_of(const Eigen::MatrixXd& w, int n, int dx) {
  std::vector<Eigen::MatrixXd> kx(dx);
  for (int i = 0; i < dx; ++i) kx[i] = w.middleCols(i * n, n);
  return kx;
}

std::vector<Eigen::MatrixXd> ku_blocks_of(const Eigen::MatrixXd& w, int n, int dx, int du) {
  std::vector<Eigen::MatrixXd> ku(du + 1);
  for (int i = 0; i <= du; ++i) ku[i] = w.middleCols(dx * n + 2 * i, 2);
  return ku;
}

// Exact Frobenius projection onto { sum_i sigma_max(K_i) <= budget }:
// a water-filling split of the budget into per-block spectral caps.
std::vector<Eigen::MatrixXd> project_sum_spectral(std::vector<Eigen::MatrixXd> blocks,
                                                  double budget) {
  std::vector<Eigen::JacobiSVD<Eigen::MatrixXd>> svds;
  svds.reserve(blocks.size());
  double total = 0.0;
  for (const auto& b : blocks) {
    svds.emplace_back(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
    total += svds.back().singularValues()[0];
  }
  if (total <= budget) return blocks;

  // cap for block i when the marginal clipped mass equals mu:
  // sum_j (sigma_ij - r)_+ = mu, r >= 0
  auto cap_of = [&](size_t i, double mu) {
    const auto& s = svds[i].singularValues();
    double r = s[0] - mu;
    for (int m = 1;; ++m) {
      double sum_top = 0.0;
      for (int j = 0; j < m; ++j) sum_top += s[j];
      r = (sum_top - mu) / m;
      if (m < s.size() && r < s[m]) continue;
      break;
    }
    return std::max(0.0, r);
  };

  double lo = 0.0, hi = 0.0;
  for (size_t i = 0; i < blocks.size(); ++i) hi = std::max(hi, svds[i].singularValues().sum());
  for (int it = 0; it < 200; ++it) {
    const double mu = 0.5 * (lo + hi);
    double sum = 0.0;
    for (size_t i = 0; i < blocks.size(); ++i) sum += cap_of(i, mu);
    (sum > budget ? lo : hi) = mu;
  }
  const double mu = 0.5 * (lo + hi);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const double r = cap_of(i, mu);
    Eigen::VectorXd s = svds[i].singularValues().cwiseMin(r);
    blocks[i] = svds[i].matrixU() * s.asDiagonal() * svds[i].matrixV().transpose();
  }
  return blocks;
}

}  // namespace

void DelayConfig::validate() const {
  if (dx < 1) throw SpecError("delay config: dx must be >= 1");
  if (du < 0) throw SpecError("delay config: du must be >= 0");
}

StabilityConfig::Mode StabilityConfig::mode_from_name(const std::string& name) {
  if (name == "per_block") return Mode::PerBlock;
  if (name == "scaled") return Mode::Scaled;
  throw SpecError("unknown stability mode '" + name + "'");
}

double KoopmanModel::sum_max_singular_values() const { return sum_sigma_max(Kx); }

void KoopmanModel::validate() const {
  if (dx < 1 || Kx.size() != static_cast<size_t>(dx))
    throw DimensionMismatch("model Kx block count disagrees with dx");
  if (Ku.size() != static_cast<size_t>(du + 1))
    throw DimensionMismatch("model Ku block count disagrees with du");
  const Eigen::Index n = Kx.front().rows();
  for (const auto& b : Kx)
    if (b.rows() != n || b.cols() != n) throw DimensionMismatch("Kx block shape mismatch");
  for (const auto& b : Ku)
    if (b.rows() != n || b.cols() != 2) throw DimensionMismatch("Ku block shape mismatch");
  if (!(dt > 0.0) || !(base_pressure > 0.0) || !(base_mfr > 0.0))
    throw SpecError("model metadata invalid");
}

RegressionData build_regression(const SnapshotSet& snapshots, const ObservableSet& obs,
                                const DelayConfig& delays, double train_fraction) {
  snapshots.validate();
  delays.validate();
  obs.check_regularity();

  const Eigen::Index count = snapshots.count();
  const int n = obs.dim();
  const Eigen::Index lead = std::max(delays.dx, delays.du);
  const Eigen::Index rows = count - lead;
  if (rows < 1)
    throw InsufficientData("need more snapshots than the delay horizon");

  const Eigen::Index width = delays.dx * n + 2 * (delays.du + 1);
  RegressionData reg;
  reg.Y.resize(rows, n);
  reg.Z.resize(rows, width);
  reg.delays = delays;
  reg.n_obs = n;
  reg.pipeline_id = snapshots.pipeline_id;
  reg.observable_id = obs.id;
  reg.dt = snapshots.dt;
  reg.base_pressure = snapshots.base_pressure;
  reg.base_mfr = snapshots.base_mfr;

  // lift every snapshot once
  Eigen::MatrixXd lifted(count, n);
  for (Eigen::Index t = 0; t < count; ++t)
    lifted.row(t) = obs.lift(snapshots.x(t, 0), snapshots.x(t, 1)).transpose();

  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index t = lead + r;
    reg.Y.row(r) = lifted.row(t);
    Eigen::Index off = 0;
    for (int i = 1; i <= delays.dx; ++i, off += n) reg.Z.block(r, off, 1, n) = lifted.row(t - i);
    for (int i = 0; i <= delays.du; ++i, off += 2) reg.Z.block(r, off, 1, 2) = snapshots.u.row(t - i);
  }
  reg.train_rows = static_cast<Eigen::Index>(std::floor(train_fraction * rows));
  reg.train_rows = std::clamp<Eigen::Index>(reg.train_rows, 1, rows);
  return reg;
}

std::vector<Eigen::MatrixXd> project_stable(std::vector<Eigen::MatrixXd> blocks, double epsilon,
                                            StabilityConfig::Mode mode) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw SpecError("epsilon must lie in (0, 1)");
  const double budget = 1.0 - epsilon;
  if (mode == StabilityConfig::Mode::PerBlock) {
    const double cap = budget / static_cast<double>(blocks.size());
    for (auto& b : blocks) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
      if (svd.singularValues()[0] <= cap) continue;
      Eigen::VectorXd s = svd.singularValues().cwiseMin(cap);
      b = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    }
  } else {
    const double s = sum_sigma_max(blocks);
    if (s > budget) {
      const double factor = budget / s;
      for (auto& b : blocks) b *= factor;
    }
  }
  return blocks;
}

KoopmanModel edmd_fit(const RegressionData& reg, const StabilityConfig& stability) {
  const int n = reg.n_obs;
  const int dx = reg.delays.dx;
  const int du = reg.delays.du;
  const Eigen::Index width = reg.Z.cols();

  const Eigen::MatrixXd zt = reg.Z.topRows(reg.train_rows);
  const Eigen::MatrixXd yt = reg.Y.topRows(reg.train_rows);
  Eigen::MatrixXd gram = zt.transpose() * zt;
  gram.diagonal().array() += kRidge;
  const Eigen::MatrixXd zty = zt.transpose() * yt;  // width x n

  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success)
    throw RankDeficient("regressor Gram matrix is not positive definite after ridge");

  Eigen::MatrixXd w = ldlt.solve(zty).transpose();  // n x width

  const double budget = 1.0 - stability.epsilon;
  if (stability.enabled &&
      sum_sigma_max(kx_blocks_of(w, n, dx)) > budget + 1e-12) {
    // ADMM on min 0.5||Y - Z W'||^2 + ridge/2 ||W||^2 with the Kx blocks
    // constrained: scaled mode optimizes over the full budget set
    // sum_i sigma_max <= 1-eps, per_block over the uniform per-block caps.
    auto project = [&](std::vector<Eigen::MatrixXd> blocks) {
      if (stability.mode == StabilityConfig::Mode::Scaled)
        return project_sum_spectral(std::move(blocks), budget);
      return project_stable(std::move(blocks), stability.epsilon, stability.mode);
    };

    const Eigen::Index kx_width = static_cast<Eigen::Index>(n) * dx;
    const double penalty = 0.01 * gram.trace() / static_cast<double>(width);
    Eigen::MatrixXd gram_aug = gram;
    gram_aug.diagonal().head(kx_width).array() += penalty;
    Eigen::LDLT<Eigen::MatrixXd> fac(gram_aug);

    auto objective = [&](const Eigen::MatrixXd& cand) {
      return 0.5 * (yt - zt * cand.transpose()).squaredNorm() +
             0.5 * kRidge * cand.squaredNorm();
    };

    // stop on primal feasibility plus an objective stall; the Gram's flat
    // directions keep the dual residual alive long after the objective has
    // settled, so the dual residual is not part of the test. If the cap is
    // reached while the trailing improvement is already below the settle
    // tolerance, accept the best feasible point.
    std::vector<Eigen::MatrixXd> split = project(kx_blocks_of(w, n, dx));
    std::vector<Eigen::MatrixXd> dual(dx, Eigen::MatrixXd::Zero(n, n));
    std::vector<Eigen::MatrixXd> best = split;
    double f_best = std::numeric_limits<double>::infinity();
    double trailing_drop = std::numeric_limits<double>::infinity();
    double f_window = std::numeric_limits<double>::infinity();
    double primal = 0.0, scale = 1.0;
    int stalled_checks = 0;
    bool converged = false;
    for (int it = 0; it < kMaxAdmmIterations; ++it) {
      Eigen::MatrixXd rhs = zty;
      for (int i = 0; i < dx; ++i)
        rhs.middleRows(i * n, n) += penalty * (split[i] - dual[i]).transpose();
      w = fac.solve(rhs).transpose();

      auto kx = kx_blocks_of(w, n, dx);
      std::vector<Eigen::MatrixXd> candidate(dx);
      for (int i = 0; i < dx; ++i) candidate[i] = kx[i] + dual[i];
      candidate = project(std::move(candidate));

      primal = 0.0;
      scale = 1.0;
      for (int i = 0; i < dx; ++i) {
        primal = std::max(primal, (kx[i] - candidate[i]).norm());
        scale = std::max({scale, kx[i].norm(), candidate[i].norm()});
        dual[i] += kx[i] - candidate[i];
      }
      split = std::move(candidate);

      if ((it + 1) % kAdmmCheckEvery != 0) continue;
      Eigen::MatrixXd feasible = w;
      for (int i = 0; i < dx; ++i) feasible.middleCols(i * n, n) = split[i];
      const double f = objective(feasible);
      if (f < f_best) { f_best = f; best = split; }
      trailing_drop = (f_window - f) / std::max(1e-300, f);
      if (trailing_drop < kAdmmStallTol)
        ++stalled_checks;
      else
        stalled_checks = 0;
      f_window = f;
      if (primal <= 1e-8 * scale && stalled_checks >= 30) {
        converged = true;
        break;
      }
    }
    if (!converged && !(primal <= 1e-8 * scale && trailing_drop < kAdmmSettleTol))
      throw NonConvergence("stability-constrained fit exhausted its iteration budget");

    // fix the Kx blocks at the best feasible point and re-solve the input
    // operators exactly
    for (int i = 0; i < dx; ++i) w.middleCols(i * n, n) = best[i];
    const Eigen::MatrixXd zu = zt.rightCols(width - kx_width);
    const Eigen::MatrixXd zx = zt.leftCols(kx_width);
    Eigen::MatrixXd gram_u = zu.transpose() * zu;
    gram_u.diagonal().array() += kRidge;
    const Eigen::MatrixXd target = yt - zx * w.leftCols(kx_width).transpose();
    w.rightCols(width - kx_width) =
        gram_u.ldlt().solve(zu.transpose() * target).transpose();
  }

  KoopmanModel model;
  model.pipeline_id = reg.pipeline_id;
  model.observable_set = reg.observable_id;
  model.dx = dx;
  model.du = du;
  model.dt = reg.dt;
  model.base_pressure = reg.base_pressure;
  model.base_mfr = reg.base_mfr;
  model.Kx = kx_blocks_of(w, n, dx);
  model.Ku = ku_blocks_of(w, n, dx, du);
  model.stability_enabled = stability.enabled;
  model.epsilon = stability.enabled ? stability.epsilon : 0.0;
  model.stability_mode = stability.mode;
  model.certified_spectral_radius = spectral_radius(assemble_companion(model));
  if (stability.enabled && model.certified_spectral_radius >= 1.0)
    throw NonConvergence("stability certificate failed: spectral radius >= 1");
  return model;
}

Eigen::MatrixXd assemble_companion(const KoopmanModel& model) {
  model.validate();
  const int n = model.dim();
  const int dx = model.dx;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n * dx, n * dx);
  for (int i = 0; i < dx; ++i) a.block(0, i * n, n, n) = model.Kx[i];
  for (int i = 1; i < dx; ++i) a.block(i * n, (i - 1) * n, n, n).setIdentity();
  return a;
}

double spectral_radius(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("spectral_radius needs a square matrix");
  if (m.rows() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

Eigen::MatrixXd predict(const KoopmanModel& model,
                        const std::vector<Eigen::VectorXd>& psi_history,
                        const std::vector<Eigen::Vector2d>& input_history,
                        const Eigen::MatrixXd& inputs) {
  model.validate();
  const int n = model.dim();
  if (psi_history.size() != static_cast<size_t>(model.dx))
    throw DimensionMismatch("psi history must hold dx entries");
  if (input_history.size() != static_cast<size_t>(model.du))
    throw DimensionMismatch("input history must hold du entries");
  if (inputs.cols() != 2) throw DimensionMismatch("inputs must have 2 columns");
  for (const auto& h : psi_history)
    if (h.size() != n) throw DimensionMismatch("psi history entry has wrong dimension");

  const Eigen::Index steps = inputs.rows();
  Eigen::MatrixXd lifted(steps, n);

  // rolling buffers, most recent first
  std::vector<Eigen::VectorXd> psi(psi_history);
  std::vector<Eigen::Vector2d> u_hist(input_history);

  for (Eigen::Index t = 0; t < steps; ++t) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < model.dx; ++i) next += model.Kx[i] * psi[i];
    next += model.Ku[0] * inputs.row(t).transpose();
    for (int i = 1; i <= model.du; ++i) {
      if (static_cast<int>(t) - i >= 0)
        next += model.Ku[i] * inputs.row(t - i).transpose();
      else
        next += model.Ku[i] * u_hist[i - 1 - t];
    }
    lifted.row(t) = next.transpose();
    for (int i = model.dx - 1; i > 0; --i) psi[i] = psi[i - 1];
    if (model.dx > 0) psi[0] = next;
  }
  return lifted;
}

Eigen::MatrixXd extract_outputs(const KoopmanModel& model, const Eigen::MatrixXd& lifted) {
  // lifted states hold per-unit deviations from the base values
  Eigen::MatrixXd out(lifted.rows(), 2);
  out.col(0) = (lifted.col(0).array() + 1.0) * model.base_pressure;
  out.col(1) = (lifted.col(1).array() + 1.0) * model.base_mfr;
  return out;
}

FitReport evaluate_fit(const KoopmanModel& model, const RegressionData& reg) {
  const Eigen::MatrixXd w = flatten_blocks(model.Kx, model.Ku);
  const Eigen::MatrixXd pred = reg.Z * w.transpose();
  const Eigen::MatrixXd err = pred - reg.Y;

  // errors live in deviation per-unit; MAPE is taken against the physical
  // reference base*(1 + deviation)
  auto section = [&](Eigen::Index begin, Eigen::Index rows, double& rmse_p, double& rmse_m,
                     double& mape_p, double& mape_m, double& max_p, double& max_m) {
    const auto ep = err.col(0).segment(begin, rows);
    const auto em = err.col(1).segment(begin, rows);
    rmse_p = std::sqrt(ep.squaredNorm() / rows) * model.base_pressure;
    rmse_m = std::sqrt(em.squaredNorm() / rows) * model.base_mfr;
    max_p = ep.cwiseAbs().maxCoeff();
    max_m = em.cwiseAbs().maxCoeff();
    double sp = 0, sm = 0;
    Eigen::Index np = 0, nm = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double refp = 1.0 + reg.Y(begin + r, 0), refm = 1.0 + reg.Y(begin + r, 1);
      if (std::abs(refp) > 1e-9) { sp += std::abs(ep[r] / refp); ++np; }
      if (std::abs(refm) > 1e-9) { sm += std::abs(em[r] / refm); ++nm; }
    }
    mape_p = np ? 100.0 * sp / np : 0.0;
    mape_m = nm ? 100.0 * sm / nm : 0.0;
  };

  FitReport report;
  section(0, reg.train_rows, report.train_rmse_p, report.train_rmse_m, report.train_mape_p,
          report.train_mape_m, report.train_max_p, report.train_max_m);
  const Eigen::Index test_rows = reg.Y.rows() - reg.train_rows;
  if (test_rows > 0)
    section(reg.train_rows, test_rows, report.test_rmse_p, report.test_rmse_m,
            report.test_mape_p, report.test_mape_m, report.test_max_p, report.test_max_m);
  report.train_objective = err.topRows(reg.train_rows).squaredNorm();
  return report;
}

void save_model(const KoopmanModel& model, const std::string& path) {
  model.validate();
  nlohmann::json j;
  j["version"] = 1;
  j["pipeline_id"] = model.pipeline_id;
  j["observable_set"] = model.observable_set;
  j["D_x"] = model.dx;
  j["D_u"] = model.du;
  j["dt_seconds"] = model.dt;
  j["base_pressure"] = model.base_pressure;
  j["base_mfr"] = model.base_mfr;
  auto block_list = [](const std::vector<Eigen::MatrixXd>& blocks) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : blocks) {
      nlohmann::json flat = nlohmann::json::array();
      for (Eigen::Index r = 0; r < b.rows(); ++r)
        for (Eigen::Index c = 0; c < b.cols(); ++c) flat.push_back(b(r, c));
      arr.push_back(std::move(flat));
    }
    return arr;
  };
  j["Kx"] = block_list(model.Kx);
  j["Ku"] = block_list(model.Ku);
  j["stability"] = {{"enabled", model.stability_enabled},
                    {"epsilon", model.epsilon},
                    {"mode", StabilityConfig::mode_name(model.stability_mode)},
                    {"certified_spectral_radius", model.certified_spectral_radius}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

KoopmanModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, true);

  if (!j.contains("version")) throw SchemaMismatch("model file lacks 'version'");
  const int version = j["version"].get<int>();
  if (version != 1)
    throw VersionError("model file version " + std::to_string(version) + ", expected 1");
  for (const char* field : {"pipeline_id", "observable_set", "D_x", "D_u", "dt_seconds",
                            "base_pressure", "base_mfr", "Kx", "Ku", "stability"})
    if (!j.contains(field)) throw SchemaMismatch(std::string("model file lacks '") + field + "'");

  KoopmanModel model;
  model.pipeline_id = j["pipeline_id"].get<std::string>();
  model.observable_set = j["observable_set"].get<std::string>();
  model.dx = j["D_x"].get<int>();
  model.du = j["D_u"].get<int>();
  model.dt = j["dt_seconds"].get<double>();
  model.base_pressure = j["base_pressure"].get<double>();
  model.base_mfr = j["base_mfr"].get<double>();

  const int n = ObservableSet::by_name(model.observable_set).dim();
  auto read_blocks = [&](const nlohmann::json& arr, int rows, int cols) {
    std::vector<Eigen::MatrixXd> blocks;
    for (const auto& flat : arr) {
      if (static_cast<int>(flat.size()) != rows * cols)
        throw SchemaMismatch("operator block has wrong entry count");
      Eigen::MatrixXd b(rows, cols);
      int i = 0;
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) b(r, c) = flat[i++].get<double>();
      blocks.push_back(std::move(b));
    }
    return blocks;
  };
  model.Kx = read_blocks(j["Kx"], n, n);
  model.Ku = read_blocks(j["Ku"], n, 2);

  const auto& st = j["stability"];
  model.stability_enabled = st.at("enabled").get<bool>();
  model.epsilon = st.at("epsilon").get<double>();
  model.stability_mode = StabilityConfig::mode_from_name(st.at("mode").get<std::string>());
  model.certified_spectral_radius = st.at("certified_spectral_radius").get<double>();
  model.validate();
  return model;
}

}  // namespace koopgas
