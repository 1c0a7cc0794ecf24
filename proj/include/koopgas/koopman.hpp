#ifndef KOOPGAS_KOOPMAN_HPP
#define KOOPGAS_KOOPMAN_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "koopgas/observables.hpp"
#include "koopgas/simulate.hpp"

namespace koopgas {

struct DelayConfig {
  int dx = 3;  // state delay embeddings, >= 1
  int du = 2;  // input delay embeddings, >= 0

  void validate() const;
};

struct StabilityConfig {
  enum class Mode { PerBlock, Scaled };

  bool enabled = true;
  double epsilon = 1e-3;
  Mode mode = Mode::Scaled;

  static const char* mode_name(Mode m) { return m == Mode::PerBlock ? "per_block" : "scaled"; }
  static Mode mode_from_name(const std::string& name);
};

/// Delay-embedded linear surrogate of one pipeline in lifted space:
///   psi^t = sum_i Kx[i-1] psi^{t-i} + sum_i Ku[i] u^{t-i}
/// with psi = lift(p_out, m_out) and u = (p_in, m_in), all normalized.
struct KoopmanModel {
  std::string pipeline_id;
  std::string observable_set;
  int dx = 0;
  int du = 0;
  double dt = 0.0;             // s
  double base_pressure = 0.0;  // Pa
  double base_mfr = 0.0;       // kg/s
  std::vector<Eigen::MatrixXd> Kx;  // dx blocks, N x N
  std::vector<Eigen::MatrixXd> Ku;  // du+1 blocks, N x 2
  bool stability_enabled = false;
  double epsilon = 0.0;
  StabilityConfig::Mode stability_mode = StabilityConfig::Mode::Scaled;
  double certified_spectral_radius = 0.0;

  int dim() const { return Kx.empty() ? 0 : static_cast<int>(Kx.front().rows()); }
  double sum_max_singular_values() const;
  void validate() const;
};

/// Regression data built from snapshots: row t of Y is psi(x^t), the
/// matching row of Z stacks psi(x^{t-1})..psi(x^{t-dx}) and u^t..u^{t-du}.
struct RegressionData {
  Eigen::MatrixXd Y;
  Eigen::MatrixXd Z;
  Eigen::Index train_rows = 0;  // leading rows used for fitting
  DelayConfig delays;
  int n_obs = 0;

  // provenance carried into the fitted model
  std::string pipeline_id;
  std::string observable_id;
  double dt = 0.0;
  double base_pressure = 0.0;
  double base_mfr = 0.0;
};

RegressionData build_regression(const SnapshotSet& snapshots, const ObservableSet& obs,
                                const DelayConfig& delays, double train_fraction = 0.8);

/// Ridge-regularized least squares over the training rows; with the
/// stability constraint on, projected gradient onto
/// sum_i sigma_max(Kx_i) <= 1 - epsilon, warm-started from the
/// unconstrained solution.
KoopmanModel edmd_fit(const RegressionData& reg, const StabilityConfig& stability);

/// Block companion matrix of the state delay operators (N dx square).
Eigen::MatrixXd assemble_companion(const KoopmanModel& model);

double spectral_radius(const Eigen::MatrixXd& m);

/// Returns blocks satisfying sum_i sigma_max <= 1 - epsilon.
/// PerBlock clips each block's singular values at (1-eps)/D; Scaled
/// multiplies all blocks by (1-eps)/s when the sum s exceeds the budget.
std::vector<Eigen::MatrixXd> project_stable(std::vector<Eigen::MatrixXd> blocks, double epsilon,
                                            StabilityConfig::Mode mode);

/// Rolls the model forward. psi_history[i] = psi^{t0-1-i} (dx entries),
/// input_history[i] = u^{t0-1-i} (du entries); inputs rows are
/// u^{t0}, u^{t0+1}, ... Returns one lifted row per input row.
Eigen::MatrixXd predict(const KoopmanModel& model,
                        const std::vector<Eigen::VectorXd>& psi_history,
                        const std::vector<Eigen::Vector2d>& input_history,
                        const Eigen::MatrixXd& inputs);

/// Physical outlet series from lifted rows: columns (p_out Pa, m_out kg/s).
Eigen::MatrixXd extract_outputs(const KoopmanModel& model, const Eigen::MatrixXd& lifted);

/// One-step fit diagnostics on the train/test split of a regression.
struct FitReport {
  double train_rmse_p = 0, train_rmse_m = 0;  // Pa, kg/s
  double train_mape_p = 0, train_mape_m = 0;  // %
  double test_rmse_p = 0, test_rmse_m = 0;
  double test_mape_p = 0, test_mape_m = 0;
  double train_max_p = 0, train_max_m = 0;  // normalized, max |error|
  double test_max_p = 0, test_max_m = 0;
  double train_objective = 0;  // squared Frobenius residual on train rows
};

FitReport evaluate_fit(const KoopmanModel& model, const RegressionData& reg);

/// JSON persistence; operator entries survive a round trip bit-exactly.
void save_model(const KoopmanModel& model, const std::string& path);
KoopmanModel load_model(const std::string& path);

}  // namespace koopgas

#endif  // KOOPGAS_KOOPMAN_HPP
