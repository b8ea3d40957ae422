#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "second_opinion/data.hpp"
#include "second_opinion/preprocess.hpp"

namespace second_opinion {

/// Design rows in model space (after the preprocessing pipeline, without the
/// intercept column) and their targets. Targets are normally {0,1}; soft
/// targets in [0,1] are accepted by the objective and used by Platt scaling.
struct TrainingRows {
  Eigen::MatrixXd X;  // m x p
  Eigen::VectorXd y;  // m

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
};

/// theta(0) + theta(1..p) . x
double linear_score(const Eigen::VectorXd& theta, const Eigen::VectorXd& x);

// The fit objective is
//   R(theta) = (1/m) sum_j w_j l_j(theta) + (lambda/2) |theta_1..p|^2
// with l_j the logistic log-loss of row j. The intercept is not penalized.

double objective(const Eigen::VectorXd& theta, const TrainingRows& rows, const Eigen::VectorXd& weights,
                 double lambda);
Eigen::VectorXd objective_gradient(const Eigen::VectorXd& theta, const TrainingRows& rows,
                                   const Eigen::VectorXd& weights, double lambda);
Eigen::MatrixXd objective_hessian(const Eigen::VectorXd& theta, const TrainingRows& rows,
                                  const Eigen::VectorXd& weights, double lambda);

/// Unregularized, unweighted per-example gradient (sigmoid(theta.x~) - y) x~.
Eigen::VectorXd loss_gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double label);

/// theta with the intercept entry zeroed; lambda times this is the penalty gradient.
Eigen::VectorXd penalized_part(const Eigen::VectorXd& theta);

struct FitOptions {
  double lambda = 1e-4;
  double tol = 1e-8;
  int max_iter = 100;
  /// Return the last iterate instead of throwing when max_iter is hit.
  bool best_effort = false;
  /// Warm start; zeros when absent.
  std::optional<Eigen::VectorXd> start;
};

struct FitReport {
  int iterations = 0;
  double final_grad_norm = 0.0;
  bool converged = false;
};

struct FitResult {
  Eigen::VectorXd theta;
  FitReport report;
};

/// Newton's method with step halving on R. Converged when |grad R|_inf < tol.
/// Throws NumericalError on a singular Hessian or (unless best_effort) when
/// max_iter is exhausted.
FitResult fit_weighted(const TrainingRows& rows, const Eigen::VectorXd& weights, const FitOptions& options);

/// Monotone map sigmoid(a * logit + b) with a > 0.
struct PlattMap {
  double a = 1.0;
  double b = 0.0;
};

/// A fitted logistic model together with the preprocessing it was trained on.
struct LogisticModel {
  Pipeline pipeline;
  Eigen::VectorXd theta;  // intercept first
  double lambda = 1e-4;
  double tau = 0.5;
  FitReport report;
  std::optional<PlattMap> calibration;
  std::optional<ExpertId> expert;  // set for per-expert models

  /// Uncalibrated probability for a point already in model space.
  double raw_proba(const Eigen::VectorXd& design_x) const;
  /// Probability for a point in model space, after calibration if any.
  double proba_from_design(const Eigen::VectorXd& design_x) const;
};

double predict_proba(const LogisticModel& model, const Eigen::VectorXd& x_raw);
/// 1 iff predict_proba >= tau.
int predict_label(const LogisticModel& model, const Eigen::VectorXd& x_raw);

struct CalibrationResult {
  PlattMap map;
  bool applied = false;
  std::string warning;  // non-empty when calibration was skipped
};

/// Platt scaling on a holdout given in raw feature space. Uses Platt's
/// smoothed targets so a separable holdout still has a finite fit. Falls back
/// to the identity map (with a warning) for a single-class holdout or a
/// non-positive slope.
CalibrationResult calibrate_platt(const LogisticModel& model, const Eigen::MatrixXd& holdout_raw,
                                  const Eigen::VectorXd& holdout_labels);

}  // namespace second_opinion
