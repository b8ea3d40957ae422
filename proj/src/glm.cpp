#include "second_opinion/glm.hpp"

#include <cmath>
#include <string>

#include "second_opinion/errors.hpp"
#include "second_opinion/numeric.hpp"

namespace second_opinion {
namespace {

void check_shapes(const Eigen::VectorXd& theta, const TrainingRows& rows, const Eigen::VectorXd& weights) {
  if (theta.size() != rows.dim() + 1) {
    throw DataError("theta has length " + std::to_string(theta.size()) + ", expected " +
                    std::to_string(rows.dim() + 1));
  }
  if (rows.y.size() != rows.size() || weights.size() != rows.size()) {
    throw DataError("labels/weights length does not match the number of rows");
  }
}

Eigen::VectorXd scores(const Eigen::VectorXd& theta, const TrainingRows& rows) {
  return (rows.X * theta.tail(theta.size() - 1)).array() + theta(0);
}

}  // namespace

double linear_score(const Eigen::VectorXd& theta, const Eigen::VectorXd& x) {
  if (x.size() + 1 != theta.size()) {
    throw DataError("point has length " + std::to_string(x.size()) + ", model expects " +
                    std::to_string(theta.size() - 1));
  }
  return theta(0) + theta.tail(x.size()).dot(x);
}

Eigen::VectorXd penalized_part(const Eigen::VectorXd& theta) {
  Eigen::VectorXd t = theta;
  t(0) = 0.0;
  return t;
}

double objective(const Eigen::VectorXd& theta, const TrainingRows& rows, const Eigen::VectorXd& weights,
                 double lambda) {
  check_shapes(theta, rows, weights);
  const Eigen::VectorXd z = scores(theta, rows);
  double data = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    data += weights(j) * (softplus(z(j)) - rows.y(j) * z(j));
  }
  const double penalty = 0.5 * lambda * theta.tail(theta.size() - 1).squaredNorm();
  return data / static_cast<double>(rows.size()) + penalty;
}

Eigen::VectorXd objective_gradient(const Eigen::VectorXd& theta, const TrainingRows& rows,
                                   const Eigen::VectorXd& weights, double lambda) {
  check_shapes(theta, rows, weights);
  const Eigen::VectorXd z = scores(theta, rows);
  Eigen::VectorXd r(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) r(j) = weights(j) * (sigmoid(z(j)) - rows.y(j));
  const double m = static_cast<double>(rows.size());
  Eigen::VectorXd g(theta.size());
  g(0) = r.sum() / m;
  g.tail(rows.dim()) = rows.X.transpose() * r / m;
  g += lambda * penalized_part(theta);
  return g;
}

Eigen::MatrixXd objective_hessian(const Eigen::VectorXd& theta, const TrainingRows& rows,
                                  const Eigen::VectorXd& weights, double lambda) {
  check_shapes(theta, rows, weights);
  const Eigen::VectorXd z = scores(theta, rows);
  const Eigen::Index p = rows.dim();
  const double m = static_cast<double>(rows.size());
  Eigen::VectorXd d(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double s = sigmoid(z(j));
    d(j) = weights(j) * s * (1.0 - s) / m;
  }
  Eigen::MatrixXd H(p + 1, p + 1);
  H(0, 0) = d.sum();
  const Eigen::VectorXd cross = rows.X.transpose() * d;
  H.block(1, 0, p, 1) = cross;
  H.block(0, 1, 1, p) = cross.transpose();
  H.bottomRightCorner(p, p) = rows.X.transpose() * d.asDiagonal() * rows.X;
  H.bottomRightCorner(p, p).diagonal().array() += lambda;
  H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
  return H;
}

Eigen::VectorXd loss_gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double label) {
  const double r = sigmoid(linear_score(theta, x)) - label;
  Eigen::VectorXd g(theta.size());
  g(0) = r;
  g.tail(x.size()) = r * x;
  return g;
}

FitResult fit_weighted(const TrainingRows& rows, const Eigen::VectorXd& weights, const FitOptions& options) {
  if (rows.size() < 1) throw DataError("cannot fit a model on zero rows");
  if (!(options.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (!(weights(j) > 0.0)) throw DataError("fit weights must be strictly positive");
  }

  FitResult out;
  out.theta = options.start ? *options.start : Eigen::VectorXd::Zero(rows.dim() + 1);
  double value = objective(out.theta, rows, weights, options.lambda);
  Eigen::VectorXd grad = objective_gradient(out.theta, rows, weights, options.lambda);

  int iter = 0;
  while (grad.lpNorm<Eigen::Infinity>() >= options.tol && iter < options.max_iter) {
    ++iter;
    const Eigen::MatrixXd H = objective_hessian(out.theta, rows, weights, options.lambda);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
      throw NumericalError(
          "Hessian of the fit objective is singular or indefinite; use lambda > 0 or retain fewer "
          "PCA components");
    }
    const Eigen::VectorXd step = llt.solve(-grad);

    // Step halving. The slack admits steps whose change is below round-off.
    const double slack = 1e-13 * std::max(1.0, std::abs(value));
    double t = 1.0;
    Eigen::VectorXd candidate = out.theta + step;
    double cand_value = objective(candidate, rows, weights, options.lambda);
    for (int halvings = 0; !(cand_value <= value + slack) && halvings < 60; ++halvings) {
      t *= 0.5;
      candidate = out.theta + t * step;
      cand_value = objective(candidate, rows, weights, options.lambda);
    }
    if (!(cand_value <= value + slack)) break;
    out.theta = std::move(candidate);
    value = cand_value;
    grad = objective_gradient(out.theta, rows, weights, options.lambda);
  }

  out.report.iterations = iter;
  out.report.final_grad_norm = grad.lpNorm<Eigen::Infinity>();
  out.report.converged = out.report.final_grad_norm < options.tol;
  if (!out.report.converged && !options.best_effort) {
    throw NumericalError("Newton fit did not converge after " + std::to_string(iter) +
                         " iterations (|grad|_inf = " + std::to_string(out.report.final_grad_norm) + ")");
  }
  return out;
}

double LogisticModel::raw_proba(const Eigen::VectorXd& design_x) const {
  return sigmoid(linear_score(theta, design_x));
}

double LogisticModel::proba_from_design(const Eigen::VectorXd& design_x) const {
  const double score = linear_score(theta, design_x);
  if (calibration) return sigmoid(calibration->a * score + calibration->b);
  return sigmoid(score);
}

double predict_proba(const LogisticModel& model, const Eigen::VectorXd& x_raw) {
  return model.proba_from_design(model.pipeline.transform(x_raw));
}

int predict_label(const LogisticModel& model, const Eigen::VectorXd& x_raw) {
  return predict_proba(model, x_raw) >= model.tau ? 1 : 0;
}

CalibrationResult calibrate_platt(const LogisticModel& model, const Eigen::MatrixXd& holdout_raw,
                                  const Eigen::VectorXd& holdout_labels) {
  CalibrationResult out;
  const Eigen::Index m = holdout_raw.rows();
  if (m == 0 || holdout_labels.size() != m) {
    out.warning = "calibration skipped: empty holdout";
    return out;
  }
  const double n_pos = holdout_labels.sum();
  const double n_neg = static_cast<double>(m) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) {
    out.warning = "calibration skipped: holdout has a single class";
    return out;
  }

  TrainingRows rows;
  rows.X.resize(m, 1);
  rows.y.resize(m);
  const Eigen::MatrixXd design = model.pipeline.transform_rows(holdout_raw);
  const double hi = (n_pos + 1.0) / (n_pos + 2.0);
  const double lo = 1.0 / (n_neg + 2.0);
  for (Eigen::Index j = 0; j < m; ++j) {
    rows.X(j, 0) = linear_score(model.theta, design.row(j).transpose());
    rows.y(j) = holdout_labels(j) > 0.5 ? hi : lo;
  }
  FitOptions opts;
  opts.lambda = 0.0;
  opts.tol = 1e-10;
  const FitResult fit = fit_weighted(rows, Eigen::VectorXd::Ones(m), opts);
  if (!(fit.theta(1) > 0.0)) {
    out.warning = "calibration skipped: fitted slope is not positive";
    return out;
  }
  out.map = {fit.theta(1), fit.theta(0)};
  out.applied = true;
  return out;
}

}  // namespace second_opinion
