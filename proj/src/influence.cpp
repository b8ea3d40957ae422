#include "second_opinion/influence.hpp"

#include <ostream>
#include <string>

#include "csv.hpp"
#include "second_opinion/errors.hpp"
#include "second_opinion/numeric.hpp"

namespace second_opinion {

std::optional<Eigen::VectorXd> group_gradient(const TrainingRows& rows, std::span<const int> labeler, int expert,
                                              const Eigen::VectorXd& theta) {
  if (static_cast<Eigen::Index>(labeler.size()) != rows.size()) {
    throw DataError("labeler vector length does not match the number of training rows");
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
  bool any = false;
  for (Eigen::Index j = 0; j < rows.size(); ++j) {
    if (labeler[j] != expert) continue;
    g += loss_gradient(theta, rows.X.row(j).transpose(), rows.y(j));
    any = true;
  }
  if (!any) return std::nullopt;
  return g / static_cast<double>(rows.size());
}

InfluenceEngine InfluenceEngine::build(const LogisticModel& model, const TrainingRows& rows,
                                       std::span<const int> labeler, std::size_t n_experts) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(rows.size());
  const Eigen::MatrixXd H = objective_hessian(model.theta, rows, ones, model.lambda);
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw NumericalError(
        "Hessian of the pooled model is not positive definite; influence needs lambda > 0 or a "
        "stronger PCA reduction");
  }
  std::vector<std::optional<Eigen::VectorXd>> groups;
  std::vector<int> sizes(n_experts, 0);
  for (int a : labeler) {
    if (a < 0 || a >= static_cast<int>(n_experts)) throw DataError("labeler names unknown expert");
    ++sizes[a];
  }
  for (std::size_t h = 0; h < n_experts; ++h) {
    groups.push_back(group_gradient(rows, labeler, static_cast<int>(h), model.theta));
  }
  return from_parts(model.theta, model.lambda, llt.matrixL(), std::move(groups), std::move(sizes), rows.size());
}

InfluenceEngine InfluenceEngine::from_parts(Eigen::VectorXd theta, double lambda, Eigen::MatrixXd cholesky_lower,
                                            std::vector<std::optional<Eigen::VectorXd>> group_gradients,
                                            std::vector<int> group_sizes, Eigen::Index n_train) {
  if (cholesky_lower.rows() != theta.size() || cholesky_lower.cols() != theta.size()) {
    throw DataError("Cholesky factor shape does not match theta");
  }
  InfluenceEngine e;
  e.theta_ = std::move(theta);
  e.lambda_ = lambda;
  e.lower_ = cholesky_lower.triangularView<Eigen::Lower>();
  e.groups_ = std::move(group_gradients);
  e.sizes_ = std::move(group_sizes);
  e.n_train_ = n_train;
  return e;
}

Eigen::VectorXd InfluenceEngine::probability_gradient(const Eigen::VectorXd& design_x) const {
  const double p = sigmoid(linear_score(theta_, design_x));
  Eigen::VectorXd g(theta_.size());
  g(0) = 1.0;
  g.tail(design_x.size()) = design_x;
  return p * (1.0 - p) * g;
}

Eigen::VectorXd InfluenceEngine::solve(const Eigen::VectorXd& rhs) const {
  const Eigen::VectorXd half = lower_.triangularView<Eigen::Lower>().solve(rhs);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(half);
}

std::vector<std::optional<double>> InfluenceEngine::influence(const Eigen::VectorXd& design_x) const {
  const Eigen::VectorXd v = solve(probability_gradient(design_x));
  std::vector<std::optional<double>> out(groups_.size());
  for (std::size_t h = 0; h < groups_.size(); ++h) {
    if (groups_[h]) out[h] = -v.dot(*groups_[h]);
  }
  return out;
}

InfluenceReport prediction_influence(const LogisticModel& pooled, const InfluenceEngine& engine,
                                     const CaseId& case_id, const Eigen::VectorXd& x_raw) {
  const Eigen::VectorXd design = pooled.pipeline.transform(x_raw);
  InfluenceReport r;
  r.case_id = case_id;
  r.values = engine.influence(design);
  r.model_proba = pooled.proba_from_design(design);
  r.model_pred = r.model_proba >= pooled.tau ? 1 : 0;
  return r;
}

double finite_difference_oracle(const TrainingRows& rows, std::span<const int> labeler,
                                const Eigen::VectorXd& design_x, int expert, const Eigen::VectorXd& theta_hat,
                                const OracleOptions& options) {
  if (static_cast<Eigen::Index>(labeler.size()) != rows.size()) {
    throw DataError("labeler vector length does not match the number of training rows");
  }
  if (options.epsilon == 0.0) throw ConfigError("oracle epsilon must be non-zero");
  FitOptions fit;
  fit.lambda = options.lambda;
  fit.tol = options.tol;
  fit.max_iter = options.max_iter;
  fit.start = theta_hat;

  const Eigen::VectorXd base_w = Eigen::VectorXd::Ones(rows.size());
  Eigen::VectorXd up_w = base_w;
  bool any = false;
  for (Eigen::Index j = 0; j < rows.size(); ++j) {
    if (labeler[j] == expert) {
      up_w(j) = 1.0 + options.epsilon;
      any = true;
    }
  }
  if (!any) throw DataError("oracle: expert " + std::to_string(expert) + " has no training rows");

  const FitResult base = fit_weighted(rows, base_w, fit);
  const FitResult up = fit_weighted(rows, up_w, fit);
  const double p0 = sigmoid(linear_score(base.theta, design_x));
  const double pe = sigmoid(linear_score(up.theta, design_x));
  return (pe - p0) / options.epsilon;
}

void write_influence_csv(std::ostream& out, const std::vector<InfluenceReport>& reports,
                         const std::vector<ExpertId>& experts) {
  out << "case_id,expert_id,influence,model_proba,model_pred\n";
  for (const auto& r : reports) {
    for (std::size_t h = 0; h < r.values.size(); ++h) {
      if (!r.values[h]) continue;
      out << csv::quote_if_needed(r.case_id) << ',' << csv::quote_if_needed(experts.at(h).display_name) << ','
          << csv::exact(*r.values[h]) << ',' << csv::fixed6(r.model_proba) << ',' << r.model_pred << '\n';
    }
  }
}

}  // namespace second_opinion
