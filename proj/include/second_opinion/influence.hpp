#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "second_opinion/data.hpp"
#include "second_opinion/glm.hpp"

namespace second_opinion {

/// (1/m) * sum over rows labeled by `expert` of the unregularized log-loss
/// gradient at theta; m is the total row count, matching the fit objective.
/// nullopt when the expert labeled no rows.
std::optional<Eigen::VectorXd> group_gradient(const TrainingRows& rows, std::span<const int> labeler, int expert,
                                              const Eigen::VectorXd& theta);

/// Everything needed to evaluate group influence at new points for one fitted
/// pooled model: the Cholesky factor of the objective Hessian at the optimum
/// and one group gradient per expert. Immutable once built; evaluation is
/// const and safe to call from several threads.
class InfluenceEngine {
 public:
  InfluenceEngine() = default;

  /// Forms the Hessian at model.theta over `rows` (unit weights) and factors
  /// it. Throws NumericalError when it is not positive definite.
  static InfluenceEngine build(const LogisticModel& model, const TrainingRows& rows, std::span<const int> labeler,
                               std::size_t n_experts);

  /// Restores an engine from a stored factor (model artifacts).
  static InfluenceEngine from_parts(Eigen::VectorXd theta, double lambda, Eigen::MatrixXd cholesky_lower,
                                    std::vector<std::optional<Eigen::VectorXd>> group_gradients,
                                    std::vector<int> group_sizes, Eigen::Index n_train);

  /// I_h(x) = -grad_theta p(x)^T H^-1 g_h for every expert h, where
  /// p(x) = sigmoid(theta . x~). Positive means up-weighting h's
  /// assessments raises P(D=1|x). Absent experts map to nullopt.
  std::vector<std::optional<double>> influence(const Eigen::VectorXd& design_x) const;

  /// grad_theta p(x) = p (1 - p) x~.
  Eigen::VectorXd probability_gradient(const Eigen::VectorXd& design_x) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

  const Eigen::VectorXd& theta() const { return theta_; }
  double lambda() const { return lambda_; }
  const Eigen::MatrixXd& cholesky_lower() const { return lower_; }
  const std::vector<std::optional<Eigen::VectorXd>>& group_gradients() const { return groups_; }
  const std::vector<int>& group_sizes() const { return sizes_; }
  Eigen::Index n_train() const { return n_train_; }
  std::size_t n_experts() const { return groups_.size(); }

 private:
  Eigen::VectorXd theta_;
  double lambda_ = 0.0;
  Eigen::MatrixXd lower_;
  std::vector<std::optional<Eigen::VectorXd>> groups_;
  std::vector<int> sizes_;
  Eigen::Index n_train_ = 0;
};

struct InfluenceReport {
  CaseId case_id;
  std::vector<std::optional<double>> values;  // indexed by expert
  double model_proba = 0.0;
  int model_pred = 0;
};

/// Influence of every expert on the pooled model's P(D=1|x) at one raw point.
InfluenceReport prediction_influence(const LogisticModel& pooled, const InfluenceEngine& engine,
                                     const CaseId& case_id, const Eigen::VectorXd& x_raw);

struct OracleOptions {
  double epsilon = 1e-4;
  double lambda = 1e-4;
  double tol = 1e-12;
  int max_iter = 100;
};

/// Retraining check of the influence derivative: refit with the rows of
/// `expert` weighted 1 + epsilon (all others 1), warm-started at theta_hat,
/// and return (p_eps(x) - p_0(x)) / epsilon. p_0 comes from the same refit
/// procedure with epsilon = 0 so both ends share one tolerance.
double finite_difference_oracle(const TrainingRows& rows, std::span<const int> labeler,
                                const Eigen::VectorXd& design_x, int expert, const Eigen::VectorXd& theta_hat,
                                const OracleOptions& options);

/// One CSV row per (case, present expert):
/// case_id,expert_id,influence,model_proba,model_pred
void write_influence_csv(std::ostream& out, const std::vector<InfluenceReport>& reports,
                         const std::vector<ExpertId>& experts);

}  // namespace second_opinion
