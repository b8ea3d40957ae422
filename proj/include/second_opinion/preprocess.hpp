#pragma once

#include <Eigen/Dense>
#include <variant>

namespace second_opinion {

/// Column centering and scaling with the population (1/m) standard deviation.
struct Standardizer {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;  // constant columns carry 1

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

Standardizer fit_standardizer(const Eigen::MatrixXd& X);

/// Principal axes of standardized data. Rows of `components` are orthonormal,
/// ordered by non-increasing explained variance, and each row's entry of
/// largest magnitude is non-negative.
struct PcaTransform {
  Eigen::MatrixXd components;  // p x n
  Eigen::VectorXd explained_variance;
  double retained_fraction = 1.0;

  Eigen::Index n_components() const { return components.rows(); }
  Eigen::VectorXd project(const Eigen::VectorXd& z) const { return components * z; }
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& scores) const {
    return components.transpose() * scores;
  }
};

/// How many components to keep: a variance fraction in (0, 1] or an explicit
/// count. A fraction of exactly 1 keeps min(m, n) components, i.e. no reduction.
struct Retain {
  std::variant<double, int> value = 0.95;

  static Retain fraction(double f) { return Retain{f}; }
  static Retain count(int c) { return Retain{c}; }
};

PcaTransform fit_pca(const Eigen::MatrixXd& Z, const Retain& retain);

/// Standardize, then project onto the retained principal axes.
struct Pipeline {
  Standardizer standardizer;
  PcaTransform pca;

  Eigen::Index input_dim() const { return standardizer.means.size(); }
  Eigen::Index output_dim() const { return pca.n_components(); }

  /// Throws DataError on a length mismatch.
  Eigen::VectorXd transform(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd transform_rows(const Eigen::MatrixXd& X) const;
};

Pipeline fit_pipeline(const Eigen::MatrixXd& X, const Retain& retain);

}  // namespace second_opinion
