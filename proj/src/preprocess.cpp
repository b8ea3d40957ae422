#include "second_opinion/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "second_opinion/errors.hpp"

namespace second_opinion {

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  return (x - means).cwiseQuotient(stds);
}

Standardizer fit_standardizer(const Eigen::MatrixXd& X) {
  if (X.rows() < 2) throw DataError("standardizer needs at least 2 rows");
  Standardizer s;
  const double m = static_cast<double>(X.rows());
  s.means = X.colwise().sum().transpose() / m;
  s.stds.resize(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double var = (X.col(j).array() - s.means(j)).square().sum() / m;
    const double sd = std::sqrt(var);
    s.stds(j) = sd > 1e-12 * std::max(1.0, std::abs(s.means(j))) ? sd : 1.0;
  }
  return s;
}

PcaTransform fit_pca(const Eigen::MatrixXd& Z, const Retain& retain) {
  const Eigen::Index m = Z.rows();
  const Eigen::Index n = Z.cols();
  const Eigen::Index max_count = std::min(m, n);

  if (const double* f = std::get_if<double>(&retain.value)) {
    if (!(*f > 0.0 && *f <= 1.0)) {
      throw ConfigError("PCA retain fraction must be in (0, 1], got " + std::to_string(*f));
    }
  } else {
    const int c = std::get<int>(retain.value);
    if (c < 1 || c > max_count) {
      throw ConfigError("PCA component count must be in [1, " + std::to_string(max_count) + "], got " +
                        std::to_string(c));
    }
  }

  const Eigen::MatrixXd cov = (Z.transpose() * Z) / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");

  // Eigen orders ascending; flip to descending and clamp round-off negatives.
  Eigen::VectorXd values = eig.eigenvalues().reverse().cwiseMax(0.0);
  Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.sum();

  Eigen::Index p = 0;
  if (const double* f = std::get_if<double>(&retain.value)) {
    if (*f == 1.0) {
      p = max_count;
    } else {
      double cum = 0.0;
      while (p < n && (cum < *f * total || p == 0)) cum += values(p++);
      if (total == 0.0) p = 0;
    }
  } else {
    p = std::get<int>(retain.value);
  }

  PcaTransform t;
  t.components = vectors.leftCols(p).transpose();
  t.explained_variance = values.head(p);
  for (Eigen::Index r = 0; r < p; ++r) {
    Eigen::Index arg = 0;
    t.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (t.components(r, arg) < 0) t.components.row(r) *= -1.0;
  }
  t.retained_fraction = total > 0.0 ? t.explained_variance.sum() / total : 1.0;
  return t;
}

Eigen::VectorXd Pipeline::transform(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim()) {
    throw DataError("feature vector has length " + std::to_string(x.size()) + ", pipeline expects " +
                    std::to_string(input_dim()));
  }
  return pca.project(standardizer.apply(x));
}

Eigen::MatrixXd Pipeline::transform_rows(const Eigen::MatrixXd& X) const {
  if (X.cols() != input_dim()) {
    throw DataError("feature matrix has " + std::to_string(X.cols()) + " columns, pipeline expects " +
                    std::to_string(input_dim()));
  }
  Eigen::MatrixXd Z = (X.rowwise() - standardizer.means.transpose()).array().rowwise() /
                      standardizer.stds.transpose().array();
  return Z * pca.components.transpose();
}

Pipeline fit_pipeline(const Eigen::MatrixXd& X, const Retain& retain) {
  Pipeline pl;
  pl.standardizer = fit_standardizer(X);
  const Eigen::MatrixXd Z = (X.rowwise() - pl.standardizer.means.transpose()).array().rowwise() /
                            pl.standardizer.stds.transpose().array();
  pl.pca = fit_pca(Z, retain);
  return pl;
}

}  // namespace second_opinion
