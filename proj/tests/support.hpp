// Independent reference computations for the tests. Nothing here calls the
// library's numerical code; it is written with plain loops so agreement is a
// genuine cross-check.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "second_opinion/data.hpp"
#include "second_opinion/glm.hpp"

namespace oracle {

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow.
inline double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double score(const Eigen::VectorXd& theta, const Eigen::VectorXd& x) {
  double s = theta(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) s += theta(i + 1) * x(i);
  return s;
}

// R(theta) = (1/m) sum w_j l_j + lambda/2 |theta_1..p|^2, summed term by term.
inline double objective(const Eigen::VectorXd& theta, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, double lambda) {
  const auto m = X.rows();
  double total = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double z = score(theta, X.row(j).transpose());
    total += w(j) * (log1pexp(z) - y(j) * z);
  }
  double pen = 0.0;
  for (Eigen::Index i = 1; i < theta.size(); ++i) pen += theta(i) * theta(i);
  return total / static_cast<double>(m) + 0.5 * lambda * pen;
}

inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& at, double h) {
  Eigen::VectorXd g(at.size());
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    Eigen::VectorXd a = at, b = at;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline Eigen::MatrixXd central_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& at, double h) {
  const Eigen::VectorXd f0 = f(at);
  Eigen::MatrixXd J(f0.size(), at.size());
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    Eigen::VectorXd a = at, b = at;
    a(i) += h;
    b(i) -= h;
    J.col(i) = (f(a) - f(b)) / (2 * h);
  }
  return J;
}

inline Eigen::VectorXd augmented(const Eigen::VectorXd& x) {
  Eigen::VectorXd t(x.size() + 1);
  t(0) = 1.0;
  t.tail(x.size()) = x;
  return t;
}

// Hessian at theta by explicit outer products.
inline Eigen::MatrixXd hessian(const Eigen::VectorXd& theta, const Eigen::MatrixXd& X, double lambda) {
  const auto m = X.rows();
  const auto d = theta.size();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::VectorXd t = augmented(X.row(j).transpose());
    const double p = logistic(score(theta, X.row(j).transpose()));
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) H(a, b) += p * (1 - p) * t(a) * t(b);
  }
  H /= static_cast<double>(m);
  for (Eigen::Index i = 1; i < d; ++i) H(i, i) += lambda;
  return H;
}

// -grad p(x)^T H^-1 g_h with an explicit inverse and per-expert gradients by loops.
inline std::vector<double> influence(const Eigen::VectorXd& theta, const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& y, const std::vector<int>& labeler, int k,
                                     double lambda, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd Hinv = hessian(theta, X, lambda).fullPivLu().inverse();
  const double p = logistic(score(theta, x));
  const Eigen::VectorXd dp = p * (1 - p) * augmented(x);
  std::vector<double> out(k, 0.0);
  for (int h = 0; h < k; ++h) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    for (Eigen::Index j = 0; j < X.rows(); ++j) {
      if (labeler[j] != h) continue;
      const Eigen::VectorXd t = augmented(X.row(j).transpose());
      g += (logistic(score(theta, X.row(j).transpose())) - y(j)) * t;
    }
    g /= static_cast<double>(X.rows());
    out[h] = -dp.dot(Hinv * g);
  }
  return out;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-12) {
  return (a - b).cwiseAbs().maxCoeff() / std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
}

// Random panel of k experts with one-coordinate offsets.
struct RandomPanel {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<int> labeler;
  int k = 0;
};

inline RandomPanel random_panel(std::mt19937_64& rng, int k, int p, int cases, double offset = 0.8) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd base(p);
  for (auto& b : base) b = normal(rng) * 0.7;
  std::vector<Eigen::VectorXd> coef(k, base);
  for (int h = 0; h < k; ++h) coef[h](h % p) += (h % 2 ? -offset : offset);
  RandomPanel out;
  out.k = k;
  out.X.resize(static_cast<Eigen::Index>(cases) * k, p);
  out.y.resize(out.X.rows());
  for (int c = 0; c < cases; ++c) {
    Eigen::VectorXd x(p);
    for (auto& v : x) v = normal(rng);
    for (int h = 0; h < k; ++h) {
      const Eigen::Index r = static_cast<Eigen::Index>(c) * k + h;
      out.X.row(r) = x.transpose();
      out.y(r) = unif(rng) < logistic(coef[h].dot(x)) ? 1.0 : 0.0;
      out.labeler.push_back(h);
    }
  }
  return out;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("second_opinion_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace oracle
