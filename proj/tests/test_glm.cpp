#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "second_opinion/artifact.hpp"
#include "second_opinion/errors.hpp"
#include "second_opinion/glm.hpp"
#include "support.hpp"

using namespace second_opinion;

namespace {

Pipeline identity_pipeline(Eigen::Index n) {
  Pipeline p;
  p.standardizer.means = Eigen::VectorXd::Zero(n);
  p.standardizer.stds = Eigen::VectorXd::Ones(n);
  p.pca.components = Eigen::MatrixXd::Identity(n, n);
  p.pca.explained_variance = Eigen::VectorXd::Ones(n);
  return p;
}

TrainingRows random_rows(std::mt19937_64& rng, int m, int p) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TrainingRows rows{Eigen::MatrixXd(m, p), Eigen::VectorXd(m)};
  Eigen::VectorXd beta(p);
  for (auto& b : beta) b = normal(rng);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < p; ++i) rows.X(j, i) = normal(rng);
    rows.y(j) = unif(rng) < oracle::logistic(rows.X.row(j).dot(beta)) ? 1.0 : 0.0;
  }
  return rows;
}

Eigen::VectorXd random_weights(std::mt19937_64& rng, int m) {
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  Eigen::VectorXd w(m);
  for (auto& v : w) v = unif(rng);
  return w;
}

}  // namespace

TEST_CASE("symmetric labels at the origin give intercept zero") {
  TrainingRows rows{Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd(2)};
  rows.y << 0, 1;
  FitOptions opt;
  opt.lambda = 0.0;
  const auto fit = fit_weighted(rows, Eigen::VectorXd::Ones(2), opt);
  CHECK(std::abs(fit.theta(0)) < 1e-12);
  CHECK(oracle::logistic(fit.theta(0)) == doctest::Approx(0.5));
}

TEST_CASE("separable data with ridge has a finite stationary optimum") {
  TrainingRows rows{Eigen::MatrixXd(6, 1), Eigen::VectorXd(6)};
  rows.X << -3, -2, -1, 1, 2, 3;
  rows.y << 0, 0, 0, 1, 1, 1;
  FitOptions opt;
  opt.lambda = 0.1;
  const auto fit = fit_weighted(rows, Eigen::VectorXd::Ones(6), opt);
  CHECK(fit.theta.allFinite());
  CHECK(fit.report.converged);
  CHECK(oracle::central_gradient(
            [&](const Eigen::VectorXd& t) { return oracle::objective(t, rows.X, rows.y, Eigen::VectorXd::Ones(6), 0.1); },
            fit.theta, 1e-6)
            .cwiseAbs()
            .maxCoeff() < 1e-7);
  CHECK(objective_gradient(fit.theta, rows, Eigen::VectorXd::Ones(6), 0.1).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("exhausting max_iter is an error unless best effort") {
  TrainingRows rows{Eigen::MatrixXd(4, 1), Eigen::VectorXd(4)};
  rows.X << -2, -1, 1, 2;
  rows.y << 0, 1, 0, 1;
  FitOptions opt;
  opt.lambda = 0.0;
  opt.max_iter = 1;
  CHECK_THROWS_AS(fit_weighted(rows, Eigen::VectorXd::Ones(4), opt), NumericalError);
  opt.best_effort = true;
  CHECK_FALSE(fit_weighted(rows, Eigen::VectorXd::Ones(4), opt).report.converged);
}

TEST_CASE("collinear design without ridge is a numerical error") {
  std::mt19937_64 rng(1);
  TrainingRows rows = random_rows(rng, 40, 2);
  rows.X.col(1) = rows.X.col(0);
  FitOptions opt;
  opt.lambda = 0.0;
  try {
    fit_weighted(rows, Eigen::VectorXd::Ones(40), opt);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("lambda") != std::string::npos);
  }
}

TEST_CASE("uniform weight doubling with lambda zero leaves the optimum unchanged") {
  std::mt19937_64 rng(2);
  const TrainingRows rows = random_rows(rng, 60, 3);
  FitOptions opt;
  opt.lambda = 0.0;
  const auto a = fit_weighted(rows, Eigen::VectorXd::Ones(60), opt);
  const auto b = fit_weighted(rows, Eigen::VectorXd::Constant(60, 2.0), opt);
  CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("objective, gradient and Hessian agree with independent references") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int ds = 0; ds < 5; ++ds) {
    const int m = 20 + 15 * ds, p = 1 + ds;
    const TrainingRows rows = random_rows(rng, m, p);
    const Eigen::VectorXd w = random_weights(rng, m);
    const double lambda = ds % 2 ? 0.0 : 0.05;
    auto R = [&](const Eigen::VectorXd& t) { return oracle::objective(t, rows.X, rows.y, w, lambda); };
    auto G = [&](const Eigen::VectorXd& t) { return objective_gradient(t, rows, w, lambda); };
    for (int pt = 0; pt < 10; ++pt) {
      Eigen::VectorXd theta(p + 1);
      for (auto& v : theta) v = normal(rng);
      CHECK(oracle::rel_err(objective(theta, rows, w, lambda), R(theta)) < 1e-12);
      CHECK(oracle::rel_err(G(theta), oracle::central_gradient(R, theta, 1e-5)) < 1e-5);
      CHECK(oracle::rel_err(objective_hessian(theta, rows, w, lambda), oracle::central_jacobian(G, theta, 1e-5)) <
            1e-5);
    }
  }
}

TEST_CASE("per-example loss gradient matches central differences") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x(3), theta(4);
    for (auto& v : x) v = normal(rng);
    for (auto& v : theta) v = normal(rng);
    const double label = t % 2;
    auto loss = [&](const Eigen::VectorXd& th) {
      const double z = oracle::score(th, x);
      return oracle::log1pexp(z) - label * z;
    };
    CHECK(oracle::rel_err(loss_gradient(theta, x, label), oracle::central_gradient(loss, theta, 1e-5)) < 1e-6);
  }
  // A perfectly predicted soft target has zero gradient.
  Eigen::VectorXd theta(2);
  theta << 0.3, -0.7;
  Eigen::VectorXd x(1);
  x << 0.5;
  CHECK(loss_gradient(theta, x, oracle::logistic(0.3 - 0.35)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("Hessian structure") {
  TrainingRows rows{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1)};
  const Eigen::MatrixXd H = objective_hessian(Eigen::VectorXd::Zero(3), rows, Eigen::VectorXd::Ones(1), 0.0);
  CHECK(H(0, 0) == doctest::Approx(0.25));
  CHECK(H.cwiseAbs().sum() == doctest::Approx(0.25));

  std::mt19937_64 rng(5);
  const TrainingRows r2 = random_rows(rng, 30, 4);
  const double lambda = 0.3;
  const Eigen::MatrixXd H2 = objective_hessian(Eigen::VectorXd::Random(5), r2, Eigen::VectorXd::Ones(30), lambda);
  CHECK((H2 - H2.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H2.bottomRightCorner(4, 4)).eigenvalues();
  CHECK(ev.minCoeff() >= lambda);
}

TEST_CASE("fitted optima are stationary, deterministic and order-free") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    const int m = 100 + 50 * t;
    const TrainingRows rows = random_rows(rng, m, 3 + t);
    const Eigen::VectorXd w = random_weights(rng, m);
    FitOptions opt;
    opt.lambda = t % 2 ? 1e-4 : 0.0;
    const auto fit = fit_weighted(rows, w, opt);
    CHECK(fit.report.converged);
    CHECK(fit.report.final_grad_norm < 1e-8);
    // Independent stationarity: (1/m) sum w_j grad l_j + lambda theta~ = 0.
    Eigen::VectorXd g = Eigen::VectorXd::Zero(fit.theta.size());
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd xt = oracle::augmented(rows.X.row(j).transpose());
      g += w(j) * (oracle::logistic(oracle::score(fit.theta, rows.X.row(j).transpose())) - rows.y(j)) * xt;
    }
    g /= m;
    g.tail(g.size() - 1) += opt.lambda * fit.theta.tail(g.size() - 1);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-8);

    const auto again = fit_weighted(rows, w, opt);
    CHECK((again.theta - fit.theta).cwiseAbs().maxCoeff() == 0.0);

    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TrainingRows shuffled{Eigen::MatrixXd(m, rows.dim()), Eigen::VectorXd(m)};
    Eigen::VectorXd ws(m);
    for (int j = 0; j < m; ++j) {
      shuffled.X.row(j) = rows.X.row(perm[j]);
      shuffled.y(j) = rows.y(perm[j]);
      ws(j) = w(perm[j]);
    }
    const auto sfit = fit_weighted(shuffled, ws, opt);
    CHECK((sfit.theta - fit.theta).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("predict_proba basics") {
  LogisticModel model;
  model.pipeline = identity_pipeline(2);
  model.theta = Eigen::VectorXd::Zero(3);
  for (double a : {-3.0, 0.0, 7.0}) CHECK(predict_proba(model, Eigen::Vector2d(a, -a)) == 0.5);
  CHECK(predict_label(model, Eigen::Vector2d(1, 1)) == 1);

  model.theta << 0.1, 0.8, 0.0;
  double prev = 0.0;
  for (double a = -4; a <= 4; a += 0.5) {
    const double p = predict_proba(model, Eigen::Vector2d(a, 0.3));
    CHECK(p > prev);
    prev = p;
  }
  CHECK_THROWS_AS(predict_proba(model, Eigen::VectorXd::Zero(3)), DataError);
}

TEST_CASE("intercept-only fit recovers the base rate") {
  TrainingRows rows{Eigen::MatrixXd::Zero(10, 0), Eigen::VectorXd(10)};
  rows.y << 1, 1, 1, 0, 0, 0, 0, 0, 0, 0;
  FitOptions opt;
  opt.lambda = 0.0;
  const auto fit = fit_weighted(rows, Eigen::VectorXd::Ones(10), opt);
  CHECK(std::abs(oracle::logistic(fit.theta(0)) - 0.3) < 1e-8);

  // Through the model path with a centered feature: proba at the mean is b.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd Xraw(10, 1);
  for (auto& v : Xraw.reshaped()) v = normal(rng);
  LogisticModel model;
  model.pipeline = fit_pipeline(Xraw, Retain::count(1));
  model.theta = Eigen::VectorXd::Zero(2);
  model.theta(0) = fit.theta(0);
  CHECK(std::abs(predict_proba(model, Xraw.colwise().mean().transpose()) - 0.3) < 1e-8);
}

TEST_CASE("Platt scaling") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n = 20000;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  for (int j = 0; j < n; ++j) {
    X(j, 0) = normal(rng);
    y(j) = unif(rng) < oracle::logistic(0.4 + 1.3 * X(j, 0)) ? 1.0 : 0.0;
  }

  SUBCASE("calibrated input is a fixed point") {
    LogisticModel model;
    model.pipeline = identity_pipeline(1);
    model.theta = Eigen::Vector2d(0.4, 1.3);
    const auto cal = calibrate_platt(model, X, y);
    REQUIRE(cal.applied);
    CHECK(cal.map.a == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(cal.map.b) < 0.05);
  }

  SUBCASE("miscalibration is repaired and ranking preserved") {
    LogisticModel model;
    model.pipeline = identity_pipeline(1);
    model.theta = Eigen::Vector2d(-1.0, 4.0);  // overconfident and shifted
    const auto cal = calibrate_platt(model, X, y);
    REQUIRE(cal.applied);
    CHECK(cal.map.a > 0.0);
    LogisticModel calibrated = model;
    calibrated.calibration = cal.map;

    // Brier on fresh data from the same process.
    double before = 0.0, after = 0.0;
    for (int j = 0; j < 5000; ++j) {
      const double x = normal(rng);
      const double label = unif(rng) < oracle::logistic(0.4 + 1.3 * x) ? 1.0 : 0.0;
      before += std::pow(predict_proba(model, Eigen::VectorXd::Constant(1, x)) - label, 2);
      after += std::pow(predict_proba(calibrated, Eigen::VectorXd::Constant(1, x)) - label, 2);
    }
    CHECK(after < before);
    double prev = 0.0;
    for (double x = -3; x <= 3; x += 0.25) {
      const double p = predict_proba(calibrated, Eigen::VectorXd::Constant(1, x));
      CHECK(p > prev);
      prev = p;
    }
  }

  SUBCASE("single-class holdout skips with a warning") {
    LogisticModel model;
    model.pipeline = identity_pipeline(1);
    model.theta = Eigen::Vector2d(0.0, 1.0);
    const auto cal = calibrate_platt(model, X.topRows(10), Eigen::VectorXd::Ones(10));
    CHECK_FALSE(cal.applied);
    CHECK_FALSE(cal.warning.empty());
    CHECK(cal.map.a == 1.0);
    CHECK(cal.map.b == 0.0);
  }
}

TEST_CASE("model artifacts reload bit-exact") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd Xraw(50, 4);
  for (auto& v : Xraw.reshaped()) v = normal(rng);
  LogisticModel model;
  model.pipeline = fit_pipeline(Xraw, Retain::fraction(0.9));
  model.theta = Eigen::VectorXd(model.pipeline.output_dim() + 1);
  for (auto& v : model.theta) v = normal(rng) / 3.0;
  model.calibration = PlattMap{1.1, -0.2};
  model.expert = ExpertId{1, "b"};
  ModelArtifact art{model, std::nullopt, {{0, "a"}, {1, "b"}}, {"w", "x", "y", "z"}};

  auto dir = oracle::scratch_dir("glm_artifact");
  save_artifact(art, dir / "m.json");
  const auto back = load_artifact(dir / "m.json");
  CHECK(back.model.expert == model.expert);
  CHECK(back.feature_names == art.feature_names);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd x(4);
    for (auto& v : x) v = normal(rng) * 5;
    CHECK(predict_proba(back.model, x) == predict_proba(model, x));
  }
  save_artifact(back, dir / "m2.json");
  CHECK(oracle::slurp(dir / "m.json") == oracle::slurp(dir / "m2.json"));

  oracle::write_file(dir / "bad.json", "{\"format\": \"something else\"}");
  CHECK_THROWS_AS(load_artifact(dir / "bad.json"), DataError);
}
