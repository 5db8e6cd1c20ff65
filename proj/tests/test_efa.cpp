#include "bsgmm/efa.hpp"
#include "bsgmm/model_core.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace bsgmm;

TEST_CASE("correlation matrix") {
  Eigen::MatrixXd x(3, 2);
  x << 0, 0, 1, 2, 2, 4;
  CHECK(efa::correlation_matrix(x)(0, 1) == doctest::Approx(1.0).epsilon(1e-14));

  Eigen::MatrixXd dup(4, 3);
  dup << 1, 1, 5, 2, 2, 3, 4, 4, 1, 3, 3, 0;
  CHECK(efa::correlation_matrix(dup)(0, 1) == doctest::Approx(1.0).epsilon(1e-14));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  const int n = 20000;
  Eigen::MatrixXd ind(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) ind(i, j) = z(rng);
  const Eigen::MatrixXd r = efa::correlation_matrix(ind);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (a != b) CHECK(std::abs(r(a, b)) < 3.0 / std::sqrt(n));

  Eigen::MatrixXd cst(3, 2);
  cst << 1, 7, 2, 7, 3, 7;
  try {
    efa::correlation_matrix(cst, {"a", "flat"});
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
}

TEST_CASE("retention criteria") {
  const auto id = efa::retention_criteria(Eigen::MatrixXd::Identity(5, 5), 200, 1, 50);
  CHECK(id.evg1 == 0);
  CHECK(id.parallel == 0);

  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(4, 4);
  r(0, 1) = r(1, 0) = 0.8;
  r(2, 3) = r(3, 2) = 0.8;
  const auto two = efa::retention_criteria(r, 500, 2, 100);
  CHECK(two.eigenvalues[0] == doctest::Approx(1.8));
  CHECK(two.eigenvalues[1] == doctest::Approx(1.8));
  CHECK(two.eigenvalues[2] == doctest::Approx(0.2));
  CHECK(two.eigenvalues[3] == doctest::Approx(0.2));
  CHECK(two.evg1 == 2);
  CHECK(two.parallel == 2);

  const auto d = fixture::planted_factor_data(2000, 3);
  const auto nine = efa::retention_criteria(efa::correlation_matrix(d.x), 2000, 4, 100);
  CHECK(nine.evg1 == 2);
  CHECK(nine.parallel == 2);
}

TEST_CASE("ML extraction on an exact one-factor correlation matrix") {
  Eigen::VectorXd l(5);
  l << 0.9, 0.8, 0.7, 0.6, 0.5;
  const Eigen::VectorXd u = 1.0 - l.array().square();
  const Eigen::MatrixXd r = l * l.transpose() + Eigen::MatrixXd(u.asDiagonal());
  const auto f = efa::fit_efa_ml(r, 1000, 1);
  CHECK(f.converged);
  CHECK((f.loadings.col(0).cwiseAbs() - l).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((f.uniquenesses - u).cwiseAbs().maxCoeff() < 1e-6);

  const auto zero = efa::fit_efa_ml(r, 1000, 0);
  CHECK((zero.uniquenesses.array() == 1.0).all());
  CHECK(zero.loadings.cols() == 0);

  CHECK_THROWS_AS(efa::fit_efa_ml(r, 1000, 4), std::invalid_argument);
}

TEST_CASE("large-sample two-factor recovery") {
  const auto d = fixture::planted_factor_data(100000, 7);
  const auto f = efa::varimax_rotate(efa::fit_efa_ml(efa::correlation_matrix(d.x), 100000, 2));
  CHECK(fixture::loading_distance(f.loadings, d.loadings) < 0.02);
}

TEST_CASE("varimax") {
  Eigen::MatrixXd one(4, 1);
  one << 0.5, -0.2, 0.7, 0.1;
  CHECK((efa::varimax(one).loadings - one).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd simple(4, 2);
  simple << 0.8, 0, 0.7, 0, 0, 0.6, 0, 0.9;
  const auto s = efa::varimax(simple);
  CHECK(fixture::loading_distance(s.loadings, simple) < 1e-8);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd l(8, 3);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 3; ++j) l(i, j) = u(rng);
    const auto rot = efa::varimax(l);
    CHECK((rot.loadings.rowwise().squaredNorm() - l.rowwise().squaredNorm()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((rot.rotation.transpose() * rot.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((l * rot.rotation - rot.loadings).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Bartlett scores") {
  efa::EfaResult f;
  f.factors = 1;
  const double ell = 0.6;
  f.loadings = Eigen::MatrixXd::Constant(4, 1, ell);
  f.uniquenesses = Eigen::VectorXd::Constant(4, 1 - ell * ell);
  Eigen::MatrixXd x(3, 4);
  x << 1, 2, 3, 4, -1, 0.5, 0.2, 0.3, 0, 0, 0, 0;
  const Eigen::MatrixXd s = efa::bartlett_scores(x, f);
  for (int i = 0; i < 3; ++i) CHECK(s(i, 0) == doctest::Approx(x.row(i).mean() / ell).epsilon(1e-12));
  CHECK(s(2, 0) == 0.0);

  efa::EfaResult g;
  g.factors = 2;
  g.loadings = fixture::planted_loadings();
  g.uniquenesses = Eigen::VectorXd::Constant(9, 1e-6);
  const Eigen::MatrixXd pure = g.loadings.col(1).transpose();
  const Eigen::MatrixXd sp = efa::bartlett_scores(pure, g);
  CHECK(std::abs(sp(0, 1) - 1.0) < 1e-6);
  CHECK(std::abs(sp(0, 0)) < 1e-6);
}
