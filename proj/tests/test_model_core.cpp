#include "bsgmm/model_core.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <vector>

using namespace bsgmm;

TEST_CASE("forward mean map, hand-evaluated") {
  const auto r = reparameterize_mean({98.0, -5.0, -2.6}, 4.0);
  CHECK(r.at_knot == doctest::Approx(78.0).epsilon(1e-14));
  CHECK(r.mean_slope == doctest::Approx(-3.8).epsilon(1e-14));
  CHECK(r.half_diff == doctest::Approx(1.2).epsilon(1e-14));

  const auto z = reparameterize_mean({0.0, 0.0, 0.0}, 17.3);
  CHECK(z.as_vector().norm() == 0.0);

  const auto e = reparameterize_mean({3.0, 0.7, 0.7}, 2.5);
  CHECK(e.at_knot == doctest::Approx(3.0 + 2.5 * 0.7));
  CHECK(e.mean_slope == doctest::Approx(0.7));
  CHECK(e.half_diff == doctest::Approx(0.0));
}

TEST_CASE("inverse mean map") {
  const auto o = inverse_reparameterize_mean({78.0, -3.8, 1.2}, 4.0);
  CHECK(o.intercept == doctest::Approx(98.0));
  CHECK(o.slope1 == doctest::Approx(-5.0));
  CHECK(o.slope2 == doctest::Approx(-2.6));

  const auto flat = inverse_reparameterize_mean({4.2, 0.0, 0.0}, 1.5);
  CHECK(flat.intercept == doctest::Approx(4.2));
  CHECK(flat.slope1 == 0.0);
  CHECK(flat.slope2 == 0.0);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> z(0.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const GrowthFactorsOriginal g{z(rng), z(rng), z(rng)};
    const double k = z(rng);
    const auto back = inverse_reparameterize_mean(reparameterize_mean(g, k), k);
    CHECK((back.as_vector() - g.as_vector()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("covariance transform, hand matrix product") {
  Matrix3 psi;
  psi << 25, 1.5, 1.5, 1.5, 1, .3, 1.5, .3, 1;
  Matrix3 expected;
  expected << 53, 4.1, -1.4, 4.1, 0.65, 0, -1.4, 0, 0.35;
  const Matrix3 got = transform_covariance(psi, 4.0, Direction::Forward);
  CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((transform_covariance(got, 4.0, Direction::Inverse) - psi).cwiseAbs().maxCoeff() < 1e-12);

  Matrix3 half = Matrix3::Zero();
  half(0, 0) = 1.0;
  half(1, 1) = 0.5;
  half(2, 2) = 0.5;
  CHECK((transform_covariance(Matrix3::Identity(), 0.0, Direction::Forward) - half).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("Jacobians match finite differences of the mean maps") {
  const double k = 3.3;
  const Vector3 x(2.0, -1.0, 0.4);
  Matrix3 num;
  for (int c = 0; c < 3; ++c) {
    Vector3 e = Vector3::Zero();
    e[c] = 1e-6;
    num.col(c) = (reparameterize_mean(GrowthFactorsOriginal::from_vector(x + e), k).as_vector() -
                  reparameterize_mean(GrowthFactorsOriginal::from_vector(x - e), k).as_vector()) /
                 2e-6;
  }
  CHECK((num - forward_jacobian(k)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((forward_jacobian(k) * inverse_jacobian(k) - Matrix3::Identity()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("loading matrix rows") {
  const std::vector<double> t{0.0, 4.0, 9.0};
  const auto l = loading_matrix(t, 4.0);
  Eigen::Matrix3d expected;
  expected << 1, -4, 4, 1, 0, 0, 1, 5, 5;
  CHECK((Eigen::Matrix3d(l) - expected).cwiseAbs().maxCoeff() == 0.0);

  const std::vector<double> after{5.0, 6.5, 8.0};
  const auto m = loading_matrix(after, 1.0);
  CHECK((m.col(1) - m.col(2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("implied moments") {
  ClassParams p;
  p.mean = Vector3(3.0, 1.0, 0.5);
  p.cov = Matrix3::Zero();
  p.knot = 2.0;
  p.residual_var = 1.0;
  const std::vector<double> t{0.0, 1.0, 3.0, 5.0};
  const auto m0 = implied_moments(p, t);
  CHECK((m0.cov - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);

  p.cov << 2.0, 0.1, 0.2, 0.1, 0.5, 0.05, 0.2, 0.05, 0.3;
  const std::vector<double> at{2.0};
  const auto single = implied_moments(p, at);
  CHECK(single.mean[0] == doctest::Approx(3.0));
  CHECK(single.cov(0, 0) == doctest::Approx(2.0 + 1.0));

  // Original-frame oracle on the design's waves.
  oracle::OrigClass c{Vector3(98, 5, 2.6), Matrix3::Zero(), 3.5, 1.0};
  c.cov << 25, 1.5, 1.5, 1.5, 1, .3, 1.5, .3, 1;
  std::vector<double> waves;
  for (int j = 0; j < 10; ++j) waves.push_back(j);
  const auto im = implied_moments(oracle::to_library(c), waves);
  const Eigen::MatrixXd l = oracle::original_design(waves, 3.5);
  const Eigen::MatrixXd s = l * c.cov * l.transpose() + Eigen::MatrixXd::Identity(10, 10);
  CHECK((im.cov - s).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((im.mean - l * c.mean).cwiseAbs().maxCoeff() < 1e-10);
  for (int j = 0; j < 10; ++j) CHECK(im.cov(j, j) >= 1.0);
}

TEST_CASE("trajectory value") {
  ClassParams p;
  p.frame = Frame::Original;
  p.mean = Vector3(24.133, 1.718, 0.841);
  p.knot = 90.788 - 60.0;
  p.residual_var = 1.0;
  CHECK(trajectory_value(p, p.knot) == doctest::Approx(24.133 + 1.718 * 30.788).epsilon(1e-12));
  CHECK(trajectory_value(p, p.knot) == doctest::Approx(77.03).epsilon(1e-4));
  const double left = trajectory_value(p, p.knot - 1e-9);
  const double right = trajectory_value(p, p.knot + 1e-9);
  CHECK(std::abs(left - right) < 1e-7);

  p.mean = Vector3(1.0, 0.5, 0.5);
  for (double t : {-3.0, 0.0, 10.0, 40.0, 100.0}) CHECK(trajectory_value(p, t) == doctest::Approx(1.0 + 0.5 * t));
}

TEST_CASE("frames give the same curve") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (int i = 0; i < 1000; ++i) {
    ClassParams o;
    o.frame = Frame::Original;
    o.mean = Vector3(10 * z(rng), z(rng), z(rng));
    o.knot = 5 + z(rng);
    o.residual_var = 1.0;
    const ClassParams r = to_reparameterized(o);
    const double t = 5 + 3 * z(rng);
    CHECK(std::abs(trajectory_value(o, t) - trajectory_value(r, t)) < 1e-12 * std::max(1.0, std::abs(trajectory_value(o, t))));
  }
}

TEST_CASE("validation") {
  ClassParams p;
  p.cov = Matrix3::Identity();
  p.knot = 2.0;
  CHECK_NOTHROW(validate(p, std::make_pair(0.0, 5.0)));
  CHECK_THROWS_AS(validate(p, std::make_pair(2.0, 5.0)), std::invalid_argument);
  p.residual_var = 0.0;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p.residual_var = 1.0;
  p.cov(0, 0) = -1.0;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
}

TEST_CASE("growth-factor Mahalanobis distance") {
  Matrix3 psi;
  psi << 25, 1.5, 1.5, 1.5, 1, .3, 1.5, .3, 1;
  const Vector3 a(98, 5, 2.6), b(102, 5, 2.6);
  // Only the intercept differs: sqrt(16 * [psi^-1]_00).
  const double oracle = std::sqrt(16.0 * psi.inverse()(0, 0));
  CHECK(mahalanobis_distance(a, b, psi) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(mahalanobis_distance(a, a, psi) == 0.0);
}
