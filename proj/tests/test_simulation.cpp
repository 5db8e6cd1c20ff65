#include "bsgmm/simulation.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace bsgmm;

namespace {

std::vector<double> shares(const std::vector<int>& labels, int k) {
  std::vector<double> s(static_cast<std::size_t>(k), 0.0);
  for (int l : labels) s[static_cast<std::size_t>(l)] += 1.0;
  for (auto& v : s) v /= static_cast<double>(labels.size());
  return s;
}

// Brute-force best permutation: maximize sum_c tab(perm[c], c).
std::vector<int> brute_force(const Eigen::MatrixXi& tab) {
  const int k = static_cast<int>(tab.rows());
  std::vector<int> p(static_cast<std::size_t>(k));
  std::iota(p.begin(), p.end(), 0);
  std::vector<int> best = p;
  long best_sum = -1;
  do {
    long s = 0;
    for (int c = 0; c < k; ++c) s += tab(p[static_cast<std::size_t>(c)], c);
    if (s > best_sum) {
      best_sum = s;
      best = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

TEST_CASE("design grid") {
  CHECK(design_grid(0.0).size() == 216);
  const auto g = design_grid(0.3);
  int k2 = 0, k3 = 0;
  for (const auto& c : g) {
    CHECK(c.knot_sd == 0.3);
    (c.classes == 2 ? k2 : k3)++;
    CHECK_NOTHROW(c.validate());
  }
  CHECK(k2 == 144);
  CHECK(k3 == 72);
}

TEST_CASE("class mean distances match their labels") {
  for (int scenario = 1; scenario <= 3; ++scenario) {
    for (double d : {0.86, 1.72}) {
      SimCondition c;
      c.scenario = scenario;
      c.distance = d;
      const auto dist = adjacent_distances(c);
      REQUIRE(dist.size() == 1);
      CHECK(std::abs(dist[0] - d) / d < 0.05);
      CHECK(check_condition(c).empty());
    }
  }
  SimCondition c;
  c.distance = 0.86;
  const auto m = c.class_means();
  CHECK(m[0][0] == 98.0);
  CHECK(m[1][0] == 102.0);
}

TEST_CASE("balanced coefficients and class shares") {
  SimCondition c;
  c.covariate_slope = 0.0;
  const auto zero = calibrate_coefficients(c, 1, 1000);
  CHECK(zero.coefficients.cwiseAbs().maxCoeff() == 0.0);
  auto rng = make_rng(3, 0);
  const int n = 20000;
  const auto draw = generate_labels(n, 2, zero, rng);
  CHECK(std::abs(shares(draw.labels, 2)[0] - 0.5) < 3.0 * std::sqrt(0.25 / n));

  SimCondition r = c;
  r.ratio = {1.0, 2.0};
  r.covariate_slope = 1.0;
  const auto beta = calibrate_coefficients(r, 11, 100000);
  auto rng2 = make_rng(12, 0);
  const auto d2 = generate_labels(n, 2, beta, rng2);
  const double se = std::sqrt((1.0 / 3) * (2.0 / 3) / n);
  CHECK(std::abs(shares(d2.labels, 2)[0] - 1.0 / 3) < 3.0 * se);

  SimCondition k3;
  k3.classes = 3;
  k3.ratio = {1, 1, 1};
  k3.knots = {3.5, 4.5, 5.5};
  k3.distance = 0.86;
  k3.covariate_slope = 0.0;
  const auto b3 = calibrate_coefficients(k3, 1, 1000);
  auto rng3 = make_rng(4, 0);
  const auto d3 = generate_labels(30000, 2, b3, rng3);
  for (double s : shares(d3.labels, 3)) CHECK(std::abs(s - 1.0 / 3) < 3.0 * std::sqrt((2.0 / 9) / 30000));
}

TEST_CASE("data generation degenerate cases") {
  SimCondition c;
  c.n = 50;
  c.jitter = 0.0;
  c.residual_var = 0.0;
  c.growth_cov = Matrix3::Zero();
  const auto beta = calibrate_coefficients(c, 1);
  auto rng = make_rng(1, 0);
  const auto d = generate_dataset(c, beta, rng);
  const auto means = c.class_means();
  for (const auto& p : d.individuals) {
    for (std::size_t j = 0; j < p.times.size(); ++j) {
      CHECK(p.times[j] == static_cast<double>(j));
      ClassParams cp;
      cp.frame = Frame::Original;
      cp.mean = means[static_cast<std::size_t>(*p.label)];
      cp.knot = c.knots[static_cast<std::size_t>(*p.label)];
      CHECK(p.outcomes[j] == doctest::Approx(trajectory_value(cp, p.times[j])).epsilon(1e-12));
    }
  }
}

TEST_CASE("intercept gap in scenario 1, small distance") {
  SimCondition c;
  c.n = 4000;
  c.distance = 0.86;
  c.covariate_slope = 0.0;
  const auto beta = calibrate_coefficients(c, 1);
  auto rng = make_rng(8, 0);
  const auto d = generate_dataset(c, beta, rng);
  // The class-mean outcome at t=0 estimates the intercept mean (SD 5 plus noise).
  double s[2] = {0, 0};
  int cnt[2] = {0, 0};
  for (const auto& p : d.individuals) {
    s[*p.label] += p.outcomes[0];
    cnt[*p.label]++;
  }
  const double gap = s[1] / cnt[1] - s[0] / cnt[0];
  const double se = std::sqrt(27.0 / cnt[0] + 27.0 / cnt[1]);
  CHECK(std::abs(gap - 4.0) < 4.0 * se);
}

TEST_CASE("label-switch detection") {
  Eigen::MatrixXi a(2, 2), b(2, 2), cyc(3, 3);
  a << 90, 10, 15, 85;
  b << 10, 90, 85, 15;
  CHECK(column_maxima_permutation(a) == std::vector<int>{0, 1});
  CHECK(column_maxima_permutation(b) == std::vector<int>{1, 0});
  // Column maxima collide (both columns 0 and 1 peak in row 0); the diagonal
  // search resolves it.
  cyc << 40, 45, 5, 5, 10, 60, 35, 5, 20;
  const auto p = column_maxima_permutation(cyc);
  CHECK(p == brute_force(cyc));
  CHECK(p == std::vector<int>{2, 0, 1});

  std::vector<int> truth{0, 0, 0, 1, 1, 1}, assigned{1, 1, 0, 0, 0, 0};
  const auto tab = cross_tabulate(truth, assigned, 2);
  CHECK(tab(0, 1) == 2);
  CHECK(tab(1, 0) == 3);
}

TEST_CASE("planted permutations are recovered") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + trial % 3;
    std::vector<int> planted(static_cast<std::size_t>(k));
    std::iota(planted.begin(), planted.end(), 0);
    std::shuffle(planted.begin(), planted.end(), rng);
    // Diagonal-dominant confusion in matched coordinates, then columns moved.
    std::uniform_int_distribution<int> off(0, 20), on(60, 120);
    Eigen::MatrixXi tab(k, k);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c) tab(r, c) = off(rng);
    for (int c = 0; c < k; ++c) tab(planted[static_cast<std::size_t>(c)], c) = on(rng);
    const auto got = column_maxima_permutation(tab);
    CHECK(got == planted);
    CHECK(got == brute_force(tab));
  }
}

TEST_CASE("performance metrics") {
  Eigen::MatrixXd e(3, 2), lo(3, 2), hi(3, 2);
  e << 1, 2, 2, 2, 3, 2;
  lo << 0, 1, 1, 1, 2.5, 1;
  hi << 1.5, 3, 3, 3, 3.5, 3;
  const auto m = performance_metrics(e, Eigen::Vector2d(2, 2), lo, hi, {"a", "b"});
  CHECK(m[0].relative_bias == doctest::Approx(0.0));
  CHECK(m[0].empirical_se == doctest::Approx(1.0));
  CHECK(m[0].relative_rmse == doctest::Approx(std::sqrt(2.0 / 3.0) / 2.0));
  CHECK(m[0].relative_rmse == doctest::Approx(0.408).epsilon(1e-3));
  CHECK(m[0].coverage == doctest::Approx(1.0 / 3.0));
  CHECK(m[1].bias == 0.0);
  CHECK(m[1].empirical_se == 0.0);
  CHECK(m[1].rmse == 0.0);
  CHECK(m[1].coverage == 1.0);

  Eigen::MatrixXd z(2, 1), zl(2, 1), zh(2, 1);
  z << 0.1, 0.3;
  zl << -1, std::nan("");
  zh << 1, std::nan("");
  const auto zm = performance_metrics(z, Eigen::VectorXd::Zero(1), zl, zh, {"z"});
  CHECK_FALSE(zm[0].relative_available);
  CHECK(std::isnan(zm[0].relative_bias));
  CHECK(zm[0].bias == doctest::Approx(0.2));
  CHECK(zm[0].intervals == 1);
  CHECK(zm[0].coverage == 1.0);

  CHECK(monte_carlo_se(0.0225, 900) == doctest::Approx(0.005));
  CHECK(monte_carlo_se(0.0, 10) == 0.0);
  CHECK(monte_carlo_se(1.0, 4) == 0.5);
}

TEST_CASE("relabeling a real fit keeps the likelihood and re-references step 2") {
  SimCondition c;
  c.n = 500;
  const auto beta = calibrate_coefficients(c, 1);
  auto rng = make_rng(21, 0);
  const auto data = generate_dataset(c, beta, rng);
  const FitResult s1 = fit_step1(data, 2);
  REQUIRE(s1.converged());
  const FitResult sw = apply_permutation(s1, {1, 0});
  CHECK(step1_loglik(data, sw.model) == doctest::Approx(s1.loglik).epsilon(1e-12));
  CHECK(sw.original[0].value == s1.original[12].value);
  CHECK(sw.original[0].class_index == 0);
  CHECK(sw.mixing_proportions[0] == s1.mixing_proportions[1]);
  CHECK((sw.original_cov.block(0, 0, 12, 12) - s1.original_cov.block(12, 12, 12, 12)).cwiseAbs().maxCoeff() == 0.0);

  const FitResult s2 = fit_step2(data, s1);
  REQUIRE(s2.converged());
  const FitResult refit = fit_step2(data, sw);
  REQUIRE(refit.converged());
  const FitResult mapped = apply_permutation(s2, {1, 0});
  for (std::size_t i = 0; i < refit.coefficients.size(); ++i) {
    CHECK(std::abs(mapped.coefficients[i].value - refit.coefficients[i].value) < 1e-4);
    CHECK(std::abs(mapped.coefficients[i].se - refit.coefficients[i].se) < 1e-3);
  }

  std::vector<int> truth;
  for (const auto& p : data.individuals) truth.push_back(*p.label);
  const auto fixed = detect_and_relabel(sw, truth);
  CHECK(fixed.switched);
  CHECK(fixed.permutation == std::vector<int>{1, 0});
  CHECK(accuracy(fixed.fit.labels, truth) > 0.8);
}

TEST_CASE("run_condition: small target, deterministic across thread counts") {
  SimCondition c;
  c.n = 300;
  RunOptions o;
  o.replications = 3;
  o.seed = 5;
  o.threads = 1;
  const auto a = run_condition(c, o);
  CHECK(a.converged == 3);
  CHECK(a.replications.size() == 3);
  CHECK(a.attempted >= 3);
  CHECK(a.parameters.size() == a.names.size());
  o.threads = 3;
  const auto b = run_condition(c, o);
  CHECK(a.attempted == b.attempted);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(a.replications[r].index == b.replications[r].index);
    CHECK((a.replications[r].estimates.array() == b.replications[r].estimates.array()).all());
  }
  for (std::size_t i = 0; i < a.parameters.size(); ++i) CHECK(a.parameters[i].bias == b.parameters[i].bias);
}
