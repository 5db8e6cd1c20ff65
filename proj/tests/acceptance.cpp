// Acceptance checks: one PASS/FAIL line per criterion.

#include "bsgmm/efa.hpp"
#include "bsgmm/estimation.hpp"
#include "bsgmm/io.hpp"
#include "bsgmm/likelihood.hpp"
#include "bsgmm/model_core.hpp"
#include "bsgmm/simulation.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace bsgmm;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

const ParameterMetrics& metric(const MetricReport& r, const std::string& name) {
  for (const auto& p : r.parameters) {
    if (p.name == name) return p;
  }
  throw std::logic_error("no metric named " + name);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const double m2ll[] = {31659.87, 31388.67, 31231.48, 31186.26};
  const double aic[] = {31681.87, 31434.67, 31301.48, 31280.26};
  const double bic[] = {31728.23, 31531.60, 31448.99, 31478.35};
  double worst = 0.0;
  bool counts = true;
  int best_k = 0;
  double best_bic = 1e300;
  for (int k = 1; k <= 4; ++k) {
    const int p = ParamLayout(k, {0.0, 1.0}).size();
    counts = counts && p == 12 * k - 1;
    const auto ic = information_criteria(-m2ll[k - 1] / 2.0, p, 500);
    worst = std::max({worst, std::abs(ic.aic - aic[k - 1]), std::abs(ic.bic - bic[k - 1])});
    if (ic.bic < best_bic) {
      best_bic = ic.bic;
      best_k = k;
    }
  }
  const double secs = seconds_since(t0);
  report(1, counts && worst <= 0.01 + 1e-9 && best_k == 3 && secs < 1.0,
         "information criteria from -2LL, p=11/23/35/47, n=500: max |diff| " + fmt("%.4f", worst) +
             " (tol 0.01), BIC minimized at K=" + std::to_string(best_k) + ", " + fmt("%.3f", secs) + " s");
}

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  double mean_err = 0.0, cov_err = 0.0, curve_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const GrowthFactorsOriginal g{100 + 5 * z(rng), 5 + z(rng), 2.6 + z(rng)};
    const double knot = 4.5 + z(rng);
    const auto back = inverse_reparameterize_mean(reparameterize_mean(g, knot), knot);
    mean_err = std::max(mean_err, (back.as_vector() - g.as_vector()).cwiseAbs().maxCoeff());

    const Matrix3 psi = oracle::random_spd(rng, 5.0);
    const Matrix3 rt = transform_covariance(transform_covariance(psi, knot, Direction::Forward), knot, Direction::Inverse);
    cov_err = std::max(cov_err, (rt - psi).cwiseAbs().maxCoeff());

    ClassParams o;
    o.frame = Frame::Original;
    o.mean = g.as_vector();
    o.knot = knot;
    const ClassParams r = to_reparameterized(o);
    for (double t = 0.0; t <= 9.0; t += 0.5) curve_err = std::max(curve_err, std::abs(trajectory_value(o, t) - trajectory_value(r, t)));
  }
  const double secs = seconds_since(t0);
  report(2, mean_err < 1e-12 && cov_err < 1e-10 && curve_err < 1e-12 && secs < 1.0,
         "transform round trips over 1000 draws: mean " + fmt("%.2e", mean_err) + " (<1e-12), covariance " +
             fmt("%.2e", cov_err) + " (<1e-10), curve " + fmt("%.2e", curve_err) + " (<1e-12), " + fmt("%.3f", secs) +
             " s");
}

void criterion3() {
  double s1_err = 0.0, s2_err = 0.0, row_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    std::mt19937_64 rng(seed);
    const auto data = oracle::random_dataset(rng, 5, 4, 1);
    const oracle::OrigClass a = oracle::random_class(rng), b = oracle::random_class(rng);
    const std::vector<ClassParams> cls{oracle::to_library(a), oracle::to_library(b)};
    std::uniform_real_distribution<double> u(0.1, 0.9);
    const double pi = u(rng);
    MixtureModel m{cls, FreeMixing{{pi, 1.0 - pi}}};
    LogisticMixing beta{Eigen::MatrixXd(1, 2)};
    beta.coefficients << u(rng) - 0.5, 2.0 * u(rng) - 1.0;
    double naive1 = 0.0, naive2 = 0.0;
    for (const auto& p : data.individuals) {
      const double fa = oracle::class_density(p, a), fb = oracle::class_density(p, b);
      naive1 += std::log(pi * fa + (1.0 - pi) * fb);
      const auto w = oracle::softmax_against_first(beta.coefficients, p.covariates);
      naive2 += std::log(w[0] * fa + w[1] * fb);
    }
    s1_err = std::max(s1_err, std::abs(step1_loglik(data, m) - naive1));
    s2_err = std::max(s2_err, std::abs(step2_loglik(data, cls, beta) - naive2));
    const Eigen::MatrixXd post = posterior_probs(data, m);
    row_err = std::max(row_err, (post.rowwise().sum().array() - 1.0).abs().maxCoeff());
    MixtureModel m2{cls, beta};
    const Eigen::MatrixXd post2 = posterior_probs(data, m2);
    row_err = std::max(row_err, (post2.rowwise().sum().array() - 1.0).abs().maxCoeff());
  }
  report(3, s1_err < 1e-10 && s2_err < 1e-10 && row_err < 1e-10,
         "log-likelihood vs brute force (50 instances, n=5, K=2, J=4): step 1 " + fmt("%.2e", s1_err) + ", step 2 " +
             fmt("%.2e", s2_err) + ", posterior row sums " + fmt("%.2e", row_err) + " (all <1e-10)");
}

SimCondition acceptance_condition() {
  SimCondition c;
  c.n = 1000;
  c.classes = 2;
  c.scenario = 1;
  c.distance = 1.72;
  c.ratio = {1.0, 1.0};
  c.knots = {3.5, 5.5};
  c.residual_var = 1.0;
  c.covariate_slope = 1.0;
  return c;
}

void criteria4to7(const MetricReport& r, double secs) {
  const char* means[] = {"eta0", "eta1", "eta2"};
  const char* vars[] = {"psi00", "psi11", "psi22"};
  double worst_mean = 0.0, worst_var = 0.0;
  std::string mean_detail, var_detail;
  for (int k = 1; k <= 2; ++k) {
    for (const char* m : means) {
      const auto& p = metric(r, "class" + std::to_string(k) + "." + m);
      worst_mean = std::max(worst_mean, std::abs(p.relative_bias));
    }
    for (const char* v : vars) {
      const auto& p = metric(r, "class" + std::to_string(k) + "." + v);
      worst_var = std::max(worst_var, std::abs(p.relative_bias));
    }
  }
  report(4, worst_mean <= 0.02 && worst_var <= 0.05 && secs <= 7200.0,
         "S=" + std::to_string(r.converged) + ", max |relative bias| means " + fmt("%.4f", worst_mean) +
             " (<=0.02), variances " + fmt("%.4f", worst_var) + " (<=0.05), " + fmt("%.0f", secs) + " s");

  double lo = 1.0, hi = 0.0;
  std::string cov_detail;
  for (int k = 1; k <= 2; ++k) {
    for (const char* m : {"eta0", "eta1", "eta2", "knot"}) {
      const auto& p = metric(r, "class" + std::to_string(k) + "." + m);
      lo = std::min(lo, p.coverage);
      hi = std::max(hi, p.coverage);
      cov_detail += " " + std::to_string(k) + "." + m + "=" + fmt("%.2f", p.coverage);
    }
  }
  report(5, lo >= 0.90 && hi <= 0.98, "coverage of means and knots in [0.90, 0.98]:" + cov_detail);

  report(6, r.mean_accuracy >= 0.80, "mean accuracy " + fmt("%.4f", r.mean_accuracy) + " (>=0.80)");

  std::vector<double> slopes;
  std::string slope_detail;
  for (const auto& p : r.parameters) {
    if (p.name.find(".beta.x") != std::string::npos) {
      slopes.push_back(p.relative_bias);
      slope_detail += " " + p.name + "=" + fmt("%.4f", p.relative_bias);
    }
  }
  const double med = slopes.empty() ? 1e300 : median(slopes);
  report(7, std::abs(med) <= 0.05,
         "median relative bias of covariate coefficients " + fmt("%.4f", med) + " (|.|<=0.05):" + slope_detail);
}

void criterion8(const MetricReport& r) {
  const double rate = static_cast<double>(r.converged) / r.attempted;
  double worst = 0.0;
  std::string detail;
  for (int k = 1; k <= 2; ++k) {
    const auto& p = metric(r, "class" + std::to_string(k) + ".eta2");
    worst = std::max(worst, std::abs(p.relative_bias));
    detail += " class" + std::to_string(k) + ".eta2=" + fmt("%.4f", p.relative_bias);
  }
  report(8, rate >= 0.85 && worst <= 0.06,
         "knot SD 0.3: convergence " + std::to_string(r.converged) + "/" + std::to_string(r.attempted) + " = " +
             fmt("%.3f", rate) + " (>=0.85), slope-2 mean |relative bias| " + fmt("%.4f", worst) + " (<=0.06):" +
             detail);
}

void criterion9() {
  std::mt19937_64 rng(909);
  int recovered = 0, agree = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const int k = 2 + t % 3;
    std::vector<int> planted(static_cast<std::size_t>(k));
    std::iota(planted.begin(), planted.end(), 0);
    std::shuffle(planted.begin(), planted.end(), rng);
    // Diagonal-dominant confusion counts in matched coordinates.
    std::uniform_int_distribution<int> off(0, 30), on(80, 200);
    std::vector<int> truth, assigned;
    Eigen::MatrixXi tab(k, k);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < k; ++c) {
        const int count = planted[static_cast<std::size_t>(c)] == r ? on(rng) : off(rng);
        tab(r, c) = count;
        for (int i = 0; i < count; ++i) {
          truth.push_back(r);
          assigned.push_back(c);
        }
      }
    }
    FitResult fit;
    fit.classes = k;
    fit.labels = assigned;
    const Relabeling rl = detect_and_relabel(fit, truth);
    if (rl.permutation == planted) ++recovered;
    // Brute force over every permutation.
    std::vector<int> p(static_cast<std::size_t>(k)), best;
    std::iota(p.begin(), p.end(), 0);
    long best_sum = -1;
    do {
      long s = 0;
      for (int c = 0; c < k; ++c) s += tab(p[static_cast<std::size_t>(c)], c);
      if (s > best_sum) {
        best_sum = s;
        best = p;
      }
    } while (std::next_permutation(p.begin(), p.end()));
    if (best == rl.permutation) ++agree;
  }
  report(9, recovered == trials && agree == trials,
         "planted permutations recovered " + std::to_string(recovered) + "/" + std::to_string(trials) +
             ", agreement with brute force " + std::to_string(agree) + "/" + std::to_string(trials));
}

void criterion10() {
  const int n = 5000;
  const auto d = fixture::planted_factor_data(n, 1010);
  const Eigen::MatrixXd r = efa::correlation_matrix(d.x);
  const auto ret = efa::retention_criteria(r, n, 77);
  const auto raw = efa::fit_efa_ml(r, n, 2);
  const auto rot = efa::varimax_rotate(raw);
  const double load_err = fixture::loading_distance(rot.loadings, d.loadings);
  const double comm_err =
      (raw.loadings.rowwise().squaredNorm() - rot.loadings.rowwise().squaredNorm()).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd scores = efa::bartlett_scores(efa::standardize(d.x), rot);
  auto corr = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd x = a.array() - a.mean(), y = b.array() - b.mean();
    return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
  };
  // Match estimated to true factors by the larger absolute correlation.
  const double straight = std::min(std::abs(corr(scores.col(0), d.factors.col(0))), std::abs(corr(scores.col(1), d.factors.col(1))));
  const double crossed = std::min(std::abs(corr(scores.col(0), d.factors.col(1))), std::abs(corr(scores.col(1), d.factors.col(0))));
  const double score_corr = std::max(straight, crossed);
  report(10,
         ret.evg1 == 2 && ret.parallel == 2 && load_err <= 0.05 && score_corr > 0.9 && comm_err < 1e-10,
         "planted 2-factor p=9 n=5000: EVG1 " + std::to_string(ret.evg1) + ", parallel " +
             std::to_string(ret.parallel) + ", loading error " + fmt("%.4f", load_err) + " (<=0.05), min score corr " +
             fmt("%.4f", score_corr) + " (>0.9), communality change " + fmt("%.2e", comm_err) + " (<1e-10)");
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  if (!fs::exists(root)) return files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

int run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion11(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / "bsgmm_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    SimCondition c;
    c.n = 400;
    const auto beta = calibrate_coefficients(c, 1);
    auto rng = make_rng(111, 0);
    const auto data = generate_dataset(c, beta, rng);
    std::ofstream out(dir / "data.csv");
    io::write_wide_csv(out, data);
  }
  {
    const auto items = fixture::planted_factor_data(1500, 112);
    std::ofstream out(dir / "items.csv");
    out << "id";
    for (int j = 1; j <= 9; ++j) out << ",item" << j;
    out << "\n";
    for (int i = 0; i < items.x.rows(); ++i) {
      out << i + 1;
      for (int j = 0; j < 9; ++j) out << "," << io::format_double(items.x(i, j));
      out << "\n";
    }
  }
  std::ofstream(dir / "fit.json") << R"({"data": "data.csv", "classes": [1, 2, 3], "seed": 5})";
  std::ofstream(dir / "efa.json") << R"({"data": "items.csv", "factors": "auto", "seed": 7})";
  std::ofstream(dir / "sim.json") << R"({"replications": 3, "seed": 6, "grid": {"n": 300, "scenario": [1, 3]}})";

  bool ok = true;
  std::string detail;
  const std::map<std::string, std::string> configs{{"fit", "fit.json"}, {"simulate", "sim.json"}, {"efa", "efa.json"}};
  for (const auto& [cmd, file] : configs) {
    const std::string cfg = (dir / file).string();
    std::vector<std::map<std::string, std::string>> trees;
    for (int threads : {1, 2, 4}) {
      const fs::path out = dir / (cmd + "_t" + std::to_string(threads));
      const int code = run_cli(cli, cmd + " --config " + cfg + " --threads " + std::to_string(threads) + " --out " + out.string());
      if (code != 0) ok = false;
      trees.push_back(read_tree(out));
    }
    // Rerun with the same thread count as the first run.
    const fs::path again = dir / (cmd + "_again");
    if (run_cli(cli, cmd + " --config " + cfg + " --threads 1 --out " + again.string()) != 0) ok = false;
    trees.push_back(read_tree(again));
    const bool same = std::all_of(trees.begin(), trees.end(), [&](const auto& t) { return t == trees[0]; });
    ok = ok && same && !trees[0].empty();
    detail += " " + cmd + ": " + std::to_string(trees[0].size()) + " files " + (same ? "identical" : "DIFFER");
  }
  report(11, ok, "reruns at 1/2/4 threads byte-identical:" + detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli = BSGMM_CLI;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) cli = argv[++i];
    if (a == "--quick") quick = true;  // skip the Monte Carlo criteria
  }
  try {
    criterion1();
    criterion2();
    criterion3();
    if (!quick) {
      RunOptions o;
      o.replications = 100;
      o.seed = 20240401;
      auto t0 = std::chrono::steady_clock::now();
      const MetricReport main_run = run_condition(acceptance_condition(), o);
      criteria4to7(main_run, seconds_since(t0));
      SimCondition robust = acceptance_condition();
      robust.knot_sd = 0.3;
      o.seed = 20240402;
      MetricReport robust_run;
      try {
        robust_run = run_condition(robust, o);
        criterion8(robust_run);
      } catch (const std::exception& e) {
        report(8, false, std::string("run aborted: ") + e.what());
      }
    }
    criterion9();
    criterion10();
    criterion11(cli);
  } catch (const std::exception& e) {
    std::printf("FAIL unexpected error: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
