#include <gtest/gtest.h>

#include <cmath>

#include "noisefed/metrics.hpp"

using namespace noisefed;

namespace {

MetricSeries series(std::vector<double> v) { return {std::move(v), 0.0, ""}; }

SweepRow row(double sigma, double test_acc, double test_loss, std::vector<double> val) {
  SweepRow r;
  r.sigma = sigma;
  r.test_acc = test_acc;
  r.test_loss = test_loss;
  r.val_series = series(std::move(val));
  return r;
}

// Two-outcome randomized response over datasets "0" and "1".
FiniteMechanism randomized_response(double p) {
  FiniteMechanism m;
  m.outcome_distribution["0"] = {p, 1.0 - p};
  m.outcome_distribution["1"] = {1.0 - p, p};
  return m;
}

const NeighborPairs kBit = {{"0", "1"}};

}  // namespace

TEST(Snr, HandExample) {
  const Snr s = snr_db(series({0.5, 0.7, 0.9}), series({0.4, 0.5, 0.6}));
  ASSERT_FALSE(s.infinite);
  EXPECT_NEAR(s.db, 10.0 * std::log10(4.0), 1e-12);
  EXPECT_NEAR(s.db, 6.0206, 1e-4);
}

TEST(Snr, EqualPowerAndTenfold) {
  // noise n = signal - noisy; choose n with the wanted variance.
  const std::vector<double> sig{1.0, 3.0, 2.0, 4.0};
  std::vector<double> same, tenth;
  const std::vector<double> n{3.0, 2.0, 4.0, 1.0};  // same variance as sig
  for (std::size_t i = 0; i < sig.size(); ++i) {
    same.push_back(sig[i] - n[i]);
    tenth.push_back(sig[i] - n[i] / 10.0);
  }
  EXPECT_NEAR(snr_db(series(sig), series(same)).db, 0.0, 1e-12);
  EXPECT_NEAR(snr_db(series(sig), series(tenth)).db, 20.0, 1e-12);
}

TEST(Snr, SentinelAndErrors) {
  const Snr s = snr_db(series({0.5, 0.7, 0.9}), series({0.4, 0.6, 0.8}));
  EXPECT_TRUE(s.infinite);
  EXPECT_EQ(s.to_string(), "inf");
  EXPECT_THROW(snr_db(series({0.5, 0.5}), series({0.4, 0.3})), Error);
  EXPECT_THROW(snr_db(series({0.5}), series({0.4})), Error);
  EXPECT_THROW(snr_db(series({0.5, 0.6}), series({0.4, 0.3, 0.2})), Error);
}

TEST(Snr, ScaleInvariantAboutMeans) {
  const std::vector<double> s{0.31, 0.45, 0.52, 0.58, 0.61};
  const std::vector<double> y{0.30, 0.41, 0.50, 0.51, 0.60};
  const double base = snr_db(series(s), series(y)).db;
  auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  for (double c : {0.1, 10.0}) {
    std::vector<double> sc, yc;
    const double ms = mean(s), my = mean(y);
    for (std::size_t i = 0; i < s.size(); ++i) {
      sc.push_back(ms + c * (s[i] - ms));
      yc.push_back(my + c * (y[i] - my));
    }
    EXPECT_NEAR(snr_db(series(sc), series(yc)).db, base, 1e-9) << c;
  }
}

TEST(Price, Examples) {
  EXPECT_EQ(price_of_stability(0.8, 0.8), 1.0);
  EXPECT_NEAR(price_of_stability(0.84, 0.80), 1.05, 1e-12);
  EXPECT_NEAR(price_of_stability(0.40, 0.80), 0.5, 1e-12);
  EXPECT_EQ(price_of_anarchy(1.6, 1.6), 1.0);
  EXPECT_NEAR(price_of_anarchy(2.0, 1.6), 1.25, 1e-12);
  EXPECT_NEAR(price_of_anarchy(1.2, 1.6), 0.75, 1e-12);
  EXPECT_THROW(price_of_stability(0.5, 0.0), Error);
  EXPECT_THROW(price_of_anarchy(0.5, 0.0), Error);
}

TEST(Sweep, BaseRowIdentity) {
  SweepResult s;
  s.rows = {row(0.0, 0.8, 0.6, {0.5, 0.7, 0.9}), row(0.1, 0.82, 0.55, {0.4, 0.5, 0.6}),
            row(0.3, 0.7, 0.9, {0.45, 0.66, 0.8})};
  score_sweep(s);
  EXPECT_EQ(s.rows[0].pos, 1.0);
  EXPECT_EQ(s.rows[0].poa, 1.0);
  EXPECT_TRUE(s.rows[0].snr.infinite);
  EXPECT_NEAR(s.rows[1].snr.db, 6.0206, 1e-4);
  const std::string csv = sweep_to_csv(s);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sigma,train_acc,test_acc,test_loss,snr_db,pos,poa");
  EXPECT_NE(csv.find("\n0.00,0.000000,0.800000,0.600000,inf,1.000000,1.000000\n"),
            std::string::npos)
      << csv;
}

TEST(Sweep, ValidateNeedsOneBaseRow) {
  SweepResult s;
  s.rows = {row(0.1, 0.8, 0.6, {0.5, 0.7})};
  EXPECT_THROW(s.validate(), Error);
  s.rows = {row(0.0, 0.8, 0.6, {0.5, 0.7}), row(0.0, 0.8, 0.6, {0.5, 0.7})};
  EXPECT_THROW(s.validate(), Error);
  s.rows = {row(0.0, 0.8, 0.6, {0.5, 0.7}), row(0.5, 0.8, 0.6, {0.5, 0.7}),
            row(0.3, 0.8, 0.6, {0.5, 0.7})};
  EXPECT_THROW(s.validate(), Error);
}

TEST(OptimalSigma, ArgmaxAndTies) {
  SweepResult s;
  s.rows = {row(0.0, 0, 1, {}), row(0.3, 0, 1, {}), row(0.5, 0, 1, {}), row(0.7, 0, 1, {})};
  s.rows[0].snr = Snr::Infinite();
  s.rows[1].snr = {4.0, false};
  s.rows[2].snr = {9.0, false};
  s.rows[3].snr = {2.0, false};
  EXPECT_EQ(optimal_sigma_by_snr(s), 0.5);
  s.rows[3].snr = {9.0, false};
  EXPECT_EQ(optimal_sigma_by_snr(s), 0.7);
  for (auto& r : s.rows) r.snr.db += 3.5;
  EXPECT_EQ(optimal_sigma_by_snr(s), 0.7);
  for (auto& r : s.rows) r.snr = Snr::Infinite();
  EXPECT_THROW(optimal_sigma_by_snr(s), Error);
}

TEST(Rademacher, SingletonNearZero) {
  HypothesisTable h = {std::vector<int>(100, 1)};
  RngStream rng(1);
  EXPECT_LT(std::abs(rademacher_estimate(h, 2000, rng)), 0.05);
}

TEST(Rademacher, ShatteringIsOne) {
  const std::size_t n = 8;
  HypothesisTable h;
  for (std::size_t mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> r;
    for (std::size_t i = 0; i < n; ++i) r.push_back((mask >> i) & 1 ? 1 : -1);
    h.push_back(r);
  }
  RngStream rng(2);
  EXPECT_EQ(rademacher_estimate(h, 500, rng), 1.0);
}

TEST(Rademacher, InclusionMonotoneAndBounded) {
  RngStream gen(3);
  for (int t = 0; t < 20; ++t) {
    HypothesisTable big;
    for (int k = 0; k < 6; ++k) {
      std::vector<int> r;
      for (int i = 0; i < 12; ++i) r.push_back(gen.sign());
      big.push_back(r);
    }
    HypothesisTable small(big.begin(), big.begin() + 2);
    RngStream a(100 + t), b(100 + t);
    const double es = rademacher_estimate(small, 200, a);
    const double eb = rademacher_estimate(big, 200, b);
    EXPECT_LE(es, eb);
    EXPECT_GE(es, -1.0);
    EXPECT_LE(eb, 1.0);
  }
  RngStream rng(4);
  EXPECT_THROW(rademacher_estimate({}, 10, rng), Error);
}

TEST(Rademacher, TabulateAppliesPredictors) {
  const std::vector<std::function<int(const double&)>> hs = {
      [](const double& x) { return x > 0 ? 1 : -1; }, [](const double&) { return 1; }};
  const std::vector<double> xs = {-1.0, 2.0};
  const HypothesisTable t = tabulate<double>(hs, xs);
  EXPECT_EQ(t, (HypothesisTable{{-1, 1}, {1, 1}}));
}

namespace {

// 1-nearest-neighbour regressor on the line: predicts the label of the
// closest training x (first one on ties); squared loss.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

auto one_nn = [](std::span<const Point> train) {
  std::vector<Point> s(train.begin(), train.end());
  return [s](const Point& z) {
    const Point* best = &s.front();
    for (const Point& p : s) {
      if (std::abs(p.x - z.x) < std::abs(best->x - z.x)) best = &p;
    }
    return (best->y - z.y) * (best->y - z.y);
  };
};

}  // namespace

TEST(Stability, IdenticalDatasetsGiveZero) {
  const std::vector<Point> s = {{0, 0}, {1, 1}, {2, 0}, {3, 1}, {4, 0}};
  const std::vector<Point> evals = {{0.4, 0}, {2.6, 1}, {3.9, 0}};
  EXPECT_EQ(stability_probe<Point>(one_nn, s, 2, s[2], evals), 0.0);
  EXPECT_THROW(stability_probe<Point>(one_nn, s, 5, s[0], evals), Error);
}

TEST(Stability, OneNnMatchesBruteForce) {
  const std::vector<Point> s = {{0, 0}, {1, 1}, {2, 0}, {3, 1}, {4, 0}};
  const Point moved{2.2, 1};
  std::vector<Point> evals;
  for (int i = 0; i <= 40; ++i) evals.push_back({i * 0.1, (i % 3 == 0) ? 1.0 : 0.0});
  // Brute force: explicit nearest neighbour on both sets for every point.
  std::vector<Point> s2 = s;
  s2[2] = moved;
  auto nn_label = [](const std::vector<Point>& set, double x) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < set.size(); ++i) {
      if (std::abs(set[i].x - x) < std::abs(set[best].x - x)) best = i;
    }
    return set[best].y;
  };
  double expected = 0.0;
  for (const Point& z : evals) {
    const double a = std::pow(nn_label(s, z.x) - z.y, 2);
    const double b = std::pow(nn_label(s2, z.x) - z.y, 2);
    expected = std::max(expected, std::abs(a - b));
  }
  EXPECT_EQ(stability_probe<Point>(one_nn, s, 2, moved, evals), expected);
  EXPECT_EQ(expected, 1.0);
}

TEST(Sensitivity, CountingSumConstant) {
  // Datasets over 4 rows; neighbours differ in one row.
  const std::vector<std::vector<double>> rows = {{0, 1, 1, 0}, {1, 1, 1, 0}, {0, 1, 0, 0}};
  std::map<std::string, std::vector<double>> count, constant;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double c = 0.0;
    for (double v : rows[i]) c += v;
    count[std::to_string(i)] = {c};
    constant[std::to_string(i)] = {7.0};
  }
  const NeighborPairs pairs = {{"0", "1"}, {"0", "2"}};
  EXPECT_EQ(l1_sensitivity(count, pairs), 1.0);
  EXPECT_EQ(l1_sensitivity(constant, pairs), 0.0);
  EXPECT_THROW(l1_sensitivity(count, {}), Error);
}

TEST(Sensitivity, BoundedSumEqualsBound) {
  // Values in {0, 1, 2, 3} (B = 3); enumerate every single-row replacement.
  const double bound = 3.0;
  const std::vector<double> base = {1, 0, 3, 2};
  std::map<std::string, std::vector<double>> out;
  NeighborPairs pairs;
  auto sum = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  };
  out["base"] = {sum(base)};
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (int v = 0; v <= 3; ++v) {
      auto d = base;
      d[i] = v;
      const std::string id = std::to_string(i) + ":" + std::to_string(v);
      out[id] = {sum(d)};
      pairs.push_back({"base", id});
    }
  }
  // The base set is itself a replacement target; use every base value too.
  double expected = 0.0;
  for (double v : base) expected = std::max({expected, v, bound - v});
  EXPECT_EQ(l1_sensitivity(out, pairs), expected);
  EXPECT_EQ(expected, bound);
}

TEST(Dp, RandomizedResponse) {
  const auto rr = randomized_response(0.75);
  EXPECT_TRUE(dp_check(rr, kBit, std::log(3.0), 0.0).holds);
  const DpCheck tight = dp_check(rr, kBit, 0.9 * std::log(3.0), 0.0);
  EXPECT_FALSE(tight.holds);
  EXPECT_GT(tight.worst_set_mass, 0.0);
}

TEST(Dp, VacuousDeltaAndDeterministic) {
  FiniteMechanism det;
  det.outcome_distribution["0"] = {1.0, 0.0};
  det.outcome_distribution["1"] = {0.0, 1.0};
  EXPECT_TRUE(dp_check(det, kBit, 0.0, 1.0).holds);
  EXPECT_TRUE(dp_check(randomized_response(0.9), kBit, 0.0, 1.0).holds);
  for (double eps : {0.5, 5.0, 50.0}) EXPECT_FALSE(dp_check(det, kBit, eps, 0.0).holds);
}

TEST(Dp, Monotone) {
  const auto rr = randomized_response(0.8);
  const std::vector<double> eps = {0.0, 0.5, 1.0, std::log(4.0), 2.0};
  const std::vector<double> del = {0.0, 0.05, 0.2, 0.4, 1.0};
  for (std::size_t i = 0; i < eps.size(); ++i) {
    for (std::size_t j = 0; j < del.size(); ++j) {
      if (!dp_check(rr, kBit, eps[i], del[j]).holds) continue;
      for (std::size_t a = i; a < eps.size(); ++a) {
        for (std::size_t b = j; b < del.size(); ++b) {
          EXPECT_TRUE(dp_check(rr, kBit, eps[a], del[b]).holds);
        }
      }
    }
  }
}

TEST(Dp, InputValidation) {
  const auto rr = randomized_response(0.75);
  EXPECT_THROW(dp_check(rr, kBit, -0.1, 0.0), Error);
  EXPECT_THROW(dp_check(rr, kBit, 1.0, 1.5), Error);
  FiniteMechanism bad;
  bad.outcome_distribution["0"] = {0.5, 0.4};
  bad.outcome_distribution["1"] = {0.5, 0.5};
  EXPECT_THROW(dp_check(bad, kBit, 1.0, 0.0), Error);
}
