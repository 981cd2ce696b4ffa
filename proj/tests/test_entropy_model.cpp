#include "pcst/entropy_model.hpp"
#include "pcst/optim.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

using namespace pcst;
using testutil::Mat;

namespace {

struct Density {
  nn::ParameterStore<double> store;
  FactorizedDensity<double> model;
  Density(int channels, std::vector<int> filters, double init_scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    model = FactorizedDensity<double>(store, "d", channels, std::move(filters), init_scale, rng);
  }
};

double integer_grid_mass(const FactorizedDensity<double>& d, int c, int range = 30) {
  Mat grid(2 * range + 1, d.channels());
  for (int i = -range; i <= range; ++i) grid.row(i + range).setConstant(i);
  return d.likelihood(grid).col(c).sum();
}

}  // namespace

TEST(QuantizeProxy, EvalRounds) {
  Mat f(1, 2);
  f << 0.4, -1.6;
  const Mat q = quantize_proxy(f, QuantMode::eval, 1);
  EXPECT_EQ(q(0, 0), 0.0);
  EXPECT_EQ(q(0, 1), -2.0);
  Mat ints(1, 3);
  ints << -3, 0, 7;
  EXPECT_EQ(quantize_proxy(ints, QuantMode::eval, 1), ints);
}

TEST(QuantizeProxy, TrainNoiseIsBoundedAndSeeded) {
  std::mt19937_64 rng(2);
  const Mat f = testutil::random_matrix(50, 8, rng, 5.0);
  const Mat q = quantize_proxy(f, QuantMode::train, 9);
  EXPECT_LE((q - f).cwiseAbs().maxCoeff(), 0.5);
  EXPECT_GT((q - f).cwiseAbs().maxCoeff(), 0.3);
  EXPECT_EQ(q, quantize_proxy(f, QuantMode::train, 9));
}

TEST(Likelihood, LogisticCdfAtZero) {
  Density d(1, {}, 1.0, 1);
  d.store.at("d.c0.l0.bias").value.setZero();
  EXPECT_NEAR(d.store.at("d.c0.l0.matrix").value(0, 0), std::log(std::exp(1.0) - 1.0), 1e-12);
  const double want = 1 / (1 + std::exp(-0.5)) - 1 / (1 + std::exp(0.5));
  EXPECT_NEAR(d.model.likelihood(Mat::Zero(1, 1))(0, 0), want, 1e-12);
  EXPECT_NEAR(want, 0.2449, 5e-5);
}

TEST(Likelihood, IntegerGridSumsToOne) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Density d(4, {3, 3, 3}, 2.0, seed);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(integer_grid_mass(d.model, c), 1.0, 1e-3);
  }
}

TEST(Likelihood, TailHitsFloor) {
  Density d(1, {3, 3, 3}, 2.0, 3);
  Mat far(2, 1);
  far << 1e4, -1e4;
  const Mat p = d.model.likelihood(far);
  EXPECT_EQ(p(0, 0), kLikelihoodFloor);
  EXPECT_EQ(p(1, 0), kLikelihoodFloor);
}

TEST(Likelihood, CdfIsMonotoneWithUnitLimits) {
  Density d(3, {3, 3, 3}, 2.0, 4);
  std::vector<double> xs;
  for (double x = -60; x <= 60; x += 0.25) xs.push_back(x);
  for (int c = 0; c < 3; ++c) {
    const auto cdf = d.model.cdf(c, xs);
    for (std::size_t i = 1; i < cdf.size(); ++i) EXPECT_GE(cdf[i], cdf[i - 1]);
    EXPECT_LT(cdf.front(), 1e-6);
    EXPECT_GT(cdf.back(), 1 - 1e-6);
  }
}

TEST(Likelihood, GradientMatchesFiniteDifferences) {
  Density d(3, {3, 3, 3}, 2.0, 5);
  // Give the gates non-zero values so every parameter path is exercised.
  std::mt19937_64 rng(6);
  for (const auto& [name, p] : d.store.by_name())
    if (name.find("factor") != std::string::npos) p->value = testutil::random_matrix(1, p->value.cols(), rng);
  Mat f = testutil::random_matrix(7, 3, rng, 3.0);
  auto rate = [&](ag::Tape<double>& tape, const ag::Var<double>& x) {
    return ag::sum(ag::log(d.model.likelihood(tape, x)));
  };
  auto value = [&] {
    ag::Tape<double> tape(false);
    return rate(tape, tape.constant(f)).value()(0, 0);
  };
  d.store.zero_grad();
  ag::Parameter<double> xin{"f", f, Mat::Zero(f.rows(), f.cols())};
  ag::Tape<double> tape;
  tape.backward(rate(tape, tape.parameter(xin)));
  EXPECT_LT(testutil::grad_rel_error(xin.grad, testutil::numeric_grad(value, f)), 1e-4);
  for (const auto& [name, p] : d.store.by_name()) {
    EXPECT_LT(testutil::grad_rel_error(p->grad, testutil::numeric_grad(value, p->value)), 1e-4) << name;
  }
}

TEST(Likelihood, ChannelCountMismatchThrows) {
  Density d(2, {3}, 2.0, 1);
  EXPECT_THROW(d.model.likelihood(Mat::Zero(1, 3)), std::invalid_argument);
}

TEST(Likelihood, StatisticsOfFittedGaussian) {
  // Fit one channel to N(1.5, 2^2) and compare the implied {mu, sigma}.
  Density d(1, {3, 3, 3}, 4.0, 8);
  nn::Adam<double> opt(d.store, 2e-2);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> src(1.5, 2.0);
  for (int step = 0; step < 600; ++step) {
    Mat y(256, 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = src(rng);
    d.store.zero_grad();
    ag::Tape<double> tape;
    auto x = tape.constant(quantize_proxy(y, QuantMode::train, rng));
    tape.backward(ag::scale(ag::sum(ag::log(d.model.likelihood(tape, x))), -1.0 / 256));
    opt.step();
  }
  const auto st = d.model.statistics();
  EXPECT_NEAR(st[0].first, 1.5, 0.25);
  EXPECT_NEAR(st[0].second, std::sqrt(4.0 + 1.0 / 12), 0.35);
}

TEST(Likelihood, NoisyRateBoundsDiscreteEntropyOfFittedSource) {
  Density d(1, {3, 3, 3}, 4.0, 10);
  nn::Adam<double> opt(d.store, 2e-2);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> src(0.0, 3.0);
  for (int step = 0; step < 800; ++step) {
    Mat y(256, 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = src(rng);
    d.store.zero_grad();
    ag::Tape<double> tape;
    auto x = tape.constant(quantize_proxy(y, QuantMode::train, rng));
    tape.backward(ag::scale(ag::sum(ag::log(d.model.likelihood(tape, x))), -1.0 / 256));
    opt.step();
  }
  const int n = 200000;
  Mat y(n, 1);
  std::map<long, long> hist;
  for (int i = 0; i < n; ++i) {
    y(i, 0) = src(rng);
    ++hist[std::lround(y(i, 0))];
  }
  double entropy = 0;
  for (const auto& [v, count] : hist) {
    const double p = double(count) / n;
    entropy -= p * std::log2(p);
  }
  const Mat p = d.model.likelihood(quantize_proxy(y, QuantMode::train, rng));
  const double rate = -p.array().log().sum() / std::log(2.0) / n;
  // Histogram entropy of 2e5 samples has a standard error of a few 1e-3 bits.
  EXPECT_GE(rate, entropy - 0.02);
  EXPECT_LT(rate, entropy + 0.15);
}

TEST(SymbolBudget, Arithmetic) {
  EXPECT_DOUBLE_EQ(symbol_budget(0.25, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(symbol_budget(1.0, 0.7), 0.0);
  EXPECT_DOUBLE_EQ(symbol_budget(0.5, 0.5), 0.5);
  EXPECT_GT(symbol_budget(0.1, 1.0), symbol_budget(0.2, 1.0));
}

TEST(SymbolBudget, Errors) {
  EXPECT_THROW(symbol_budget(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(symbol_budget(-0.5, 1.0), std::invalid_argument);
  EXPECT_THROW(symbol_budget(1.5, 1.0), std::invalid_argument);
  EXPECT_THROW(symbol_budget(0.5, 0.0), std::invalid_argument);
}

TEST(QuantizeBudget, NearestTieUpSaturate) {
  const std::vector<int> k{2, 4, 6, 8};
  EXPECT_EQ(quantize_budget(5.2, k), 6);
  EXPECT_EQ(quantize_budget(5.0, k), 6);
  EXPECT_EQ(quantize_budget(100.0, k), 8);
  EXPECT_EQ(quantize_budget(-3.0, k), 2);
  EXPECT_EQ(quantize_budget(3.0, k), 4);
  EXPECT_THROW(quantize_budget(1.0, {}), std::invalid_argument);
  EXPECT_THROW(quantize_budget(1.0, {4, 2}), std::invalid_argument);
}

TEST(TotalBandwidth, Sums) {
  EXPECT_EQ(total_bandwidth({}), 0);
  EXPECT_EQ(total_bandwidth({2, 4, 6}), 12);
}

TEST(Allocate, EveryLengthIsInKlist) {
  const std::vector<int> klist{2, 4, 6, 8, 12, 16};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 80);
  std::vector<double> bits(300);
  for (auto& b : bits) b = u(rng);
  const auto a = allocate(bits, 0.25, klist);
  ASSERT_EQ(a.k.size(), bits.size());
  for (std::size_t i = 0; i < a.k.size(); ++i) {
    EXPECT_EQ(a.k[i], klist[a.index[i]]);
    EXPECT_EQ(a.k[i], quantize_budget(0.25 * bits[i], klist));
  }
  EXPECT_EQ(a.total(), total_bandwidth(a.k));
  EXPECT_EQ(allocation_from_indices(a.index, 0.25, klist).k, a.k);
  EXPECT_THROW(allocation_from_indices({6}, 0.25, klist), std::invalid_argument);
}
