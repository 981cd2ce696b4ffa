#include "pcst/autograd.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <complex>
#include <functional>
#include <random>

using namespace pcst;
using testutil::Mat;
using V = ag::Var<double>;

namespace {

// Checks d(loss)/d(inputs) for a graph built by `build` against central
// differences. The scalar loss is sum(out .* w) for a fixed random w.
void check_op(std::vector<Mat> inputs, const std::function<V(ag::Tape<double>&, std::vector<V>&)>& build,
              double tol = 1e-7, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Mat weights;
  auto eval = [&](ag::Tape<double>& tape, std::vector<V>& vars) {
    V out = build(tape, vars);
    if (weights.size() == 0) weights = testutil::random_matrix(out.rows(), out.cols(), rng);
    return ag::sum(ag::mul(out, tape.constant(weights)));
  };
  std::vector<ag::Parameter<double>> params;
  for (auto& m : inputs) params.push_back({"p", m, Mat::Zero(m.rows(), m.cols())});
  {
    ag::Tape<double> tape;
    std::vector<V> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    tape.backward(eval(tape, vars));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = [&] {
      ag::Tape<double> tape(false);
      std::vector<V> vars;
      for (auto& p : params) vars.push_back(tape.constant(p.value));
      return eval(tape, vars).value()(0, 0);
    };
    const Mat numeric = testutil::numeric_grad(value, params[i].value);
    EXPECT_LT(testutil::grad_rel_error(params[i].grad, numeric), tol) << "input " << i;
  }
}

Mat rnd(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return testutil::random_matrix(r, c, rng, scale);
}

}  // namespace

TEST(Autograd, Arithmetic) {
  check_op({rnd(3, 4, 1), rnd(3, 4, 2)}, [](auto&, auto& v) { return ag::add(v[0], v[1]); });
  check_op({rnd(3, 4, 1), rnd(3, 4, 2)}, [](auto&, auto& v) { return ag::sub(v[0], v[1]); });
  check_op({rnd(3, 4, 1), rnd(3, 4, 2)}, [](auto&, auto& v) { return ag::mul(v[0], v[1]); });
  check_op({rnd(3, 4, 1)}, [](auto&, auto& v) { return ag::scale(v[0], -2.5); });
  check_op({rnd(3, 4, 1), rnd(1, 4, 2)}, [](auto&, auto& v) { return ag::add_row(v[0], v[1]); });
  check_op({rnd(3, 4, 1), rnd(1, 4, 2)}, [](auto&, auto& v) { return ag::mul_row(v[0], v[1]); });
  check_op({rnd(3, 4, 1), rnd(4, 2, 2)}, [](auto&, auto& v) { return ag::matmul(v[0], v[1]); });
  check_op({rnd(3, 4, 1), rnd(4, 2, 2), rnd(1, 2, 3)}, [](auto&, auto& v) { return ag::linear(v[0], v[1], v[2]); });
}

TEST(Autograd, Nonlinearities) {
  check_op({rnd(5, 3, 4)}, [](auto&, auto& v) { return ag::relu(v[0]); });
  check_op({rnd(5, 3, 4, 4.0)}, [](auto&, auto& v) { return ag::sigmoid(v[0]); });
  check_op({rnd(5, 3, 4, 3.0)}, [](auto&, auto& v) { return ag::tanh(v[0]); });
  check_op({rnd(5, 3, 4, 6.0)}, [](auto&, auto& v) { return ag::softplus(v[0]); });
  Mat pos = rnd(5, 3, 4).array().abs() + 0.5;
  check_op({pos}, [](auto&, auto& v) { return ag::log(v[0]); });
}

TEST(Autograd, Reductions) {
  check_op({rnd(5, 3, 6)}, [](auto&, auto& v) { return ag::sum(v[0]); });
  check_op({rnd(5, 3, 6)}, [](auto&, auto& v) { return ag::sum_cols(v[0]); });
}

TEST(Autograd, Reshaping) {
  check_op({rnd(4, 2, 7), rnd(4, 3, 8)}, [](auto&, auto& v) { return ag::concat_cols(std::vector<V>{v[0], v[1]}); });
  check_op({rnd(4, 5, 7)}, [](auto&, auto& v) { return ag::slice_cols(v[0], 1, 3); });
  check_op({rnd(4, 2, 7)}, [](auto&, auto& v) { return ag::gather_rows(v[0], {3, 0, 0, 2}); });
  check_op({rnd(2, 3, 7), rnd(4, 3, 8)}, [](auto&, auto& v) { return ag::concat_rows(std::vector<V>{v[0], v[1]}); });
  check_op({rnd(4, 3, 7)}, [](auto&, auto& v) { return ag::reshape(v[0], 6, 2); });
}

TEST(Autograd, LowerBoundBlocksGradientBelowFloor) {
  ag::Tape<double> tape;
  ag::Parameter<double> p{"p", Mat(1, 2), Mat::Zero(1, 2)};
  p.value << 0.5, 1e-12;
  tape.backward(ag::sum(ag::lower_bound(tape.parameter(p), 1e-9)));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.grad(0, 1), 0.0);
}

TEST(Autograd, CdfDifference) {
  Mat lo = rnd(6, 1, 9, 5.0);
  Mat hi = lo.array() + 1.0;
  check_op({lo, hi}, [](auto&, auto& v) { return ag::cdf_difference(v[0], v[1]); });
  ag::Tape<double> tape(false);
  Mat l(1, 1), u(1, 1);
  l << -0.5;
  u << 0.5;
  const double p = ag::cdf_difference(tape.constant(l), tape.constant(u)).value()(0, 0);
  EXPECT_NEAR(p, 1 / (1 + std::exp(-0.5)) - 1 / (1 + std::exp(0.5)), 1e-15);
}

TEST(Autograd, CdfDifferenceIsAccurateInTheTail) {
  ag::Tape<double> tape(false);
  Mat l(1, 1), u(1, 1);
  l << 40.0;
  u << 41.0;
  const double p = ag::cdf_difference(tape.constant(l), tape.constant(u)).value()(0, 0);
  EXPECT_NEAR(p / (std::exp(-40.0) - std::exp(-41.0)), 1.0, 1e-6);
}

TEST(Autograd, BceWithLogits) {
  const std::vector<std::uint8_t> t{1, 0, 1, 1, 0};
  check_op({rnd(5, 1, 10, 3.0)}, [&](auto&, auto& v) { return ag::bce_with_logits_sum(v[0], t); });
  ag::Tape<double> tape(false);
  const double half = ag::bce_with_logits_sum(tape.constant(Mat::Zero(1, 1)), {1}).value()(0, 0);
  EXPECT_NEAR(half, std::log(2.0), 1e-15);
}

TEST(Autograd, PowerNormalize) {
  check_op({rnd(6, 1, 12)}, [](auto&, auto& v) { return ag::power_normalize(v[0]).output; });
  ag::Tape<double> tape(false);
  Mat x(2, 1);
  x << 3, 4;
  auto n = ag::power_normalize(tape.constant(x));
  EXPECT_NEAR(n.scale, 0.2, 1e-15);
  EXPECT_FALSE(n.degenerate);
  auto z = ag::power_normalize(tape.constant(Mat::Zero(4, 1)));
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.scale, 1.0);
  EXPECT_EQ(z.output.value(), Mat::Zero(4, 1));
  auto e = ag::power_normalize(tape.constant(Mat(0, 1)));
  EXPECT_FALSE(e.degenerate);
  EXPECT_EQ(e.output.rows(), 0);
}

TEST(Autograd, ComplexAffine) {
  const std::vector<std::complex<double>> a{{0.3, -1.2}, {2.0, 0.5}, {-0.7, 0.1}};
  const std::vector<std::complex<double>> b{{0.1, 0.2}, {-0.3, 0.0}, {0.0, 1.0}};
  check_op({rnd(6, 1, 13)}, [&](auto&, auto& v) { return ag::complex_affine(v[0], a, b); });
  ag::Tape<double> tape(false);
  Mat x(2, 1);
  x << 1, 2;
  auto y = ag::complex_affine(tape.constant(x), {{0.0, 1.0}}, {{1.0, 0.0}}).value();
  EXPECT_DOUBLE_EQ(y(0, 0), -1.0);  // i * (1 + 2i) + 1 = -1 + i
  EXPECT_DOUBLE_EQ(y(1, 0), 1.0);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  ag::Tape<double> tape;
  ag::Parameter<double> p{"p", Mat::Constant(1, 1, 3.0), Mat::Zero(1, 1)};
  V x = tape.parameter(p);
  tape.backward(ag::sum(ag::mul(x, x)));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 6.0);
}

TEST(Autograd, InferenceTapeRecordsNoGradient) {
  ag::Tape<double> tape(false);
  ag::Parameter<double> p{"p", Mat::Constant(1, 1, 3.0), Mat::Zero(1, 1)};
  V x = tape.parameter(p);
  EXPECT_FALSE(tape.requires_grad(x));
  tape.backward(ag::sum(ag::mul(x, x)));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 0.0);
}

TEST(Autograd, ShapeErrors) {
  ag::Tape<double> tape;
  EXPECT_THROW(ag::add(tape.constant(Mat::Zero(2, 2)), tape.constant(Mat::Zero(2, 3))), std::invalid_argument);
  EXPECT_THROW(tape.backward(tape.constant(Mat::Zero(2, 1))), std::invalid_argument);
  EXPECT_THROW(ag::power_normalize(tape.constant(Mat::Zero(3, 1))), std::invalid_argument);
}
