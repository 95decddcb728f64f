#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "relprobe/autodiff.hpp"
#include "relprobe/error.hpp"
#include "relprobe/gradcheck.hpp"

using namespace relprobe;
using ad::Tape;
using ad::Var;

namespace {

std::vector<double> values(const Tape<double>& t, Var v) {
  auto s = t.value(v);
  return {s.begin(), s.end()};
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Autodiff, MaxOverTime) {
  Tape<double> t;
  Var x = t.input(2, 2, {1, 5, 3, 2});
  EXPECT_EQ(values(t, t.max_over_time(x)), (std::vector<double>{3, 5}));
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  std::vector<double> data(40);
  for (auto& v : data) v = n(rng);
  Tape<double> t;
  Var s = t.softmax_rows(t.input(8, 5, data));
  auto out = values(t, s);
  for (int r = 0; r < 8; ++r) EXPECT_NEAR(std::accumulate(out.begin() + r * 5, out.begin() + r * 5 + 5, 0.0), 1.0, 1e-6);
}

TEST(Autodiff, ConvMatchesSlidingWindowOracle) {
  // 5x3 input, width-2 filters, 4 output channels.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(15), w(6 * 4);
  for (auto& v : x) v = u(rng);
  for (auto& v : w) v = u(rng);
  Tape<double> t;
  Var conv = t.matmul(t.unfold(t.input(5, 3, x), 2), t.input(6, 4, w));
  ASSERT_EQ(t.rows(conv), 4u);
  auto got = values(t, conv);
  for (int pos = 0; pos < 4; ++pos) {
    for (int f = 0; f < 4; ++f) {
      double acc = 0;
      for (int k = 0; k < 2; ++k)
        for (int d = 0; d < 3; ++d) acc += x[(pos + k) * 3 + d] * w[(k * 3 + d) * 4 + f];
      EXPECT_NEAR(got[pos * 4 + f], acc, 1e-12);
    }
  }
}

TEST(Autodiff, UnfoldShortInputPads) {
  Tape<double> t;
  Var u = t.unfold(t.input(1, 2, {1, 2}), 3);
  EXPECT_EQ(values(t, u), (std::vector<double>{1, 2, 0, 0, 0, 0}));
}

TEST(Autodiff, LinearWeightGradIsInputTransposeTimesGradOut) {
  ad::ParamStore<double> ps;
  auto& w = ps.add("w", {3, 2});
  w.data = {0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
  const std::vector<double> x{1, 2, 3, -1, 0.5, 2};
  const std::vector<double> g{0.5, -1, 2, 0.25};
  Tape<double> t;
  Var y = t.matmul(t.input(2, 3, x), t.param(w));
  t.backward(t.sum_all(t.mul(y, t.input(2, 2, g))));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double expect = x[0 * 3 + i] * g[0 * 2 + j] + x[1 * 3 + i] * g[1 * 2 + j];
      EXPECT_DOUBLE_EQ(w.grad[i * 2 + j], expect);
    }
  }
}

TEST(Autodiff, LossGradientIsOneAndAccumulates) {
  ad::ParamStore<double> ps;
  auto& p = ps.add("p", {1, 2});
  p.data = {1.5, -2};
  for (int round = 1; round <= 3; ++round) {
    Tape<double> t;
    Var loss = t.sum_all(t.param(p));
    t.backward(loss);
    EXPECT_EQ(t.grad(loss)[0], 1.0);
    EXPECT_EQ(p.grad, (std::vector<double>{double(round), double(round)}));
  }
  ps.zero_grad();
  EXPECT_EQ(p.grad, (std::vector<double>{0, 0}));
}

TEST(Autodiff, Errors) {
  Tape<double> t;
  Var a = t.input(2, 3, std::vector<double>(6, 1));
  Var b = t.input(2, 3, std::vector<double>(6, 1));
  const std::string msg = error_of([&] { t.matmul(a, b); });
  EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
  EXPECT_NE(msg.find("node"), std::string::npos) << msg;
  EXPECT_THROW(t.backward(a), Error);
  EXPECT_THROW(t.add(a, t.input(1, 3, {1, 2, 3})), Error);

  ad::ParamStore<double> ps;
  ps.add("x", {2});
  EXPECT_THROW(ps.add("x", {2}), Error);
}

TEST(Autodiff, DropoutExpectationAndEval) {
  ad::Rng rng(5);
  const size_t n = 100000;
  Tape<double> t;
  Var x = t.input(1, n, std::vector<double>(n, 2.0));
  Var d = t.dropout(x, 0.3, ad::Mode::Train, rng);
  auto out = values(t, d);
  const double mean = std::accumulate(out.begin(), out.end(), 0.0) / n;
  EXPECT_NEAR(mean, 2.0, 0.02);
  size_t zeros = std::count(out.begin(), out.end(), 0.0);
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.3, 0.01);
  Var e = t.dropout(x, 0.3, ad::Mode::Eval, rng);
  EXPECT_EQ(values(t, e), std::vector<double>(n, 2.0));
}

TEST(Gradcheck, IdentityGraphIsExact) {
  ad::ParamStore<double> ps;
  auto& p = ps.add("p", {2, 3});
  double err = gradcheck(ps, [&](Tape<double>& t) { return t.sum_all(t.param(p)); });
  EXPECT_EQ(err, 0.0);
}

TEST(Gradcheck, NonFiniteThrows) {
  ad::ParamStore<double> ps;
  auto& p = ps.add("p", {1, 1});
  p.data = {1.0};
  EXPECT_THROW(gradcheck(ps,
                         [&](Tape<double>& t) {
                           return t.sum_all(t.scale(t.param(p), std::numeric_limits<double>::infinity()));
                         }),
               Error);
}

TEST(Gradcheck, DetectsWrongGradient) {
  // Stop-gradient through a constant copy: analytic 0, numeric 1.
  ad::ParamStore<double> ps;
  auto& p = ps.add("p", {1, 1});
  p.data = {0.5};
  double err = gradcheck(ps, [&](Tape<double>& t) { return t.sum_all(t.input(1, 1, {p.data[0]})); });
  EXPECT_GT(err, 0.5);
}

TEST(Gradcheck, EveryOp) {
  auto results = gradcheck_ops();
  EXPECT_GE(results.size(), 20u);
  for (const auto& r : results) {
    EXPECT_LT(r.max_rel_error, 1e-6) << r.name;
    EXPECT_GT(r.scalars, 0u) << r.name;
  }
}

TEST(Gradcheck, EveryEncoder) {
  auto results = gradcheck_encoders();
  ASSERT_EQ(results.size(), 4u);
  for (const auto& r : results) EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
}
