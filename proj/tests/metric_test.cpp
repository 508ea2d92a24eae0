#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "explink/error.hpp"
#include "explink/metric.hpp"

using namespace explink;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

std::vector<std::vector<double>> random_units(std::size_t n, std::size_t d,
                                              Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    out.push_back(unit(v));
  }
  return out;
}

std::vector<Var> inputs(Tape& t, const std::vector<std::vector<double>>& vs) {
  std::vector<Var> out;
  for (const auto& v : vs) out.push_back(t.input(v));
  return out;
}

double alpha_of(const std::vector<double>& a, const std::vector<double>& b) {
  Tape t;
  const Var va[] = {t.input(a)};
  const Var vb[] = {t.input(b)};
  return t.value(similarity_matrix(t, va, vb))[0];
}

}  // namespace

TEST(SimilarityMatrix, AnalyticValues) {
  const std::vector<double> u{1, 0, 0}, v{0, 1, 0}, w{-1, 0, 0};
  EXPECT_EQ(alpha_of(u, u), 0.0);
  EXPECT_DOUBLE_EQ(alpha_of(u, v), 0.5);
  EXPECT_DOUBLE_EQ(alpha_of(u, w), 1.0);
}

TEST(SimilarityMatrix, RejectsBadInput) {
  Tape t;
  std::vector<Var> none;
  const Var ok[] = {t.input({1.0, 0.0})};
  const Var loose[] = {t.input({2.0, 0.0})};
  const Var wrong_dim[] = {t.input({1.0, 0.0, 0.0})};
  EXPECT_THROW(similarity_matrix(t, none, ok), Error);
  EXPECT_THROW(similarity_matrix(t, ok, loose), Error);
  EXPECT_THROW(similarity_matrix(t, ok, wrong_dim), ShapeError);
}

TEST(KernelFeatures, AnalyticValues) {
  const auto bank = KernelBank::standard();
  ASSERT_EQ(bank.size(), 21u);
  EXPECT_EQ(bank[0].mu, 0.0);
  EXPECT_EQ(bank[0].sigma, 1e-3);
  EXPECT_DOUBLE_EQ(bank[20].mu, 1.0);
  for (std::size_t k = 0; k < bank.size(); ++k) {
    EXPECT_EQ(kernel_response(bank[k].mu, bank[k]), 1.0);
  }
  EXPECT_NEAR(kernel_response(0.6, {0.5, 0.1}), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(kernel_response(0.05, {0.0, 1e-3}), 0.0, 1e-300);
  EXPECT_THROW(KernelBank({{0.0, 0.0}}), Error);
}

TEST(Pool, SingleZeroEntry) {
  const auto bank = KernelBank::standard();
  const auto phi = pool_values({1, 1, {0.0}}, bank);
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const double expect = -bank[k].mu * bank[k].mu / (2 * bank[k].sigma * bank[k].sigma);
    EXPECT_NEAR(phi[k], expect, 1e-12);
  }
  EXPECT_EQ(phi[0], 0.0);
}

TEST(Pool, FloorAppliesToEmptyRows) {
  // Far from the exact-match kernel the row sum underflows to zero.
  const auto phi = pool_values({2, 1, {0.9, 0.9}}, KernelBank::standard());
  EXPECT_DOUBLE_EQ(phi[0], 2 * std::log(kPoolFloor));
}

TEST(Pool, TapeMatchesNaiveLoopAndPermutation) {
  const auto bank = KernelBank::standard();
  Rng rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  for (int trial = 0; trial < 20; ++trial) {
    AlphaMatrix a{dim(rng), dim(rng), {}};
    for (std::size_t i = 0; i < a.rows * a.cols; ++i) a.values.push_back(u(rng));
    std::vector<double> naive(bank.size(), 0.0);
    for (std::size_t k = 0; k < bank.size(); ++k) {
      for (std::size_t m = 0; m < a.rows; ++m) {
        double s = 0.0;
        for (std::size_t n = 0; n < a.cols; ++n) {
          const double d = a.values[m * a.cols + n] - bank[k].mu;
          s += std::exp(-d * d / (2 * bank[k].sigma * bank[k].sigma));
        }
        naive[k] += std::log(std::max(s, 1e-30));
      }
    }
    Tape t;
    const auto phi = t.value(pool(t, t.input(a.values, a.rows, a.cols), bank));
    for (std::size_t k = 0; k < bank.size(); ++k) EXPECT_NEAR(phi[k], naive[k], 1e-10);

    // Reverse the row order.
    AlphaMatrix r{a.rows, a.cols, {}};
    for (std::size_t m = a.rows; m-- > 0;) {
      r.values.insert(r.values.end(), a.values.begin() + m * a.cols,
                      a.values.begin() + (m + 1) * a.cols);
    }
    const auto phi_r = pool_values(r, bank);
    for (std::size_t k = 0; k < bank.size(); ++k) EXPECT_NEAR(phi_r[k], naive[k], 1e-10);
  }
}

TEST(Score, RangeAndPermutationInvariance) {
  MetricParams p;
  Rng rng(2);
  p.init(rng);
  const auto a = random_units(4, 6, rng);
  const auto b = random_units(5, 6, rng);
  const double s = score(p, a, b);
  EXPECT_LT(std::abs(s), 1.0);
  auto ra = a;
  auto rb = b;
  std::reverse(ra.begin(), ra.end());
  std::rotate(rb.begin(), rb.begin() + 2, rb.end());
  EXPECT_NEAR(score(p, ra, rb), s, 1e-12);
  Tape t;
  const auto va = inputs(t, a);
  const auto vb = inputs(t, b);
  EXPECT_NEAR(t.scalar_value(score(t, p, va, vb)), s, 1e-12);
}

TEST(Score, GradientsMatchFiniteDifferences) {
  MetricParams p;
  Rng rng(8);
  p.init(rng);
  // Embeddings as 1 x d parameters pushed through l2_normalize so the check
  // covers the input side as well.
  std::vector<ParamTensor> raw;
  for (int i = 0; i < 5; ++i) {
    raw.emplace_back("e" + std::to_string(i), 1, 4);
    std::normal_distribution<double> g;
    for (auto& x : raw.back().values) x = g(rng);
  }
  std::vector<ParamTensor*> params{&p.hidden, &p.output};
  for (auto& r : raw) params.push_back(&r);
  const double err = finite_diff_check(
      [&](Tape& t) {
        std::vector<Var> a, b;
        for (int i = 0; i < 5; ++i) {
          Var e = t.l2_normalize(t.linear(raw[i], t.input({1.0})));
          (i < 2 ? a : b).push_back(e);
        }
        return score(t, p, a, b);
      },
      params);
  EXPECT_LT(err, 1e-4);
}
