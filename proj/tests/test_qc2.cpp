#include <gtest/gtest.h>

#include <random>

#include "quag/qc2.hpp"

using namespace quag;

namespace {

Tensor noise(Shape shape, std::uint64_t seed, double amp) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, amp);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from_values(std::move(shape), std::move(v));
}

}  // namespace

TEST(Qc2, GatesInOpenIntervalAndOuterProduct) {
  nn::Initializer init(11);
  const auto params = qc2::Qc2Params::create(8, 2, init);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ctx = qc2::fuse_query_context(noise({7, 8}, seed, 3.0), noise({8}, seed + 100, 3.0), params);
    const auto gates = qc2::compute_gates(ctx, params);
    ASSERT_EQ(gates.temporal.shape(), (Shape{7, 1}));
    ASSERT_EQ(gates.channel.shape(), (Shape{1, 8}));
    ASSERT_EQ(gates.combined.shape(), (Shape{7, 8}));
    for (double g : gates.temporal.data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    for (double g : gates.channel.data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_NEAR(gates.combined.at(i, j), gates.temporal.at(i) * gates.channel.at(j), 1e-6);
      }
    }
  }
}

TEST(Qc2, FiltrationIsElementwise) {
  nn::Initializer init(12);
  const auto params = qc2::Qc2Params::create(4, 1, init);
  const auto av = noise({3, 4}, 1, 1.0);
  const auto gates = qc2::compute_gates(qc2::fuse_query_context(av, noise({4}, 2, 1.0), params), params);
  const auto filtered = qc2::apply_filtration(av, gates);
  for (std::size_t k = 0; k < 12; ++k) {
    EXPECT_NEAR(filtered.at(k), gates.combined.at(k) * av.at(k), 1e-6);
  }
}

TEST(Qc2, ForwardShapesAndMismatch) {
  nn::Initializer init(13);
  const auto params = qc2::Qc2Params::create(8, 2, init);
  const auto out = qc2::qc2_forward(noise({5, 8}, 3, 1.0), noise({8}, 4, 1.0), params);
  EXPECT_EQ(out.query_centric.shape(), (Shape{5, 8}));
  EXPECT_EQ(out.filtered.shape(), (Shape{5, 8}));
  EXPECT_THROW(qc2::qc2_forward(noise({5, 8}, 3, 1.0), noise({6}, 4, 1.0), params), ShapeError);
}

TEST(Qc2, QueryChangesTheRepresentation) {
  nn::Initializer init(14);
  const auto params = qc2::Qc2Params::create(8, 2, init);
  const auto av = noise({5, 8}, 5, 1.0);
  const auto a = qc2::qc2_forward(av, noise({8}, 6, 1.0), params).query_centric;
  const auto b = qc2::qc2_forward(av, noise({8}, 7, 1.0), params).query_centric;
  double diff = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) diff += std::abs(a.at(k) - b.at(k));
  EXPECT_GT(diff, 1e-3);
}
