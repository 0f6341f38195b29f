#include <gtest/gtest.h>

#include <cmath>

#include "quag/losses.hpp"

using namespace quag;

TEST(RetrievalLoss, UniformDistributionsGiveTwoLogN) {
  PrecisionScope f64(Precision::F64);
  const std::size_t n = 8;
  std::vector<heads::SpanDistribution> dists(2, {Tensor::full({n}, 1.0 / n), Tensor::full({n}, 1.0 / n)});
  std::vector<heads::MomentSpan> targets{{1, 3}, {0, 7}};
  EXPECT_NEAR(loss::retrieval_loss(dists, targets).item(), 2.0 * std::log(8.0), 1e-12);
}

TEST(RetrievalLoss, HandComputed) {
  PrecisionScope f64(Precision::F64);
  std::vector<heads::SpanDistribution> dists{
      {Tensor::from_values({3}, {0.5, 0.25, 0.25}), Tensor::from_values({3}, {0.1, 0.1, 0.8})}};
  std::vector<heads::MomentSpan> targets{{0, 2}};
  EXPECT_NEAR(loss::retrieval_loss(dists, targets).item(), -std::log(0.5) - std::log(0.8), 1e-12);
  std::vector<heads::MomentSpan> bad{{0, 3}};
  EXPECT_THROW(loss::retrieval_loss(dists, bad), std::out_of_range);
}

TEST(SegmentationLoss, MeanNegativeLogProbability) {
  PrecisionScope f64(Precision::F64);
  heads::StepInstance a{{Tensor::from_values({3}, {0.0, 0.5, 0.5}), Mask{1, 0, 0}}, 1};
  heads::StepInstance b{{Tensor::from_values({3}, {0.0, 0.0, 1.0}), Mask{1, 1, 0}}, 2};
  std::vector<heads::StepInstance> inst{a, b};
  EXPECT_NEAR(loss::segmentation_loss(inst).item(), 0.5 * std::log(2.0), 1e-12);
  heads::StepInstance masked{{Tensor::from_values({3}, {0.0, 0.5, 0.5}), Mask{1, 0, 0}}, 0};
  std::vector<heads::StepInstance> bad{masked};
  EXPECT_THROW(loss::segmentation_loss(bad), std::invalid_argument);
  EXPECT_THROW(loss::segmentation_loss({}), std::invalid_argument);
}

TEST(CaptionLoss, UniformLogitsSumPerCaption) {
  PrecisionScope f64(Precision::F64);
  std::vector<Tensor> logits{Tensor::zeros({3, 5}), Tensor::zeros({2, 5})};
  std::vector<std::vector<int>> targets{{4, 2, 0}, {3, 2}};
  // Caption 1 has two real tokens (one PAD), caption 2 has two.
  EXPECT_NEAR(loss::caption_loss(logits, targets, 0).item(), 2.0 * std::log(5.0), 1e-12);
  std::vector<std::vector<int>> oob{{4, 9, 0}, {3, 2}};
  EXPECT_THROW(loss::caption_loss(logits, oob, 0), std::out_of_range);
}

TEST(TotalLoss, WeightsAuxiliaryTerm) {
  const auto bundle = loss::total_loss(loss::Task::Segmentation, Tensor::scalar(2.0), Tensor::scalar(4.0), 0.25);
  EXPECT_DOUBLE_EQ(bundle.total.item(), 3.0);
  EXPECT_EQ(bundle.task, loss::Task::Segmentation);
  EXPECT_DOUBLE_EQ(loss::total_loss(loss::Task::Retrieval, Tensor::scalar(2.0), Tensor::scalar(4.0), 0.0).total.item(), 2.0);
  EXPECT_THROW(loss::total_loss(loss::Task::Retrieval, Tensor::scalar(1.0), Tensor::scalar(1.0), -0.1),
               std::invalid_argument);
}

TEST(TaskNames, RoundTrip) {
  for (auto t : {loss::Task::Retrieval, loss::Task::Segmentation, loss::Task::Captioning}) {
    EXPECT_EQ(loss::parse_task(loss::task_name(t)), t);
  }
  EXPECT_THROW(loss::parse_task("bogus"), std::invalid_argument);
}
