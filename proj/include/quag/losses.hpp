#pragma once

#include <span>
#include <string>
#include <vector>

#include "quag/heads.hpp"

namespace quag::loss {

enum class Task { Retrieval, Segmentation, Captioning };

std::string task_name(Task task);
Task parse_task(const std::string& name);

// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

// -(1/B) sum log p_start[y_start] - (1/B) sum log p_end[y_end].
Tensor retrieval_loss(std::span<const heads::SpanDistribution> dists,
                      std::span<const heads::MomentSpan> targets);

// Mean negative log-probability over step-prediction instances. A target that
// falls on a masked frame is an annotation error.
Tensor segmentation_loss(std::span<const heads::StepInstance> instances);

// Token NLL summed within each caption and averaged over captions. logits[i]
// is [L_i x V]; targets[i] has L_i ids, PAD positions are skipped.
Tensor caption_loss(std::span<const Tensor> logits, std::span<const std::vector<int>> targets,
                    int pad_id);

struct LossBundle {
  Task task = Task::Retrieval;
  Tensor task_loss;
  Tensor msp_loss;
  Tensor total;
  double lambda = 0.0;
};

// total = task_loss + lambda * msp_loss
LossBundle total_loss(Task task, const Tensor& task_loss, const Tensor& msp_loss, double lambda);

}  // namespace quag::loss
