#include "quag/losses.hpp"

#include <cmath>

namespace quag::loss {

std::string task_name(Task task) {
  switch (task) {
    case Task::Retrieval: return "ret";
    case Task::Segmentation: return "seg";
    case Task::Captioning: return "cap";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "ret") return Task::Retrieval;
  if (name == "seg") return Task::Segmentation;
  if (name == "cap") return Task::Captioning;
  throw std::invalid_argument("unknown task: " + name);
}

Tensor retrieval_loss(std::span<const heads::SpanDistribution> dists,
                      std::span<const heads::MomentSpan> targets) {
  if (dists.empty() || dists.size() != targets.size()) {
    throw std::invalid_argument("retrieval_loss: need one target per distribution");
  }
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const std::size_t n = dists[i].p_start.numel();
    if (targets[i].start >= n || targets[i].end >= n) {
      throw std::out_of_range("retrieval_loss: target (" + std::to_string(targets[i].start) + ", " +
                              std::to_string(targets[i].end) + ") outside " + std::to_string(n) +
                              " frames");
    }
    terms.push_back(log_clamped(select(dists[i].p_start, targets[i].start), kProbabilityFloor));
    terms.push_back(log_clamped(select(dists[i].p_end, targets[i].end), kProbabilityFloor));
  }
  return scale(sum(concat_rows(terms)), -1.0 / static_cast<double>(dists.size()));
}

Tensor segmentation_loss(std::span<const heads::StepInstance> instances) {
  if (instances.empty()) throw std::invalid_argument("segmentation_loss: no step instances");
  std::vector<Tensor> terms;
  for (const auto& inst : instances) {
    if (inst.target >= inst.dist.probs.numel()) {
      throw std::out_of_range("segmentation_loss: target index " + std::to_string(inst.target) +
                              " outside distribution");
    }
    if (inst.dist.mask.at(inst.target)) {
      throw std::invalid_argument("segmentation_loss: target index " + std::to_string(inst.target) +
                                  " is masked; boundaries and mask disagree");
    }
    terms.push_back(log_clamped(select(inst.dist.probs, inst.target), kProbabilityFloor));
  }
  return scale(sum(concat_rows(terms)), -1.0 / static_cast<double>(instances.size()));
}

Tensor caption_loss(std::span<const Tensor> logits, std::span<const std::vector<int>> targets,
                    int pad_id) {
  if (logits.empty() || logits.size() != targets.size()) {
    throw std::invalid_argument("caption_loss: need one target sequence per logits tensor");
  }
  std::vector<Tensor> per_caption;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const Tensor& lg = logits[c];
    if (lg.rank() != 2 || lg.dim(0) != targets[c].size()) {
      throw ShapeError("caption_loss: logits " + shape_string(lg.shape()) + " vs " +
                       std::to_string(targets[c].size()) + " targets");
    }
    const std::size_t v = lg.dim(1);
    const Tensor log_probs = log_softmax(lg);
    std::vector<Tensor> picks;
    for (std::size_t i = 0; i < targets[c].size(); ++i) {
      const int tok = targets[c][i];
      if (tok < 0 || static_cast<std::size_t>(tok) >= v) {
        throw std::out_of_range("caption_loss: token id " + std::to_string(tok) +
                                " outside vocabulary of " + std::to_string(v));
      }
      if (tok == pad_id) continue;
      picks.push_back(select(log_probs, i * v + static_cast<std::size_t>(tok)));
    }
    per_caption.push_back(picks.empty() ? Tensor::scalar(0.0) : sum(concat_rows(picks)));
  }
  return scale(sum(concat_rows(per_caption)), -1.0 / static_cast<double>(logits.size()));
}

LossBundle total_loss(Task task, const Tensor& task_loss, const Tensor& msp_loss, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be nonnegative");
  LossBundle bundle;
  bundle.task = task;
  bundle.task_loss = task_loss;
  bundle.msp_loss = msp_loss;
  bundle.lambda = lambda;
  bundle.total = add(task_loss, scale(msp_loss, lambda));
  return bundle;
}

}  // namespace quag::loss
