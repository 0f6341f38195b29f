#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quag/grad_check.hpp"
#include "quag/losses.hpp"
#include "quag/model.hpp"

namespace quag {

// A seeded toy setting small enough for exhaustive finite differences:
// N_v = 5 frames, D = 8, 2 heads, vocabulary of 12, two annotated episodes.
struct TinyInstance {
  ModelConfig config;
  std::vector<data::EpisodeRecord> episodes;
};

TinyInstance make_tiny_instance(std::uint64_t seed, FusionMode fusion = FusionMode::Quag);

struct GroupCheck {
  std::string group;
  loss::Task task = loss::Task::Retrieval;
  GradCheckResult result;
  bool passed = false;
};

inline constexpr double kModelGradTolerance = 1e-3;

struct ModelCheckOptions {
  std::uint64_t seed = 0;
  std::vector<std::string> groups;  // empty means every group
  double lambda = 0.1;
  double step = 1e-3;
  // When set, the total loss passes through corrupt_backward with this factor.
  double fault_factor = 1.0;
  FusionMode fusion = FusionMode::Quag;
};

// grad_check of the total loss of every task branch with respect to each
// requested parameter group.
std::vector<GroupCheck> check_model_gradients(const ModelCheckOptions& options);

}  // namespace quag
