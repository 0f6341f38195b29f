#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quag/config.hpp"
#include "quag/synthetic.hpp"

namespace quag {

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<FusionMode> modes{FusionMode::Quag, FusionMode::Joint};
  std::size_t episodes = 32;
  std::size_t holdout = 8;
  std::size_t frames = 32;
  std::size_t feature_dim = 32;
  double noise = 0.5;
  ModelConfig model = ModelConfig::desk();
  TrainConfig train = TrainConfig::desk();  // epochs set by the caller
};

// Held-out moment recall@0.5 for each mode and seed. Each seed generates its
// own corpus, trains every mode from the same initialization seed and scores
// the last `holdout` episodes. The report compares mean recall of the first
// mode against every other mode; `progress` (if set) receives one line per run.
nlohmann::json run_ablation(const AblationOptions& options,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace quag
