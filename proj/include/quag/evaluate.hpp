#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quag/episode.hpp"
#include "quag/model.hpp"

namespace quag {

struct EvalOptions {
  // Segmentation recall/precision pooled over all steps (default) or averaged
  // per episode.
  bool per_episode_segmentation = false;
  std::size_t threads = 1;
};

// Ground-truth annotations dressed up as predictions.
std::vector<Prediction> oracle_predictions(const data::Dataset& dataset);

// predict() over every episode, optionally on several threads. Output order
// follows the dataset.
std::vector<Prediction> predict_all(const QuagModel& model, const data::Dataset& dataset,
                                    std::size_t threads = 1);

nlohmann::json prediction_to_json(const Prediction& prediction);
Prediction prediction_from_json(const nlohmann::json& j);

// Scores predictions (aligned with dataset.episodes by id) and returns the
// report object. Captions are compared step by step in order; a missing
// predicted step counts as an empty caption.
nlohmann::json evaluate(const std::vector<Prediction>& predictions, const data::Dataset& dataset,
                        const EvalOptions& options = {});

// Throws std::invalid_argument naming the first offending JSON path.
void validate_report(const nlohmann::json& report);

// Plain-text tables of the headline numbers.
std::string render_report(const nlohmann::json& report);

}  // namespace quag
