#include "quag/ablation.hpp"

#include <cstdio>
#include <stdexcept>

#include "quag/metrics.hpp"
#include "quag/trainer.hpp"

namespace quag {

using nlohmann::json;

json run_ablation(const AblationOptions& options,
                  const std::function<void(const std::string&)>& progress) {
  if (options.seeds.empty() || options.modes.empty()) {
    throw std::invalid_argument("ablation: need at least one seed and one mode");
  }
  if (options.holdout == 0 || options.holdout >= options.episodes) {
    throw std::invalid_argument("ablation: holdout must leave both splits non-empty");
  }

  std::vector<double> sums(options.modes.size(), 0.0);
  json runs = json::array();
  for (auto seed : options.seeds) {
    data::SyntheticOptions so;
    so.seed = seed;
    so.episodes = options.episodes;
    so.frames = options.frames;
    so.feature_dim = options.feature_dim;
    so.noise = options.noise;
    auto corpus = data::synthesize(so);
    const auto cut = static_cast<std::ptrdiff_t>(options.episodes - options.holdout);
    const std::vector<data::EpisodeRecord> train_eps(corpus.episodes.begin(), corpus.episodes.begin() + cut);
    const std::vector<data::EpisodeRecord> test_eps(corpus.episodes.begin() + cut, corpus.episodes.end());

    json run = {{"seed", seed}};
    for (std::size_t m = 0; m < options.modes.size(); ++m) {
      ModelConfig mc = options.model;
      mc.visual_dim = mc.audio_dim = mc.text_dim = options.feature_dim;
      mc.vocab_size = corpus.vocabulary.size();
      mc.max_frames = std::max(mc.max_frames, options.frames);
      mc.fusion = options.modes[m];
      TrainConfig tc = options.train;
      tc.seed = seed;

      QuagModel model = QuagModel::create(mc, seed);
      Trainer trainer(model, train_eps, tc);
      for (std::size_t e = 0; e < tc.epochs; ++e) trainer.run_epoch();

      std::vector<double> ious;
      for (const auto& ep : test_eps) {
        ious.push_back(metrics::span_iou(metrics::to_interval(predict_moment(model, ep)),
                                         metrics::to_interval(ep.moment)));
      }
      const double recall = metrics::recall_at_iou(ious, 0.5);
      sums[m] += recall;
      run[fusion_name(mc.fusion)] = {{"recall@0.5", recall}, {"recall@0.7", metrics::recall_at_iou(ious, 0.7)}};
      if (progress) {
        char line[128];
        std::snprintf(line, sizeof(line), "seed %llu %-8s held-out R@0.5 %.4f",
                      static_cast<unsigned long long>(seed), fusion_name(mc.fusion).c_str(), recall);
        progress(line);
      }
    }
    runs.push_back(std::move(run));
  }

  json means = json::object();
  for (std::size_t m = 0; m < options.modes.size(); ++m) {
    means[fusion_name(options.modes[m])] = sums[m] / static_cast<double>(options.seeds.size());
  }
  const std::string lead = fusion_name(options.modes.front());
  json comparisons = json::array();
  bool all_hold = true;
  for (std::size_t m = 1; m < options.modes.size(); ++m) {
    const std::string other = fusion_name(options.modes[m]);
    const bool holds = means[lead].get<double>() >= means[other].get<double>();
    all_hold = all_hold && holds;
    comparisons.push_back({{"lhs", lead}, {"rhs", other}, {"lhs_ge_rhs", holds}});
  }

  json modes = json::array();
  for (auto mode : options.modes) modes.push_back(fusion_name(mode));
  return {{"metric", "held-out moment recall@0.5"},
          {"settings",
           {{"episodes", options.episodes},
            {"holdout", options.holdout},
            {"frames", options.frames},
            {"feature_dim", options.feature_dim},
            {"noise", options.noise},
            {"seeds", options.seeds},
            {"modes", modes},
            {"model", options.model},
            {"train", options.train}}},
          {"runs", runs},
          {"mean", means},
          {"comparisons", comparisons},
          {"direction_holds", all_hold}};
}

}  // namespace quag
