#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "quag/episode.hpp"

namespace quag::data {

struct SyntheticOptions {
  std::uint64_t seed = 0;
  std::size_t episodes = 4;
  std::size_t frames = 32;
  // Shared by the visual, audio and text streams so the planted query
  // signal lives in the same coordinates as the frames.
  std::size_t feature_dim = 32;
  std::size_t vocab_size = 32;
  double noise = 0.1;
  std::size_t topics = 8;
  std::size_t step_types = 6;
  std::size_t caption_words = 3;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticCorpus {
  Vocabulary vocabulary;
  std::vector<EpisodeRecord> episodes;
};

// Planted structure: frames inside the moment carry the episode's topic
// vector (which the query is a noisy copy of), each step adds its step-type
// vector, and everything gets i.i.d. Gaussian noise of std `noise`. Audio
// carries the same signal with independent noise. Each step's caption is a
// fixed word template of its step type. Pure function of the options.
SyntheticCorpus synthesize(const SyntheticOptions& options);

// Writes ep_XXXX.qep files, vocab.txt and manifest.json under out_dir
// (created if missing). With holdout > 0 the last `holdout` episodes also go
// to test.json and the rest to train.json. Returns the path of manifest.json.
std::filesystem::path generate_synthetic_dataset(const SyntheticOptions& options,
                                                 const std::filesystem::path& out_dir,
                                                 std::size_t holdout = 0);

}  // namespace quag::data
