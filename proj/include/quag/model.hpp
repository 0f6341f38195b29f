#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "quag/config.hpp"
#include "quag/episode.hpp"
#include "quag/heads.hpp"
#include "quag/losses.hpp"
#include "quag/msp.hpp"
#include "quag/qc2.hpp"

namespace quag {

// All trainable state of the network. Tensors in `registry` alias the fields
// below, so updating one updates the other.
struct QuagModel {
  ModelConfig config;
  nn::Linear visual_proj;
  nn::Linear audio_proj;
  nn::Linear text_proj;
  Tensor visual_positions;  // [max_frames x D], absent when positional is off
  Tensor audio_positions;
  msp::MspParams msp;
  qc2::Qc2Params qc2;
  std::vector<nn::EncoderBlock> encoder;
  heads::RetrievalHead retrieval;
  heads::SegmentationHead segmentation;
  heads::CaptionDecoder decoder;
  nn::ParamRegistry registry;

  static QuagModel create(const ModelConfig& config, std::uint64_t seed);

  // Top-level parameter groups in registration order.
  static std::vector<std::string> groups();
};

// Per-episode encoding: the post-encoder representation plus the pooled
// projected streams used by the contrastive loss.
struct Encoding {
  Tensor repr;  // [N_v x D]
  Tensor pooled_visual;
  Tensor pooled_audio;
};

void check_episode_dims(const QuagModel& model, const data::EpisodeRecord& episode);

Encoding encode_episode(const QuagModel& model, const data::EpisodeRecord& episode,
                        const nn::Dropout& dropout = {});

// Contrastive loss over the pooled features of a batch, or a constant zero
// when the fusion mode has no perception block.
Tensor batch_msp_loss(const QuagModel& model, std::span<const Encoding> encodings);

// Teacher-forced caption pair for one step: [BOS, w...] and [w..., EOS],
// truncated to the decoder's position budget.
struct CaptionPair {
  std::vector<int> input;
  std::vector<int> target;
};
CaptionPair caption_pair(const std::vector<int>& words, const heads::SpecialTokens& tokens,
                         std::size_t max_positions);

// First and last frame fed to the decoder for step k.
std::pair<std::size_t, std::size_t> caption_window(const ModelConfig& config,
                                                   const heads::MomentSpan& moment,
                                                   std::span<const std::size_t> steps,
                                                   std::size_t k);

struct ForwardOutput {
  std::vector<Encoding> encodings;
  std::vector<heads::SpanDistribution> spans;        // retrieval
  std::vector<heads::StepInstance> steps;            // segmentation
  std::vector<Tensor> caption_logits;                // captioning, one per step
  std::vector<std::vector<int>> caption_targets;
  Tensor msp_loss;
};

ForwardOutput forward(const QuagModel& model, std::span<const data::EpisodeRecord* const> batch,
                      loss::Task task, const nn::Dropout& dropout = {});

loss::LossBundle batch_loss(const QuagModel& model,
                            std::span<const data::EpisodeRecord* const> batch, loss::Task task,
                            double lambda, const nn::Dropout& dropout = {});

struct Prediction {
  std::string id;
  heads::MomentSpan moment;
  std::vector<std::size_t> steps;
  std::vector<std::vector<int>> captions;
};

// Moment, then boundaries inside it, then one caption per step.
Prediction predict(const QuagModel& model, const data::EpisodeRecord& episode);

// Just the decoded moment.
heads::MomentSpan predict_moment(const QuagModel& model, const data::EpisodeRecord& episode);

}  // namespace quag
