#pragma once

#include <span>
#include <vector>

#include "quag/nn.hpp"

// Modality-synergistic perception: contrastive global alignment of the
// visual and audio streams followed by bidirectional cross-attention and a
// fully-connected fusion.
namespace quag::msp {

struct MspParams {
  nn::MultiHeadAttention visual_to_audio;  // visual queries attend to audio
  nn::MultiHeadAttention audio_to_visual;  // audio queries attend to visual
  nn::Linear fusion;                       // W_c: 2D -> D
  double temperature = 0.07;
  bool normalize = false;  // cosine instead of raw dot-product similarity

  static MspParams create(std::size_t dim, std::size_t heads, double temperature,
                          nn::Initializer& init);
  void register_params(const std::string& prefix, nn::ParamRegistry& registry) const;
};

struct PooledFeatures {
  Tensor visual;  // [D]
  Tensor audio;   // [D]
};

// Mean over frames of each stream. Both streams must have the same length.
PooledFeatures global_pool(const Tensor& visual, const Tensor& audio);

// Symmetric InfoNCE over the BxB similarity matrix of pooled features.
// Row i of batch_visual pairs with row i of batch_audio; every other row in
// the batch is a negative.
Tensor msp_contrastive_loss(const Tensor& batch_visual, const Tensor& batch_audio,
                            double temperature, bool normalize = false);

struct CrossModal {
  Tensor visual;  // visual attended over audio
  Tensor audio;   // audio attended over visual
};

CrossModal cross_modal_interact(const Tensor& visual, const Tensor& audio,
                                const MspParams& params);

// linear([visual ; audio]) with the 2D -> D fusion layer.
Tensor fuse_audio_visual(const Tensor& visual, const Tensor& audio, const MspParams& params);

struct MspOutput {
  std::vector<Tensor> fused;  // one [N_v x D] per episode
  Tensor contrastive_loss;    // scalar
};

// Runs the whole block over a batch of episodes. The contrastive loss uses
// the pooled streams as given, before cross-attention.
MspOutput msp_forward(std::span<const Tensor> visuals, std::span<const Tensor> audios,
                      const MspParams& params);

}  // namespace quag::msp
