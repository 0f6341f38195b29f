#include "quag/msp.hpp"

namespace quag::msp {

MspParams MspParams::create(std::size_t dim, std::size_t heads, double temperature,
                            nn::Initializer& init) {
  if (!(temperature > 0.0)) throw std::invalid_argument("msp: temperature must be positive");
  MspParams p;
  p.visual_to_audio = nn::MultiHeadAttention::create(dim, heads, init);
  p.audio_to_visual = nn::MultiHeadAttention::create(dim, heads, init);
  p.fusion = nn::Linear::create(2 * dim, dim, init);
  p.temperature = temperature;
  return p;
}

void MspParams::register_params(const std::string& prefix, nn::ParamRegistry& registry) const {
  visual_to_audio.register_params(prefix + ".visual_to_audio", registry);
  audio_to_visual.register_params(prefix + ".audio_to_visual", registry);
  fusion.register_params(prefix + ".fusion", registry);
}

PooledFeatures global_pool(const Tensor& visual, const Tensor& audio) {
  if (visual.rank() != 2 || audio.rank() != 2 || visual.shape() != audio.shape()) {
    throw ShapeError("global_pool: visual " + shape_string(visual.shape()) + " and audio " +
                     shape_string(audio.shape()) + " must both be [N_v x D] with equal N_v");
  }
  return {mean_axis(visual, 0), mean_axis(audio, 0)};
}

Tensor msp_contrastive_loss(const Tensor& batch_visual, const Tensor& batch_audio,
                            double temperature, bool normalize) {
  if (!(temperature > 0.0)) throw std::invalid_argument("msp_contrastive_loss: temperature must be positive");
  if (batch_visual.rank() != 2 || batch_visual.shape() != batch_audio.shape()) {
    throw ShapeError("msp_contrastive_loss: batch mismatch " + shape_string(batch_visual.shape()) +
                     " vs " + shape_string(batch_audio.shape()));
  }
  const std::size_t b = batch_visual.dim(0);
  const Tensor v = normalize ? l2_normalize_rows(batch_visual) : batch_visual;
  const Tensor a = normalize ? l2_normalize_rows(batch_audio) : batch_audio;
  const Tensor sim = scale(matmul(v, transpose(a)), 1.0 / temperature);
  const Tensor v2a = log_softmax(sim);             // rows: visual k against all audio
  const Tensor a2v = log_softmax(transpose(sim));  // rows: audio k against all visual
  std::vector<Tensor> diag_v2a, diag_a2v;
  for (std::size_t k = 0; k < b; ++k) {
    diag_v2a.push_back(select(v2a, k * b + k));
    diag_a2v.push_back(select(a2v, k * b + k));
  }
  const Tensor loss_v2a = scale(mean(concat_rows(diag_v2a)), -1.0);
  const Tensor loss_a2v = scale(mean(concat_rows(diag_a2v)), -1.0);
  return scale(add(loss_v2a, loss_a2v), 0.5);
}

CrossModal cross_modal_interact(const Tensor& visual, const Tensor& audio,
                                const MspParams& params) {
  if (visual.shape() != audio.shape()) {
    throw ShapeError("cross_modal_interact: visual " + shape_string(visual.shape()) +
                     " and audio " + shape_string(audio.shape()) + " differ");
  }
  return {params.visual_to_audio(visual, audio, audio),
          params.audio_to_visual(audio, visual, visual)};
}

Tensor fuse_audio_visual(const Tensor& visual, const Tensor& audio, const MspParams& params) {
  if (visual.shape() != audio.shape()) {
    throw ShapeError("fuse_audio_visual: shape mismatch " + shape_string(visual.shape()) + " vs " +
                     shape_string(audio.shape()));
  }
  return params.fusion(concat_last(visual, audio));
}

MspOutput msp_forward(std::span<const Tensor> visuals, std::span<const Tensor> audios,
                      const MspParams& params) {
  if (visuals.size() != audios.size() || visuals.empty()) {
    throw std::invalid_argument("msp_forward: need equal, non-empty visual and audio batches");
  }
  MspOutput out;
  std::vector<Tensor> pooled_v, pooled_a;
  for (std::size_t i = 0; i < visuals.size(); ++i) {
    auto pooled = global_pool(visuals[i], audios[i]);
    pooled_v.push_back(pooled.visual);
    pooled_a.push_back(pooled.audio);
    auto cross = cross_modal_interact(visuals[i], audios[i], params);
    out.fused.push_back(fuse_audio_visual(cross.visual, cross.audio, params));
  }
  out.contrastive_loss = msp_contrastive_loss(concat_rows(pooled_v), concat_rows(pooled_a),
                                              params.temperature, params.normalize);
  return out;
}

}  // namespace quag::msp
