#include "quag/model.hpp"

#include <stdexcept>

namespace quag {

QuagModel QuagModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Initializer init(seed);
  const std::size_t d = config.dim;
  QuagModel m;
  m.config = config;
  m.visual_proj = nn::Linear::create(config.visual_dim, d, init);
  m.audio_proj = nn::Linear::create(config.audio_dim, d, init);
  m.text_proj = nn::Linear::create(config.text_dim, d, init);
  if (config.positional) {
    m.visual_positions = init.xavier(config.max_frames, d);
    m.audio_positions = init.xavier(config.max_frames, d);
  }
  m.msp = msp::MspParams::create(d, config.heads, config.temperature, init);
  m.msp.normalize = config.msp_normalize;
  m.qc2 = qc2::Qc2Params::create(d, config.heads, init);
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    m.encoder.push_back(nn::EncoderBlock::create(d, config.heads, config.hidden(), init));
  }
  m.retrieval = heads::RetrievalHead::create(d, init);
  m.segmentation = heads::SegmentationHead::create(d, init);
  m.decoder = heads::CaptionDecoder::create(config.vocab_size, d, config.heads,
                                            config.decoder_layers, config.hidden(),
                                            config.max_caption_len, init);

  auto& r = m.registry;
  m.visual_proj.register_params("input.visual", r);
  m.audio_proj.register_params("input.audio", r);
  m.text_proj.register_params("input.text", r);
  if (config.positional) {
    r.add("input.visual_positions", m.visual_positions);
    r.add("input.audio_positions", m.audio_positions);
  }
  // Every mode keeps the full parameter set so checkpoints share a layout;
  // blocks a mode bypasses simply receive no gradient.
  m.msp.register_params("msp", r);
  m.qc2.register_params("qc2", r);
  for (std::size_t l = 0; l < m.encoder.size(); ++l) {
    m.encoder[l].register_params("encoder.layer" + std::to_string(l), r);
  }
  m.retrieval.register_params("retrieval", r);
  m.segmentation.register_params("segmentation", r);
  m.decoder.register_params("decoder", r);
  return m;
}

std::vector<std::string> QuagModel::groups() {
  return {"input", "msp", "qc2", "encoder", "retrieval", "segmentation", "decoder"};
}

void check_episode_dims(const QuagModel& model, const data::EpisodeRecord& ep) {
  const auto& c = model.config;
  auto fail = [&](const std::string& what) {
    throw ShapeError("episode '" + ep.id + "': " + what);
  };
  if (ep.visual.rank() != 2 || ep.visual.dim(1) != c.visual_dim) {
    fail("visual features " + shape_string(ep.visual.shape()) + " do not match visual_dim " +
         std::to_string(c.visual_dim));
  }
  if (ep.audio.rank() != 2 || ep.audio.dim(1) != c.audio_dim || ep.audio.dim(0) != ep.visual.dim(0)) {
    fail("audio features " + shape_string(ep.audio.shape()) + " do not match audio_dim " +
         std::to_string(c.audio_dim));
  }
  if (ep.query.numel() != c.text_dim) {
    fail("query length " + std::to_string(ep.query.numel()) + " does not match text_dim " +
         std::to_string(c.text_dim));
  }
  if (c.positional && ep.frames() > c.max_frames) {
    fail(std::to_string(ep.frames()) + " frames exceed max_frames " + std::to_string(c.max_frames));
  }
}

Encoding encode_episode(const QuagModel& model, const data::EpisodeRecord& ep,
                        const nn::Dropout& dropout) {
  check_episode_dims(model, ep);
  const std::size_t n = ep.frames();
  Tensor v = model.visual_proj(ep.visual);
  Tensor a = model.audio_proj(ep.audio);
  const Tensor t = model.text_proj(ep.query);

  Encoding out;
  const auto pooled = msp::global_pool(v, a);
  out.pooled_visual = pooled.visual;
  out.pooled_audio = pooled.audio;

  if (model.config.positional) {
    v = add(v, slice_rows(model.visual_positions, 0, n));
    a = add(a, slice_rows(model.audio_positions, 0, n));
  }

  const FusionMode mode = model.config.fusion;
  Tensor av;
  if (uses_msp(mode)) {
    const auto cross = msp::cross_modal_interact(v, a, model.msp);
    av = msp::fuse_audio_visual(cross.visual, cross.audio, model.msp);
  } else {
    av = add(v, a);
  }

  Tensor x = uses_qc2(mode) ? qc2::qc2_forward(av, t, model.qc2).query_centric
                            : mul(av, tile_rows(t, n));
  out.repr = nn::encoder_forward(x, model.encoder, dropout);
  return out;
}

Tensor batch_msp_loss(const QuagModel& model, std::span<const Encoding> encodings) {
  if (!uses_msp(model.config.fusion) || encodings.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> pv, pa;
  for (const auto& e : encodings) {
    pv.push_back(e.pooled_visual);
    pa.push_back(e.pooled_audio);
  }
  return msp::msp_contrastive_loss(concat_rows(pv), concat_rows(pa), model.msp.temperature,
                                   model.msp.normalize);
}

CaptionPair caption_pair(const std::vector<int>& words, const heads::SpecialTokens& tokens,
                         std::size_t max_positions) {
  if (max_positions < 1) throw std::invalid_argument("caption_pair: no decoder positions");
  const std::size_t keep = std::min(words.size(), max_positions - 1);
  CaptionPair p;
  p.input.push_back(tokens.bos);
  p.input.insert(p.input.end(), words.begin(), words.begin() + static_cast<std::ptrdiff_t>(keep));
  p.target.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(keep));
  p.target.push_back(tokens.eos);
  return p;
}

std::pair<std::size_t, std::size_t> caption_window(const ModelConfig& config,
                                                   const heads::MomentSpan& moment,
                                                   std::span<const std::size_t> steps,
                                                   std::size_t k) {
  if (config.caption_full_moment) return {moment.start, moment.end};
  const std::size_t first = k == 0 ? moment.start : steps[k - 1] + 1;
  return {first, steps[k]};
}

ForwardOutput forward(const QuagModel& model, std::span<const data::EpisodeRecord* const> batch,
                      loss::Task task, const nn::Dropout& dropout) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  ForwardOutput out;
  for (const auto* ep : batch) out.encodings.push_back(encode_episode(model, *ep, dropout));
  out.msp_loss = batch_msp_loss(model, out.encodings);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ep = *batch[i];
    const Tensor& repr = out.encodings[i].repr;
    switch (task) {
      case loss::Task::Retrieval:
        out.spans.push_back(heads::predict_moment_span(repr, model.retrieval));
        break;
      case loss::Task::Segmentation: {
        if (ep.steps.empty()) {
          throw std::invalid_argument("forward: episode '" + ep.id + "' has no step annotations");
        }
        auto inst = heads::teacher_forced_steps(repr, ep.moment, ep.steps, model.segmentation);
        for (auto& s : inst) out.steps.push_back(std::move(s));
        break;
      }
      case loss::Task::Captioning: {
        if (ep.captions.size() != ep.steps.size() || ep.captions.empty()) {
          throw std::invalid_argument("forward: episode '" + ep.id + "' needs one caption per step");
        }
        for (std::size_t k = 0; k < ep.steps.size(); ++k) {
          const auto [first, last] = caption_window(model.config, ep.moment, ep.steps, k);
          const auto pair = caption_pair(ep.captions[k], model.decoder.tokens,
                                         model.decoder.max_positions());
          out.caption_logits.push_back(
              model.decoder.logits(heads::step_memory(repr, first, last), pair.input, dropout));
          out.caption_targets.push_back(pair.target);
        }
        break;
      }
    }
  }
  return out;
}

loss::LossBundle batch_loss(const QuagModel& model,
                            std::span<const data::EpisodeRecord* const> batch, loss::Task task,
                            double lambda, const nn::Dropout& dropout) {
  const auto out = forward(model, batch, task, dropout);
  Tensor task_loss;
  switch (task) {
    case loss::Task::Retrieval: {
      std::vector<heads::MomentSpan> targets;
      for (const auto* ep : batch) targets.push_back(ep->moment);
      task_loss = loss::retrieval_loss(out.spans, targets);
      break;
    }
    case loss::Task::Segmentation:
      task_loss = loss::segmentation_loss(out.steps);
      break;
    case loss::Task::Captioning:
      task_loss = loss::caption_loss(out.caption_logits, out.caption_targets,
                                     model.decoder.tokens.pad);
      break;
  }
  return loss::total_loss(task, task_loss, out.msp_loss, lambda);
}

Prediction predict(const QuagModel& model, const data::EpisodeRecord& episode) {
  NoGradScope no_grad;
  const auto enc = encode_episode(model, episode);
  Prediction p;
  p.id = episode.id;
  p.moment = heads::decode_moment(heads::predict_moment_span(enc.repr, model.retrieval));
  p.steps = heads::predict_step_boundaries(enc.repr, p.moment, model.segmentation,
                                           model.config.max_steps);
  for (std::size_t k = 0; k < p.steps.size(); ++k) {
    const auto [first, last] = caption_window(model.config, p.moment, p.steps, k);
    p.captions.push_back(heads::decode_step_caption(heads::step_memory(enc.repr, first, last),
                                                    model.decoder, model.config.max_caption_len,
                                                    model.config.beam_width));
  }
  return p;
}

heads::MomentSpan predict_moment(const QuagModel& model, const data::EpisodeRecord& episode) {
  NoGradScope no_grad;
  const auto enc = encode_episode(model, episode);
  return heads::decode_moment(heads::predict_moment_span(enc.repr, model.retrieval));
}

}  // namespace quag
