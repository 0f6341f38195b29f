#include "quag/config.hpp"

#include <stdexcept>

namespace quag {

std::string fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::Quag: return "quag";
    case FusionMode::Joint: return "joint";
    case FusionMode::MspOnly: return "msp-only";
    case FusionMode::Qc2Only: return "qc2-only";
  }
  return "?";
}

FusionMode parse_fusion(const std::string& name) {
  if (name == "quag") return FusionMode::Quag;
  if (name == "joint") return FusionMode::Joint;
  if (name == "msp-only") return FusionMode::MspOnly;
  if (name == "qc2-only") return FusionMode::Qc2Only;
  throw std::invalid_argument("unknown fusion mode '" + name + "' (expected quag, joint, msp-only, qc2-only)");
}

bool uses_msp(FusionMode mode) { return mode == FusionMode::Quag || mode == FusionMode::MspOnly; }
bool uses_qc2(FusionMode mode) { return mode == FusionMode::Quag || mode == FusionMode::Qc2Only; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.visual_dim = c.audio_dim = c.text_dim = 768;
  c.dim = 768;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  require(visual_dim > 0 && audio_dim > 0 && text_dim > 0, "input dims must be positive");
  require(dim > 0, "dim must be positive");
  require(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
  require(max_frames > 0, "max_frames must be positive");
  require(max_caption_len > 0, "max_caption_len must be positive");
  require(vocab_size >= 5, "vocab_size must cover the four special tokens plus one word");
  require(temperature > 0.0, "temperature must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_steps >= 1, "max_steps must be at least 1");
  require(beam_width >= 1, "beam_width must be at least 1");
}

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.lr = 1e-3;
  c.batch = 4;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must be nonnegative");
  if (batch == 0) throw std::invalid_argument("train config: batch must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("train config: lambda must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train config: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train config: eps must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be nonnegative");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"visual_dim", c.visual_dim},
                     {"audio_dim", c.audio_dim},
                     {"text_dim", c.text_dim},
                     {"dim", c.dim},
                     {"heads", c.heads},
                     {"encoder_layers", c.encoder_layers},
                     {"decoder_layers", c.decoder_layers},
                     {"ffn_hidden", c.ffn_hidden},
                     {"max_frames", c.max_frames},
                     {"max_caption_len", c.max_caption_len},
                     {"vocab_size", c.vocab_size},
                     {"temperature", c.temperature},
                     {"msp_normalize", c.msp_normalize},
                     {"positional", c.positional},
                     {"fusion", fusion_name(c.fusion)},
                     {"dropout", c.dropout},
                     {"max_steps", c.max_steps},
                     {"beam_width", c.beam_width},
                     {"caption_full_moment", c.caption_full_moment}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.visual_dim = j.value("visual_dim", d.visual_dim);
  c.audio_dim = j.value("audio_dim", d.audio_dim);
  c.text_dim = j.value("text_dim", d.text_dim);
  c.dim = j.value("dim", d.dim);
  c.heads = j.value("heads", d.heads);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.ffn_hidden = j.value("ffn_hidden", d.ffn_hidden);
  c.max_frames = j.value("max_frames", d.max_frames);
  c.max_caption_len = j.value("max_caption_len", d.max_caption_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.temperature = j.value("temperature", d.temperature);
  c.msp_normalize = j.value("msp_normalize", d.msp_normalize);
  c.positional = j.value("positional", d.positional);
  c.fusion = parse_fusion(j.value("fusion", fusion_name(d.fusion)));
  c.dropout = j.value("dropout", d.dropout);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.beam_width = j.value("beam_width", d.beam_width);
  c.caption_full_moment = j.value("caption_full_moment", d.caption_full_moment);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},       {"batch", c.batch}, {"epochs", c.epochs},
                     {"lambda", c.lambda}, {"beta1", c.beta1}, {"beta2", c.beta2},
                     {"eps", c.eps},     {"weight_decay", c.weight_decay}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.batch = j.value("batch", d.batch);
  c.epochs = j.value("epochs", d.epochs);
  c.lambda = j.value("lambda", d.lambda);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seed = j.value("seed", d.seed);
}

std::uint64_t config_digest(const ModelConfig& config) {
  const std::string canonical = nlohmann::json(config).dump();
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace quag
