#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace quag {

// Which fusion path the model runs. Quag uses both perception and cognition
// blocks; Joint replaces them with elementwise sum (visual + audio) and
// elementwise product (audio-visual * query).
enum class FusionMode { Quag, Joint, MspOnly, Qc2Only };

std::string fusion_name(FusionMode mode);
FusionMode parse_fusion(const std::string& name);
bool uses_msp(FusionMode mode);
bool uses_qc2(FusionMode mode);

struct ModelConfig {
  std::size_t visual_dim = 32;
  std::size_t audio_dim = 32;
  std::size_t text_dim = 32;
  std::size_t dim = 64;
  std::size_t heads = 8;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t ffn_hidden = 0;  // 0 means 4 * dim
  std::size_t max_frames = 64;
  std::size_t max_caption_len = 16;
  std::size_t vocab_size = 32;
  double temperature = 0.07;
  bool msp_normalize = false;
  bool positional = true;
  FusionMode fusion = FusionMode::Quag;
  double dropout = 0.0;
  std::size_t max_steps = 16;
  std::size_t beam_width = 1;
  bool caption_full_moment = false;

  // Hidden size 768 as reported for the full-scale model.
  static ModelConfig paper();
  // D = 64 preset for CPU-scale runs.
  static ModelConfig desk();

  std::size_t hidden() const { return ffn_hidden == 0 ? 4 * dim : ffn_hidden; }
  void validate() const;
};

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch = 5;
  std::size_t epochs = 1;
  double lambda = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  static TrainConfig paper();
  static TrainConfig desk();
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// FNV-1a over the canonical JSON of the model configuration. Identifies which
// architecture a checkpoint belongs to.
std::uint64_t config_digest(const ModelConfig& config);

}  // namespace quag
