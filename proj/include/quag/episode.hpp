#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "quag/heads.hpp"
#include "quag/tensor.hpp"

namespace quag::data {

// One video-query pair with its annotations. Feature tensors hold per-modality
// extractor dimensions; the model projects them to its hidden size.
struct EpisodeRecord {
  std::string id;
  Tensor visual;  // [N_v x D_v]
  Tensor audio;   // [N_v x D_a]
  Tensor query;   // [D_t]
  heads::MomentSpan moment;          // inclusive frame indices, start < end
  std::vector<std::size_t> steps;    // ascending boundaries in (start, end], last == end
  std::vector<std::vector<int>> captions;  // token ids per step (no BOS/EOS)
  std::vector<std::string> caption_text;   // raw caption per step

  std::size_t frames() const { return visual.dim(0); }
};

enum class EpisodeErrorCode { Io, CorruptHeader, Truncated, InvariantViolation };

class EpisodeError : public std::runtime_error {
 public:
  EpisodeError(EpisodeErrorCode code, std::string field, const std::string& message)
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}
  EpisodeErrorCode code() const { return code_; }
  const std::string& field() const { return field_; }

 private:
  EpisodeErrorCode code_;
  std::string field_;
};

// Throws EpisodeError(InvariantViolation) naming the first offending field.
void validate_episode(const EpisodeRecord& record);

// Episode file layout, all integers little-endian:
//   8 bytes   magic "QUAGEPIS"
//   u32       format version (1)
//   u32       metadata length M
//   M bytes   UTF-8 JSON metadata (sorted keys)
//   f32 x N_v*D_v visual, f32 x N_v*D_a audio, f32 x D_t query
inline constexpr char kEpisodeMagic[8] = {'Q', 'U', 'A', 'G', 'E', 'P', 'I', 'S'};
inline constexpr std::uint32_t kEpisodeVersion = 1;

std::vector<unsigned char> encode_episode(const EpisodeRecord& record);
EpisodeRecord decode_episode(std::span<const unsigned char> bytes);

void write_episode(const EpisodeRecord& record, const std::filesystem::path& path);
EpisodeRecord load_episode(const std::filesystem::path& path);

// Newline-delimited tokens; line number is the token id. The four special
// tokens occupy ids 0..3.
class Vocabulary {
 public:
  Vocabulary();
  static Vocabulary from_words(const std::vector<std::string>& words);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;  // UNK when absent
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::string& text) const;
  std::string decode(std::span<const int> ids) const;

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercase + whitespace split.
std::vector<std::string> tokenize(const std::string& text);

struct FeatureDims {
  std::size_t visual = 0;
  std::size_t audio = 0;
  std::size_t text = 0;
  bool operator==(const FeatureDims&) const = default;
};

struct DatasetManifest {
  std::string split;
  std::vector<std::string> episodes;  // relative to the manifest directory
  std::string vocabulary;             // relative to the manifest directory
  FeatureDims dims;
  nlohmann::json generator;           // provenance of synthetic data, may be null

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

struct Dataset {
  DatasetManifest manifest;
  Vocabulary vocabulary;
  std::vector<EpisodeRecord> episodes;
};

// Loads and validates every referenced file; feature dims must agree with
// the manifest across all episodes.
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace quag::data
