#pragma once

#include <cstddef>
#include <vector>

#include "quag/nn.hpp"

namespace quag::heads {

// Reserved vocabulary ids. Vocabulary files list these first.
struct SpecialTokens {
  int pad = 0;
  int bos = 1;
  int eos = 2;
  int unk = 3;
};

// Inclusive frame indices, start <= end.
struct MomentSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const MomentSpan&) const = default;
};

struct SpanDistribution {
  Tensor p_start;  // [N_v], sums to 1
  Tensor p_end;    // [N_v], sums to 1
};

struct RetrievalHead {
  nn::Linear start;  // W_s, b_s: D -> 1
  nn::Linear end;    // W_e, b_e: D -> 1

  static RetrievalHead create(std::size_t dim, nn::Initializer& init);
  void register_params(const std::string& prefix, nn::ParamRegistry& registry) const;
};

SpanDistribution predict_moment_span(const Tensor& repr, const RetrievalHead& head);

// (argmax p_start, argmax p_end), argmax ties going to the earliest start and
// the latest end. If that pair is inverted, the s <= e pair with the largest
// p_start[s] * p_end[e] wins; ties prefer the widest, then the earliest span.
MomentSpan decode_moment(std::span<const double> p_start, std::span<const double> p_end);
MomentSpan decode_moment(const SpanDistribution& dist);

struct SegmentationHead {
  nn::Linear step;  // W_t, b_t: D -> 1
  Tensor marker;    // [D], added at each committed boundary frame

  static SegmentationHead create(std::size_t dim, nn::Initializer& init);
  void register_params(const std::string& prefix, nn::ParamRegistry& registry) const;
};

struct StepDistribution {
  Tensor probs;  // [N_v]
  Mask mask;     // nonzero where the frame is excluded
};

// Frames outside [span.start, span.end] or at/before last_committed are
// masked. last_committed starts at span.start.
Mask step_mask(std::size_t frames, const MomentSpan& span, std::size_t last_committed);

// Distribution over the next boundary given the boundaries committed so far.
StepDistribution step_distribution(const Tensor& repr, const MomentSpan& span,
                                   std::span<const std::size_t> committed,
                                   const SegmentationHead& head);

// Autoregressive boundary prediction. The returned list is strictly
// ascending, lies in (span.start, span.end] and always ends at span.end.
std::vector<std::size_t> predict_step_boundaries(const Tensor& repr, const MomentSpan& span,
                                                 const SegmentationHead& head,
                                                 std::size_t max_steps);

struct StepInstance {
  StepDistribution dist;
  std::size_t target = 0;
};

// One prediction instance per ground-truth boundary, each conditioned on the
// ground-truth boundaries before it.
std::vector<StepInstance> teacher_forced_steps(const Tensor& repr, const MomentSpan& span,
                                               std::span<const std::size_t> boundaries,
                                               const SegmentationHead& head);

struct CaptionDecoder {
  Tensor token_embedding;  // [V x D]
  Tensor positions;        // [max_len x D]
  std::vector<nn::DecoderBlock> blocks;
  nn::Linear output;       // D -> V
  SpecialTokens tokens;

  static CaptionDecoder create(std::size_t vocab_size, std::size_t dim, std::size_t heads,
                               std::size_t layers, std::size_t hidden, std::size_t max_len,
                               nn::Initializer& init);
  void register_params(const std::string& prefix, nn::ParamRegistry& registry) const;

  std::size_t vocab_size() const { return output.out_features(); }
  std::size_t max_positions() const { return positions.dim(0); }

  // Teacher-forced logits for an input sequence starting with BOS: [L x V].
  Tensor logits(const Tensor& memory, std::span<const int> input,
                const nn::Dropout& dropout = {}) const;
};

// Frames [first, last] of the representation, used as decoder memory.
Tensor step_memory(const Tensor& repr, std::size_t first, std::size_t last);

// Greedy (beam_width 1) or beam decoding from BOS until EOS or max_len
// tokens. The returned list excludes BOS and EOS.
std::vector<int> decode_step_caption(const Tensor& memory, const CaptionDecoder& decoder,
                                     std::size_t max_len, std::size_t beam_width = 1);

}  // namespace quag::heads
