#pragma once

#include "quag/nn.hpp"

// Query-centric cognition: fuse the query into the audio-visual stream,
// derive temporal and channel relevance gates, filter, then inject the
// self-attended query context.
namespace quag::qc2 {

struct Qc2Params {
  nn::Linear fusion;                  // W_d: 2D -> D
  nn::Linear temporal_gate;           // F_te: 1 -> 1, applied per frame
  nn::Linear channel_gate;            // F_ch: D -> D
  nn::MultiHeadAttention injection;   // phi, self-attention over the fused context

  static Qc2Params create(std::size_t dim, std::size_t heads, nn::Initializer& init);
  void register_params(const std::string& prefix, nn::ParamRegistry& registry) const;
};

struct GatePair {
  Tensor temporal;  // [N_v x 1]
  Tensor channel;   // [1 x D]
  Tensor combined;  // [N_v x D], combined[i][j] = temporal[i] * channel[j]
};

// [av ; tile(query)] projected back to D. query is a length-D vector.
Tensor fuse_query_context(const Tensor& audio_visual, const Tensor& query, const Qc2Params& params);

GatePair compute_gates(const Tensor& context, const Qc2Params& params);

Tensor apply_filtration(const Tensor& audio_visual, const GatePair& gates);

// filtered + phi(context)
Tensor build_query_centric_repr(const Tensor& filtered, const Tensor& context,
                                const Qc2Params& params);

struct Qc2Output {
  Tensor context;
  GatePair gates;
  Tensor filtered;
  Tensor query_centric;
};

Qc2Output qc2_forward(const Tensor& audio_visual, const Tensor& query, const Qc2Params& params);

}  // namespace quag::qc2
