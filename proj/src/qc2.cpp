#include "quag/qc2.hpp"

namespace quag::qc2 {

Qc2Params Qc2Params::create(std::size_t dim, std::size_t heads, nn::Initializer& init) {
  Qc2Params p;
  p.fusion = nn::Linear::create(2 * dim, dim, init);
  p.temporal_gate = nn::Linear::create(1, 1, init);
  p.channel_gate = nn::Linear::create(dim, dim, init);
  p.injection = nn::MultiHeadAttention::create(dim, heads, init);
  return p;
}

void Qc2Params::register_params(const std::string& prefix, nn::ParamRegistry& registry) const {
  fusion.register_params(prefix + ".fusion", registry);
  temporal_gate.register_params(prefix + ".temporal_gate", registry);
  channel_gate.register_params(prefix + ".channel_gate", registry);
  injection.register_params(prefix + ".injection", registry);
}

Tensor fuse_query_context(const Tensor& audio_visual, const Tensor& query,
                          const Qc2Params& params) {
  if (audio_visual.rank() != 2 || query.numel() != audio_visual.dim(1)) {
    throw ShapeError("fuse_query_context: audio-visual " + shape_string(audio_visual.shape()) +
                     " and query " + shape_string(query.shape()) + " disagree on D");
  }
  const Tensor tiled = tile_rows(query, audio_visual.dim(0));
  return params.fusion(concat_last(audio_visual, tiled));
}

GatePair compute_gates(const Tensor& context, const Qc2Params& params) {
  if (context.rank() != 2) throw ShapeError("compute_gates: expected [N_v x D], got " + shape_string(context.shape()));
  GatePair gates;
  // Per-frame channel mean -> 1x1 linear -> sigmoid.
  gates.temporal = sigmoid(params.temporal_gate(mean_axis(context, 1, true)));
  // Per-channel frame mean -> DxD linear -> sigmoid.
  gates.channel = sigmoid(params.channel_gate(mean_axis(context, 0, true)));
  gates.combined = outer(gates.temporal, gates.channel);
  return gates;
}

Tensor apply_filtration(const Tensor& audio_visual, const GatePair& gates) {
  if (audio_visual.shape() != gates.combined.shape()) {
    throw ShapeError("apply_filtration: representation " + shape_string(audio_visual.shape()) +
                     " vs gates " + shape_string(gates.combined.shape()));
  }
  return mul(gates.combined, audio_visual);
}

Tensor build_query_centric_repr(const Tensor& filtered, const Tensor& context,
                                const Qc2Params& params) {
  if (filtered.shape() != context.shape()) {
    throw ShapeError("build_query_centric_repr: shape mismatch " + shape_string(filtered.shape()) +
                     " vs " + shape_string(context.shape()));
  }
  return add(filtered, params.injection(context, context, context));
}

Qc2Output qc2_forward(const Tensor& audio_visual, const Tensor& query, const Qc2Params& params) {
  Qc2Output out;
  out.context = fuse_query_context(audio_visual, query, params);
  out.gates = compute_gates(out.context, params);
  out.filtered = apply_filtration(audio_visual, out.gates);
  out.query_centric = build_query_centric_repr(out.filtered, out.context, params);
  return out;
}

}  // namespace quag::qc2
