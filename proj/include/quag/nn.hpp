#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "quag/grad_check.hpp"
#include "quag/ops.hpp"
#include "quag/tensor.hpp"

namespace quag::nn {

// Ordered, name-unique list of trainable tensors. The order is the order of
// registration and is what checkpoints and optimizer state align against.
class ParamRegistry {
 public:
  void add(const std::string& name, const Tensor& tensor);
  const NamedTensors& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;
  std::size_t total_elements() const;
  // Entries whose name starts with the given prefix.
  NamedTensors with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  NamedTensors entries_;
};

// Seeded Xavier-uniform initialization.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor xavier(std::size_t fan_in, std::size_t fan_out, Shape shape);
  Tensor xavier(std::size_t rows, std::size_t cols) { return xavier(rows, cols, {rows, cols}); }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  Tensor operator()(const Tensor& x) const;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear create(std::size_t in, std::size_t out, Initializer& init);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  // x[..., in] -> [..., out]; rank-1 input gives rank-1 output.
  Tensor operator()(const Tensor& x) const;
  void register_params(const std::string& prefix, ParamRegistry& registry) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void register_params(const std::string& prefix, ParamRegistry& registry) const;
};

struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear query;
  Linear key;
  Linear value;
  Linear output;

  static MultiHeadAttention create(std::size_t dim, std::size_t heads, Initializer& init);
  std::size_t dim() const { return query.in_features(); }

  // query [Lq x D], key/value [Lk x D]; mask is Lq*Lk bytes (nonzero = blocked)
  // or empty. When weights is non-null it receives one [Lq x Lk] tensor per head.
  Tensor operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                    std::span<const std::uint8_t> mask = {},
                    std::vector<Tensor>* weights = nullptr) const;
  void register_params(const std::string& prefix, ParamRegistry& registry) const;
};

struct FeedForward {
  Linear up;
  Linear down;

  static FeedForward create(std::size_t dim, std::size_t hidden, Initializer& init);
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
  void register_params(const std::string& prefix, ParamRegistry& registry) const;
};

// Post-norm transformer encoder block.
struct EncoderBlock {
  MultiHeadAttention attention;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;

  static EncoderBlock create(std::size_t dim, std::size_t heads, std::size_t hidden,
                             Initializer& init);
  Tensor operator()(const Tensor& x, const Dropout& dropout = {}) const;
  void register_params(const std::string& prefix, ParamRegistry& registry) const;
};

Tensor encoder_forward(const Tensor& x, const std::vector<EncoderBlock>& blocks,
                       const Dropout& dropout = {});

// Post-norm decoder block: causal self-attention, cross-attention over a
// memory sequence, feed-forward.
struct DecoderBlock {
  MultiHeadAttention self_attention;
  LayerNorm norm1;
  MultiHeadAttention cross_attention;
  LayerNorm norm2;
  FeedForward ffn;
  LayerNorm norm3;

  static DecoderBlock create(std::size_t dim, std::size_t heads, std::size_t hidden,
                             Initializer& init);
  Tensor operator()(const Tensor& x, const Tensor& memory, const Dropout& dropout = {}) const;
  void register_params(const std::string& prefix, ParamRegistry& registry) const;
};

// Lower-triangular attention mask for a length-L sequence: position i may
// attend to positions j <= i.
Mask causal_mask(std::size_t length);

}  // namespace quag::nn
