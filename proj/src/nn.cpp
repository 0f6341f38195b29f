#include "quag/nn.hpp"

#include <algorithm>
#include <cmath>

namespace quag::nn {

void ParamRegistry::add(const std::string& name, const Tensor& tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t = tensor;
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
}

bool ParamRegistry::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

const Tensor& ParamRegistry::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw std::out_of_range("unknown parameter: " + name);
}

Tensor& ParamRegistry::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.first == name) return e.second;
  throw std::out_of_range("unknown parameter: " + name);
}

std::size_t ParamRegistry::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

NamedTensors ParamRegistry::with_prefix(const std::string& prefix) const {
  NamedTensors out;
  for (const auto& e : entries_)
    if (e.first.rfind(prefix, 0) == 0) out.push_back(e);
  return out;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

Tensor Initializer::xavier(std::size_t fan_in, std::size_t fan_out, Shape shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng_);
  return Tensor::from_values(std::move(shape), std::move(values), true);
}

Tensor Dropout::operator()(const Tensor& x) const {
  if (rate <= 0.0 || rng == nullptr) return x;
  return dropout(x, rate, *rng);
}

Linear Linear::create(std::size_t in, std::size_t out, Initializer& init) {
  return Linear{init.xavier(in, out), Tensor::zeros({out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.shape().back() != in_features()) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  if (x.rank() == 1) {
    return reshape(add_bias(matmul(reshape(x, {1, x.numel()}), weight), bias), {out_features()});
  }
  if (x.rank() != 2) throw ShapeError("linear: expected rank 1 or 2 input, got " + shape_string(x.shape()));
  return add_bias(matmul(x, weight), bias);
}

void Linear::register_params(const std::string& prefix, ParamRegistry& registry) const {
  registry.add(prefix + ".weight", weight);
  registry.add(prefix + ".bias", bias);
}

LayerNorm LayerNorm::create(std::size_t dim) {
  return LayerNorm{Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

void LayerNorm::register_params(const std::string& prefix, ParamRegistry& registry) const {
  registry.add(prefix + ".gamma", gamma);
  registry.add(prefix + ".beta", beta);
}

MultiHeadAttention MultiHeadAttention::create(std::size_t dim, std::size_t heads,
                                              Initializer& init) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dimension " + std::to_string(dim) +
                                " is not divisible by head count " + std::to_string(heads));
  }
  MultiHeadAttention mha;
  mha.heads = heads;
  mha.query = Linear::create(dim, dim, init);
  mha.key = Linear::create(dim, dim, init);
  mha.value = Linear::create(dim, dim, init);
  mha.output = Linear::create(dim, dim, init);
  return mha;
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                                      std::span<const std::uint8_t> mask,
                                      std::vector<Tensor>* weights) const {
  const std::size_t d = dim();
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != d || k.dim(1) != d ||
      v.dim(1) != d || k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: dimension mismatch query " + shape_string(q.shape()) + ", key " +
                     shape_string(k.shape()) + ", value " + shape_string(v.shape()) +
                     " for model dim " + std::to_string(d));
  }
  const std::size_t lq = q.dim(0), lk = k.dim(0);
  if (!mask.empty()) {
    if (mask.size() != lq * lk) {
      throw ShapeError("attention: mask has " + std::to_string(mask.size()) + " entries, expected " +
                       std::to_string(lq * lk));
    }
    for (std::size_t i = 0; i < lq; ++i) {
      const auto row = mask.subspan(i * lk, lk);
      if (std::all_of(row.begin(), row.end(), [](auto m) { return m != 0; })) {
        throw std::invalid_argument("attention: query row " + std::to_string(i) +
                                    " has every key masked");
      }
    }
  }
  const Tensor qp = query(q);
  const Tensor kp = key(k);
  const Tensor vp = value(v);
  const std::size_t head_dim = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor merged;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    const Tensor qh = heads == 1 ? qp : slice_last(qp, off, head_dim);
    const Tensor kh = heads == 1 ? kp : slice_last(kp, off, head_dim);
    const Tensor vh = heads == 1 ? vp : slice_last(vp, off, head_dim);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    const Tensor attn = softmax(scores, mask);
    if (weights != nullptr) weights->push_back(attn);
    const Tensor out = matmul(attn, vh);
    merged = merged.defined() ? concat_last(merged, out) : out;
  }
  return output(merged);
}

void MultiHeadAttention::register_params(const std::string& prefix,
                                         ParamRegistry& registry) const {
  query.register_params(prefix + ".query", registry);
  key.register_params(prefix + ".key", registry);
  value.register_params(prefix + ".value", registry);
  output.register_params(prefix + ".output", registry);
}

FeedForward FeedForward::create(std::size_t dim, std::size_t hidden, Initializer& init) {
  return FeedForward{Linear::create(dim, hidden, init), Linear::create(hidden, dim, init)};
}

void FeedForward::register_params(const std::string& prefix, ParamRegistry& registry) const {
  up.register_params(prefix + ".up", registry);
  down.register_params(prefix + ".down", registry);
}

EncoderBlock EncoderBlock::create(std::size_t dim, std::size_t heads, std::size_t hidden,
                                  Initializer& init) {
  EncoderBlock block;
  block.attention = MultiHeadAttention::create(dim, heads, init);
  block.norm1 = LayerNorm::create(dim);
  block.ffn = FeedForward::create(dim, hidden, init);
  block.norm2 = LayerNorm::create(dim);
  return block;
}

Tensor EncoderBlock::operator()(const Tensor& x, const Dropout& dropout) const {
  const Tensor attended = norm1(add(x, dropout(attention(x, x, x))));
  return norm2(add(attended, dropout(ffn(attended))));
}

void EncoderBlock::register_params(const std::string& prefix, ParamRegistry& registry) const {
  attention.register_params(prefix + ".attention", registry);
  norm1.register_params(prefix + ".norm1", registry);
  ffn.register_params(prefix + ".ffn", registry);
  norm2.register_params(prefix + ".norm2", registry);
}

Tensor encoder_forward(const Tensor& x, const std::vector<EncoderBlock>& blocks,
                       const Dropout& dropout) {
  Tensor h = x;
  for (const auto& block : blocks) h = block(h, dropout);
  return h;
}

DecoderBlock DecoderBlock::create(std::size_t dim, std::size_t heads, std::size_t hidden,
                                  Initializer& init) {
  DecoderBlock block;
  block.self_attention = MultiHeadAttention::create(dim, heads, init);
  block.norm1 = LayerNorm::create(dim);
  block.cross_attention = MultiHeadAttention::create(dim, heads, init);
  block.norm2 = LayerNorm::create(dim);
  block.ffn = FeedForward::create(dim, hidden, init);
  block.norm3 = LayerNorm::create(dim);
  return block;
}

Tensor DecoderBlock::operator()(const Tensor& x, const Tensor& memory,
                                const Dropout& dropout) const {
  const Mask causal = causal_mask(x.dim(0));
  const Tensor h1 = norm1(add(x, dropout(self_attention(x, x, x, causal))));
  const Tensor h2 = norm2(add(h1, dropout(cross_attention(h1, memory, memory))));
  return norm3(add(h2, dropout(ffn(h2))));
}

void DecoderBlock::register_params(const std::string& prefix, ParamRegistry& registry) const {
  self_attention.register_params(prefix + ".self_attention", registry);
  norm1.register_params(prefix + ".norm1", registry);
  cross_attention.register_params(prefix + ".cross_attention", registry);
  norm2.register_params(prefix + ".norm2", registry);
  ffn.register_params(prefix + ".ffn", registry);
  norm3.register_params(prefix + ".norm3", registry);
}

Mask causal_mask(std::size_t length) {
  Mask mask(length * length, 0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) mask[i * length + j] = 1;
  return mask;
}

}  // namespace quag::nn
