#include "quag/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace quag::heads {

RetrievalHead RetrievalHead::create(std::size_t dim, nn::Initializer& init) {
  RetrievalHead head;
  head.start = nn::Linear::create(dim, 1, init);
  head.end = nn::Linear::create(dim, 1, init);
  return head;
}

void RetrievalHead::register_params(const std::string& prefix,
                                    nn::ParamRegistry& registry) const {
  start.register_params(prefix + ".start", registry);
  end.register_params(prefix + ".end", registry);
}

SpanDistribution predict_moment_span(const Tensor& repr, const RetrievalHead& head) {
  if (repr.rank() != 2) throw ShapeError("predict_moment_span: expected [N_v x D], got " + shape_string(repr.shape()));
  const std::size_t n = repr.dim(0);
  return {softmax(reshape(head.start(repr), {n})), softmax(reshape(head.end(repr), {n}))};
}

MomentSpan decode_moment(std::span<const double> p_start, std::span<const double> p_end) {
  if (p_start.size() != p_end.size() || p_start.empty()) {
    throw std::invalid_argument("decode_moment: distributions must be non-empty and equal length");
  }
  const std::size_t n = p_start.size();
  std::size_t s = 0, e = n - 1;
  for (std::size_t i = 1; i < n; ++i)
    if (p_start[i] > p_start[s]) s = i;
  for (std::size_t i = n - 1; i-- > 0;)
    if (p_end[i] > p_end[e]) e = i;
  if (s <= e) return {s, e};

  // Exact ties: a strictly wider span replaces; equal width keeps the earlier.
  double best = -1.0;
  MomentSpan out{0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = n; j-- > i;) {
      const double score = p_start[i] * p_end[j];
      const bool wider = (j - i) > (out.end - out.start);
      if (score > best || (score == best && wider)) {
        best = score;
        out = {i, j};
      }
    }
  }
  return out;
}

MomentSpan decode_moment(const SpanDistribution& dist) {
  return decode_moment(dist.p_start.data(), dist.p_end.data());
}

SegmentationHead SegmentationHead::create(std::size_t dim, nn::Initializer& init) {
  SegmentationHead head;
  head.step = nn::Linear::create(dim, 1, init);
  head.marker = init.xavier(1, dim, {dim});
  return head;
}

void SegmentationHead::register_params(const std::string& prefix,
                                       nn::ParamRegistry& registry) const {
  step.register_params(prefix + ".step", registry);
  registry.add(prefix + ".marker", marker);
}

Mask step_mask(std::size_t frames, const MomentSpan& span, std::size_t last_committed) {
  Mask mask(frames, 1);
  for (std::size_t j = last_committed + 1; j <= span.end && j < frames; ++j) mask[j] = 0;
  return mask;
}

namespace {

void validate_span(const Tensor& repr, const MomentSpan& span, const char* op) {
  if (repr.rank() != 2) throw ShapeError(std::string(op) + ": expected [N_v x D] representation");
  if (span.end < span.start) {
    throw std::invalid_argument(std::string(op) + ": empty span (end " + std::to_string(span.end) +
                                " before start " + std::to_string(span.start) + ")");
  }
  if (span.end >= repr.dim(0)) {
    throw std::out_of_range(std::string(op) + ": span end " + std::to_string(span.end) +
                            " outside " + std::to_string(repr.dim(0)) + " frames");
  }
}

}  // namespace

StepDistribution step_distribution(const Tensor& repr, const MomentSpan& span,
                                   std::span<const std::size_t> committed,
                                   const SegmentationHead& head) {
  validate_span(repr, span, "step_distribution");
  const std::size_t n = repr.dim(0);
  Tensor input = repr;
  if (!committed.empty()) {
    std::vector<double> indicator(n, 0.0);
    for (auto b : committed) {
      if (b >= n) throw std::out_of_range("step_distribution: boundary outside the video");
      indicator[b] = 1.0;
    }
    input = add(repr, outer(Tensor::from_values({n}, std::move(indicator)), head.marker));
  }
  const std::size_t last = committed.empty() ? span.start : committed.back();
  StepDistribution dist;
  dist.mask = step_mask(n, span, last);
  dist.probs = softmax(reshape(head.step(input), {n}), dist.mask);
  return dist;
}

std::vector<std::size_t> predict_step_boundaries(const Tensor& repr, const MomentSpan& span,
                                                 const SegmentationHead& head,
                                                 std::size_t max_steps) {
  validate_span(repr, span, "predict_step_boundaries");
  if (max_steps < 1) throw std::invalid_argument("predict_step_boundaries: max_steps must be >= 1");
  std::vector<std::size_t> boundaries;
  if (span.start == span.end) {
    boundaries.push_back(span.end);
    return boundaries;
  }
  while (true) {
    if (boundaries.size() + 1 == max_steps) {
      boundaries.push_back(span.end);
      break;
    }
    const auto dist = step_distribution(repr, span, boundaries, head);
    const auto probs = dist.probs.data();
    std::size_t best = probs.size();
    for (std::size_t j = 0; j < probs.size(); ++j) {
      if (dist.mask[j]) continue;
      if (best == probs.size() || probs[j] > probs[best]) best = j;
    }
    boundaries.push_back(best);
    if (best == span.end) break;
  }
  return boundaries;
}

std::vector<StepInstance> teacher_forced_steps(const Tensor& repr, const MomentSpan& span,
                                               std::span<const std::size_t> boundaries,
                                               const SegmentationHead& head) {
  std::vector<StepInstance> out;
  for (std::size_t k = 0; k < boundaries.size(); ++k) {
    StepInstance inst;
    inst.dist = step_distribution(repr, span, boundaries.first(k), head);
    inst.target = boundaries[k];
    out.push_back(std::move(inst));
  }
  return out;
}

CaptionDecoder CaptionDecoder::create(std::size_t vocab_size, std::size_t dim, std::size_t heads,
                                      std::size_t layers, std::size_t hidden,
                                      std::size_t max_len, nn::Initializer& init) {
  CaptionDecoder dec;
  dec.token_embedding = init.xavier(vocab_size, dim);
  dec.positions = init.xavier(max_len, dim);
  for (std::size_t l = 0; l < layers; ++l) {
    dec.blocks.push_back(nn::DecoderBlock::create(dim, heads, hidden, init));
  }
  dec.output = nn::Linear::create(dim, vocab_size, init);
  return dec;
}

void CaptionDecoder::register_params(const std::string& prefix,
                                     nn::ParamRegistry& registry) const {
  registry.add(prefix + ".token_embedding", token_embedding);
  registry.add(prefix + ".positions", positions);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].register_params(prefix + ".block" + std::to_string(l), registry);
  }
  output.register_params(prefix + ".output", registry);
}

Tensor CaptionDecoder::logits(const Tensor& memory, std::span<const int> input,
                              const nn::Dropout& dropout) const {
  if (input.empty()) throw std::invalid_argument("caption decoder: empty input sequence");
  if (input.size() > max_positions()) {
    throw std::invalid_argument("caption decoder: sequence of " + std::to_string(input.size()) +
                                " exceeds " + std::to_string(max_positions()) + " positions");
  }
  Tensor h = add(gather_rows(token_embedding, input), slice_rows(positions, 0, input.size()));
  for (const auto& block : blocks) h = block(h, memory, dropout);
  return output(h);
}

Tensor step_memory(const Tensor& repr, std::size_t first, std::size_t last) {
  if (last < first || last >= repr.dim(0)) {
    throw std::out_of_range("step_memory: frames [" + std::to_string(first) + ", " +
                            std::to_string(last) + "] outside representation");
  }
  return slice_rows(repr, first, last - first + 1);
}

namespace {

std::vector<double> last_row_log_probs(const Tensor& logits) {
  const std::size_t v = logits.dim(1);
  const auto row = logits.data().subspan((logits.dim(0) - 1) * v, v);
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double x : row) total += std::exp(x - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - lse;
  return out;
}

struct Beam {
  std::vector<int> tokens;  // starts with BOS
  double log_prob = 0.0;
  bool finished = false;
};

}  // namespace

std::vector<int> decode_step_caption(const Tensor& memory, const CaptionDecoder& decoder,
                                     std::size_t max_len, std::size_t beam_width) {
  if (max_len < 1) throw std::invalid_argument("decode_step_caption: max_len must be >= 1");
  if (beam_width < 1) throw std::invalid_argument("decode_step_caption: beam width must be >= 1");
  NoGradScope no_grad;
  max_len = std::min(max_len, decoder.max_positions());
  const int eos = decoder.tokens.eos;

  std::vector<Beam> beams{Beam{{decoder.tokens.bos}, 0.0, false}};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<Beam> candidates;
    for (const auto& beam : beams) {
      if (beam.finished) {
        candidates.push_back(beam);
        continue;
      }
      const auto log_probs = last_row_log_probs(decoder.logits(memory, beam.tokens));
      // PAD and BOS never appear inside a caption.
      std::vector<int> order;
      for (std::size_t i = 0; i < log_probs.size(); ++i) {
        const int id = static_cast<int>(i);
        if (id != decoder.tokens.pad && id != decoder.tokens.bos) order.push_back(id);
      }
      const std::size_t keep = std::min(beam_width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](int a, int b) {
                          return log_probs[a] > log_probs[b] || (log_probs[a] == log_probs[b] && a < b);
                        });
      for (std::size_t r = 0; r < keep; ++r) {
        Beam next = beam;
        next.log_prob += log_probs[order[r]];
        if (order[r] == eos) {
          next.finished = true;
        } else {
          next.tokens.push_back(order[r]);
        }
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.log_prob > b.log_prob; });
    if (candidates.size() > beam_width) candidates.resize(beam_width);
    beams = std::move(candidates);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.finished; })) break;
  }
  const Beam& best = beams.front();
  return std::vector<int>(best.tokens.begin() + 1, best.tokens.end());
}

}  // namespace quag::heads
