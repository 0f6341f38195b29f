#include "quag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <tuple>

namespace quag::metrics {

Interval to_interval(const heads::MomentSpan& span) {
  return {static_cast<double>(span.start), static_cast<double>(span.end) + 1.0};
}

double span_iou(const Interval& a, const Interval& b) {
  if (a.end < a.start || b.end < b.start) throw std::invalid_argument("span_iou: inverted span");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

double recall_at_iou(std::span<const LabeledInterval> preds, std::span<const LabeledInterval> gts,
                     double threshold) {
  if (gts.empty()) return 0.0;
  std::set<std::string> gt_ids;
  for (const auto& g : gts) gt_ids.insert(g.id);
  for (const auto& p : preds) {
    if (!gt_ids.count(p.id)) throw std::invalid_argument("recall_at_iou: prediction for unknown id '" + p.id + "'");
  }
  std::size_t hits = 0;
  for (const auto& g : gts) {
    double best = -1.0;
    for (const auto& p : preds) {
      if (p.id == g.id) best = std::max(best, span_iou(p.span, g.span));
    }
    if (best < 0.0) throw std::invalid_argument("recall_at_iou: no prediction for id '" + g.id + "'");
    if (best >= threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

double recall_at_iou(std::span<const double> ious, double threshold) {
  if (ious.empty()) return 0.0;
  const auto hits = std::count_if(ious.begin(), ious.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::vector<Interval> boundaries_to_intervals(std::size_t moment_start,
                                              std::span<const std::size_t> boundaries) {
  std::vector<Interval> out;
  std::size_t first = moment_start;
  for (std::size_t k = 0; k < boundaries.size(); ++k) {
    const std::size_t b = boundaries[k];
    if (b < moment_start || (k > 0 && b <= boundaries[k - 1])) {
      throw std::invalid_argument("boundaries must be strictly ascending and not before the moment start");
    }
    out.push_back({static_cast<double>(first), static_cast<double>(b) + 1.0});
    first = b + 1;
  }
  return out;
}

StepMatch match_steps(std::span<const Interval> preds, std::span<const Interval> gts,
                      double threshold) {
  StepMatch m;
  m.predicted = preds.size();
  m.ground_truth = gts.size();
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;  // (iou, gt, pred)
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t p = 0; p < preds.size(); ++p) {
      const double iou = span_iou(preds[p], gts[g]);
      if (iou > 0.0) pairs.emplace_back(iou, g, p);
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> gt_used(gts.size()), pred_used(preds.size());
  for (const auto& [iou, g, p] : pairs) {
    if (gt_used[g] || pred_used[p]) continue;
    gt_used[g] = pred_used[p] = true;
    if (iou >= threshold) ++m.matched;
  }
  if (m.predicted) m.precision = static_cast<double>(m.matched) / static_cast<double>(m.predicted);
  if (m.ground_truth) m.recall = static_cast<double>(m.matched) / static_cast<double>(m.ground_truth);
  return m;
}

StepMatch precision_at_iou(std::size_t pred_start, std::span<const std::size_t> pred_steps,
                           std::size_t gt_start, std::span<const std::size_t> gt_steps,
                           double threshold) {
  const auto preds = boundaries_to_intervals(pred_start, pred_steps);
  const auto gts = boundaries_to_intervals(gt_start, gt_steps);
  return match_steps(preds, gts, threshold);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference,
               double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

namespace {

using Counts = std::map<Tokens, double>;

Counts ngram_counts(const Tokens& words) {
  Counts counts;
  for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
      counts[Tokens(words.begin() + static_cast<std::ptrdiff_t>(i),
                    words.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
    }
  }
  return counts;
}

struct TfIdf {
  std::array<std::map<Tokens, double>, kCiderMaxN> vec;
  std::array<double, kCiderMaxN> norm{};
  double length = 0.0;  // bigram count, as in the reference scorer
};

}  // namespace

CiderD::CiderD(const std::vector<std::vector<Tokens>>& corpus) : documents_(corpus.size()) {
  if (corpus.empty()) throw std::invalid_argument("cider: empty reference corpus");
  for (const auto& refs : corpus) {
    std::set<Tokens> seen;
    for (const auto& ref : refs) {
      for (const auto& [ngram, count] : ngram_counts(ref)) seen.insert(ngram);
    }
    for (const auto& ngram : seen) df_[ngram] += 1.0;
  }
  log_documents_ = std::log(static_cast<double>(documents_));
}

double CiderD::document_frequency(const Tokens& ngram) const {
  auto it = df_.find(ngram);
  return it == df_.end() ? 0.0 : it->second;
}

CiderBreakdown CiderD::score(const Tokens& candidate, const std::vector<Tokens>& references) const {
  if (references.empty()) throw std::invalid_argument("cider: candidate has no references");
  auto weigh = [&](const Tokens& words) {
    TfIdf t;
    for (const auto& [ngram, tf] : ngram_counts(words)) {
      const std::size_t n = ngram.size() - 1;
      const double w = tf * (log_documents_ - std::log(std::max(1.0, document_frequency(ngram))));
      t.vec[n][ngram] = w;
      t.norm[n] += w * w;
      if (n == 1) t.length += tf;
    }
    for (auto& v : t.norm) v = std::sqrt(v);
    return t;
  };

  const TfIdf hyp = weigh(candidate);
  CiderBreakdown out;
  for (const auto& ref_words : references) {
    const TfIdf ref = weigh(ref_words);
    const double delta = hyp.length - ref.length;
    const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
    for (std::size_t n = 0; n < kCiderMaxN; ++n) {
      double val = 0.0;
      for (const auto& [ngram, w] : hyp.vec[n]) {
        auto it = ref.vec[n].find(ngram);
        if (it != ref.vec[n].end()) val += std::min(w, it->second) * it->second;
      }
      if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
      out.per_n[n] += val * penalty;
    }
  }
  double total = 0.0;
  for (auto& v : out.per_n) {
    v /= static_cast<double>(references.size());
    total += v;
  }
  out.score = 10.0 * total / static_cast<double>(kCiderMaxN);
  return out;
}

CorpusCider corpus_cider(const std::vector<Tokens>& candidates,
                         const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("cider: candidate and reference counts differ");
  }
  const CiderD scorer(references);
  CorpusCider out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.items.push_back(scorer.score(candidates[i], references[i]));
    out.score += out.items.back().score;
  }
  out.score /= static_cast<double>(candidates.size());
  return out;
}

}  // namespace quag::metrics
