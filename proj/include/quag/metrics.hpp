#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "quag/heads.hpp"

namespace quag::metrics {

// Half-open frame interval [start, end).
struct Interval {
  double start = 0.0;
  double end = 0.0;
  bool operator==(const Interval&) const = default;
};

// Inclusive frame span [s, e] as the interval [s, e + 1).
Interval to_interval(const heads::MomentSpan& span);

// |a ∩ b| / |a ∪ b|, 0 for disjoint intervals. Throws on an inverted interval.
double span_iou(const Interval& a, const Interval& b);

struct LabeledInterval {
  std::string id;
  Interval span;
};

// Fraction of ground-truth items whose best same-id prediction reaches the
// threshold. Every ground-truth id needs at least one prediction and every
// prediction must name a ground-truth id.
double recall_at_iou(std::span<const LabeledInterval> preds, std::span<const LabeledInterval> gts,
                     double threshold);
// Fraction of values >= threshold; 0 for an empty list.
double recall_at_iou(std::span<const double> ious, double threshold);

// Step k covers [previous boundary + 1, b_k], the first step starting at
// moment_start. Boundaries must be strictly ascending, none before moment_start.
std::vector<Interval> boundaries_to_intervals(std::size_t moment_start,
                                              std::span<const std::size_t> boundaries);

struct StepMatch {
  std::size_t matched = 0;  // one-to-one pairs with IoU >= threshold
  std::size_t predicted = 0;
  std::size_t ground_truth = 0;
  double precision = 0.0;  // 0 when nothing was predicted
  double recall = 0.0;
};

// Greedy one-to-one matching in descending IoU; ties go to the earlier
// ground-truth span, then the earlier prediction.
StepMatch match_steps(std::span<const Interval> preds, std::span<const Interval> gts,
                      double threshold);

StepMatch precision_at_iou(std::size_t pred_start, std::span<const std::size_t> pred_steps,
                           std::size_t gt_start, std::span<const std::size_t> gt_steps,
                           double threshold);

using Tokens = std::vector<std::string>;

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

inline constexpr double kRougeBeta = 1.2;

// LCS F-measure (1 + b^2) P R / (R + b^2 P); 0 when either side is empty.
double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference,
               double beta = kRougeBeta);

inline constexpr std::size_t kCiderMaxN = 4;
inline constexpr double kCiderSigma = 6.0;

struct CiderBreakdown {
  // Per n-gram order: clipped TF-IDF cosine times the length penalty,
  // averaged over references. score = 10 * mean(per_n).
  std::array<double, kCiderMaxN> per_n{};
  double score = 0.0;
};

// CIDEr-D. Document frequencies come from a corpus of reference sets (one
// set per item); an n-gram's weight is tf * (log |corpus| - log max(1, df)).
class CiderD {
 public:
  explicit CiderD(const std::vector<std::vector<Tokens>>& corpus);

  CiderBreakdown score(const Tokens& candidate, const std::vector<Tokens>& references) const;

  std::size_t documents() const { return documents_; }
  double document_frequency(const Tokens& ngram) const;

 private:
  std::map<Tokens, double> df_;
  std::size_t documents_ = 0;
  double log_documents_ = 0.0;
};

struct CorpusCider {
  double score = 0.0;  // mean over candidates
  std::vector<CiderBreakdown> items;
};

// Scores candidates[i] against references[i], using the references
// themselves as the IDF corpus.
CorpusCider corpus_cider(const std::vector<Tokens>& candidates,
                         const std::vector<std::vector<Tokens>>& references);

}  // namespace quag::metrics
