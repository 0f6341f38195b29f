#include "quag/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

#include "quag/metrics.hpp"

namespace quag {

using nlohmann::json;

std::vector<Prediction> oracle_predictions(const data::Dataset& dataset) {
  std::vector<Prediction> out;
  for (const auto& ep : dataset.episodes) out.push_back({ep.id, ep.moment, ep.steps, ep.captions});
  return out;
}

std::vector<Prediction> predict_all(const QuagModel& model, const data::Dataset& dataset,
                                    std::size_t threads) {
  const auto& eps = dataset.episodes;
  std::vector<Prediction> out(eps.size());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, eps.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < eps.size(); ++i) out[i] = predict(model, eps[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < eps.size(); i = next++) out[i] = predict(model, eps[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

json prediction_to_json(const Prediction& p) {
  return {{"id", p.id},
          {"moment", {p.moment.start, p.moment.end}},
          {"steps", p.steps},
          {"captions", p.captions}};
}

Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.id = j.at("id").get<std::string>();
  const auto& m = j.at("moment");
  p.moment = {m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>()};
  p.steps = j.at("steps").get<std::vector<std::size_t>>();
  p.captions = j.at("captions").get<std::vector<std::vector<int>>>();
  return p;
}

namespace {

metrics::Tokens words(const data::Vocabulary& vocab, const std::vector<int>& ids) {
  metrics::Tokens out;
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace

json evaluate(const std::vector<Prediction>& predictions, const data::Dataset& dataset,
              const EvalOptions& options) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw std::invalid_argument("duplicate prediction id '" + p.id + "'");
  }
  if (by_id.size() != dataset.episodes.size()) {
    throw std::invalid_argument("prediction count " + std::to_string(by_id.size()) +
                                " does not match episode count " +
                                std::to_string(dataset.episodes.size()));
  }

  std::vector<metrics::LabeledInterval> pred_moments, gt_moments;
  std::vector<double> ious;
  std::array<double, 2> thresholds{0.5, 0.7};
  std::array<std::size_t, 2> seg_matched{}, seg_pred{}, seg_gt{};
  std::array<double, 2> ep_prec{}, ep_rec{};
  std::size_t boundary_exact = 0;
  std::vector<metrics::Tokens> candidates;
  std::vector<std::vector<metrics::Tokens>> references;
  std::vector<double> rouge;
  std::size_t caption_exact = 0;
  json per_episode = json::array();

  for (const auto& ep : dataset.episodes) {
    auto it = by_id.find(ep.id);
    if (it == by_id.end()) throw std::invalid_argument("no prediction for episode '" + ep.id + "'");
    const Prediction& p = *it->second;
    if (p.moment.start > p.moment.end || p.moment.end >= ep.frames()) {
      throw std::invalid_argument("prediction for '" + ep.id + "' has an invalid moment");
    }
    pred_moments.push_back({ep.id, metrics::to_interval(p.moment)});
    gt_moments.push_back({ep.id, metrics::to_interval(ep.moment)});
    const double iou = metrics::span_iou(pred_moments.back().span, gt_moments.back().span);
    ious.push_back(iou);

    json ep_report = {{"id", ep.id}, {"moment_iou", iou}};
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto m = metrics::precision_at_iou(p.moment.start, p.steps, ep.moment.start, ep.steps,
                                               thresholds[t]);
      seg_matched[t] += m.matched;
      seg_pred[t] += m.predicted;
      seg_gt[t] += m.ground_truth;
      ep_prec[t] += m.precision;
      ep_rec[t] += m.recall;
    }
    const bool steps_exact = p.moment == ep.moment && p.steps == ep.steps;
    boundary_exact += steps_exact;
    ep_report["steps_exact"] = steps_exact;

    bool captions_exact = p.captions.size() == ep.captions.size();
    for (std::size_t k = 0; k < ep.captions.size(); ++k) {
      const auto ref = words(dataset.vocabulary, ep.captions[k]);
      const auto cand = k < p.captions.size() ? words(dataset.vocabulary, p.captions[k]) : metrics::Tokens{};
      captions_exact = captions_exact && cand == ref;
      rouge.push_back(metrics::rouge_l(cand, ref));
      candidates.push_back(cand);
      references.push_back({ref});
    }
    caption_exact += captions_exact;
    ep_report["captions_exact"] = captions_exact;
    ep_report["prediction"] = prediction_to_json(p);
    per_episode.push_back(std::move(ep_report));
  }

  const double n_eps = static_cast<double>(dataset.episodes.size());
  json report;
  double mean_iou = 0.0;
  for (double v : ious) mean_iou += v;
  report["retrieval"] = {{"recall@0.5", metrics::recall_at_iou(pred_moments, gt_moments, 0.5)},
                         {"recall@0.7", metrics::recall_at_iou(pred_moments, gt_moments, 0.7)},
                         {"mean_iou", ious.empty() ? 0.0 : mean_iou / n_eps},
                         {"episodes", dataset.episodes.size()}};

  json seg = {{"counting", options.per_episode_segmentation ? "per-episode" : "per-step"},
              {"exact_match", boundary_exact / n_eps}};
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const std::string suffix = t == 0 ? "@0.5" : "@0.7";
    double recall, precision;
    if (options.per_episode_segmentation) {
      recall = ep_rec[t] / n_eps;
      precision = ep_prec[t] / n_eps;
    } else {
      recall = seg_gt[t] ? static_cast<double>(seg_matched[t]) / static_cast<double>(seg_gt[t]) : 0.0;
      precision = seg_pred[t] ? static_cast<double>(seg_matched[t]) / static_cast<double>(seg_pred[t]) : 0.0;
    }
    seg["recall" + suffix] = recall;
    seg["precision" + suffix] = precision;
  }
  report["segmentation"] = seg;

  double rouge_mean = 0.0;
  for (double v : rouge) rouge_mean += v;
  const auto cider = metrics::corpus_cider(candidates, references);
  json per_caption = json::array();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    per_caption.push_back({{"rouge_l", rouge[i]}, {"cider", cider.items[i].score}});
  }
  report["captioning"] = {{"rouge_l", rouge.empty() ? 0.0 : rouge_mean / static_cast<double>(rouge.size())},
                          {"cider", cider.score},
                          {"exact_match", caption_exact / n_eps},
                          {"captions", candidates.size()},
                          {"absent_metrics", {"METEOR", "SPICE", "entailment"}},
                          {"per_caption", per_caption}};
  report["episodes"] = per_episode;
  return report;
}

namespace {

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw std::invalid_argument("report schema: " + path + " " + what);
}

void require_rate(const json& obj, const std::string& section, const std::string& key) {
  const std::string path = section + "." + key;
  require(obj.contains(key), path, "is missing");
  require(obj[key].is_number(), path, "must be a number");
  const double v = obj[key].get<double>();
  require(v >= 0.0 && v <= 1.0, path, "must lie in [0, 1]");
}

}  // namespace

void validate_report(const json& r) {
  require(r.is_object(), "$", "must be an object");
  for (const char* section : {"retrieval", "segmentation", "captioning"}) {
    require(r.contains(section) && r[section].is_object(), section, "must be an object");
  }
  const auto& ret = r["retrieval"];
  for (const char* k : {"recall@0.5", "recall@0.7", "mean_iou"}) require_rate(ret, "retrieval", k);
  require(ret["recall@0.7"].get<double>() <= ret["recall@0.5"].get<double>(), "retrieval.recall@0.7",
          "must not exceed recall@0.5");
  require(ret.contains("episodes") && ret["episodes"].is_number_unsigned(), "retrieval.episodes",
          "must be a nonnegative integer");

  const auto& seg = r["segmentation"];
  for (const char* k : {"recall@0.5", "recall@0.7", "precision@0.5", "precision@0.7", "exact_match"}) {
    require_rate(seg, "segmentation", k);
  }
  require(seg.contains("counting") && seg["counting"].is_string() &&
              (seg["counting"] == "per-step" || seg["counting"] == "per-episode"),
          "segmentation.counting", "must be \"per-step\" or \"per-episode\"");

  const auto& cap = r["captioning"];
  require_rate(cap, "captioning", "rouge_l");
  require_rate(cap, "captioning", "exact_match");
  require(cap.contains("cider") && cap["cider"].is_number() && cap["cider"].get<double>() >= 0.0,
          "captioning.cider", "must be a nonnegative number");
  require(cap.contains("absent_metrics") && cap["absent_metrics"].is_array(), "captioning.absent_metrics",
          "must be an array");

  require(r.contains("episodes") && r["episodes"].is_array(), "episodes", "must be an array");
  for (std::size_t i = 0; i < r["episodes"].size(); ++i) {
    const auto& e = r["episodes"][i];
    const std::string path = "episodes[" + std::to_string(i) + "]";
    require(e.is_object() && e.contains("id") && e["id"].is_string(), path + ".id", "must be a string");
    require_rate(e, path, "moment_iou");
  }
}

std::string render_report(const json& r) {
  auto pct = [](const json& v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%7.2f", 100.0 * v.get<double>());
    return std::string(buf);
  };
  auto num = [](const json& v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%7.2f", v.get<double>());
    return std::string(buf);
  };
  std::ostringstream os;
  const auto& ret = r.at("retrieval");
  os << "Moment retrieval (" << ret.at("episodes").get<std::size_t>() << " episodes)\n"
     << "  R@0.5    R@0.7    mIoU\n"
     << "  " << pct(ret.at("recall@0.5")) << "  " << pct(ret.at("recall@0.7")) << "  "
     << pct(ret.at("mean_iou")) << "\n\n";
  const auto& seg = r.at("segmentation");
  os << "Moment segmentation (" << seg.at("counting").get<std::string>() << ")\n"
     << "  R@0.5    R@0.7    P@0.5    P@0.7\n"
     << "  " << pct(seg.at("recall@0.5")) << "  " << pct(seg.at("recall@0.7")) << "  "
     << pct(seg.at("precision@0.5")) << "  " << pct(seg.at("precision@0.7")) << "\n\n";
  const auto& cap = r.at("captioning");
  os << "Step captioning (" << cap.at("captions").get<std::size_t>() << " captions)\n"
     << "  ROUGE-L  CIDEr\n"
     << "  " << pct(cap.at("rouge_l")) << "  " << num(cap.at("cider")) << "\n";
  return os.str();
}

}  // namespace quag
