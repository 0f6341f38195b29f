// Acceptance suite: one line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <string>

#include "quag/ablation.hpp"
#include "quag/grad_check.hpp"
#include "quag/losses.hpp"
#include "quag/metrics.hpp"
#include "quag/model_check.hpp"
#include "quag/msp.hpp"
#include "quag/qc2.hpp"
#include "quag/synthetic.hpp"
#include "quag/trainer.hpp"

using namespace quag;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Tensor gaussian(Shape shape, std::mt19937_64& rng, double sd = 1.0, bool grad = false) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from_values(std::move(shape), std::move(v), grad);
}

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_model = 0.0;
  for (const auto& c : check_model_gradients(ModelCheckOptions{})) {
    worst_model = std::max(worst_model, c.result.max_rel_error);
    o.require(c.passed, c.group + "/" + loss::task_name(c.task) + " failed");
  }

  PrecisionScope f64(Precision::F64);
  std::mt19937_64 rng(17);
  auto a = gaussian({3, 4}, rng, 1.0, true), b = gaussian({4, 5}, rng, 1.0, true);
  auto g = gaussian({4}, rng, 0.3, true), bias = gaussian({4}, rng, 0.3, true);
  Tensor w = gaussian({3, 5}, rng);
  Tensor w4 = gaussian({3, 4}, rng);
  struct OpCase {
    std::string name;
    std::function<Tensor()> f;
    NamedTensors params;
  };
  const std::vector<OpCase> ops = {
      {"matmul", [&] { return sum(mul(matmul(a, b), w)); }, {{"a", a}, {"b", b}}},
      {"softmax", [&] { return sum(mul(softmax(a), w4)); }, {{"a", a}}},
      {"log_softmax", [&] { return sum(mul(log_softmax(a), w4)); }, {{"a", a}}},
      {"sigmoid", [&] { return sum(mul(sigmoid(a), w4)); }, {{"a", a}}},
      {"gelu", [&] { return sum(mul(gelu(a), w4)); }, {{"a", a}}},
      {"layer_norm", [&] { return sum(mul(layer_norm(a, g, bias), w4)); }, {{"a", a}, {"g", g}, {"bias", bias}}},
      {"outer", [&] { return sum(mul(outer(mean_axis(a, 1, true), mean_axis(b, 0, true)), w)); },
       {{"a", a}, {"b", b}}},
  };
  double worst_op = 0.0;
  for (const auto& op : ops) {
    const auto r = grad_check(op.f, op.params);
    worst_op = std::max(worst_op, r.max_rel_error);
    o.require(r.max_rel_error < 1e-4, op.name + " rel-err " + fmt("%.2e", r.max_rel_error));
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "runtime " + fmt("%.1f s", secs));
  o.note("model max rel-err " + fmt("%.2e", worst_model) + ", op max rel-err " + fmt("%.2e", worst_op) +
         ", " + fmt("%.1f s", secs));
  return o;
}

Outcome closed_form_losses() {
  Outcome o;
  PrecisionScope f64(Precision::F64);
  const std::size_t n = 16;
  std::vector<heads::SpanDistribution> dists(3, {Tensor::full({n}, 1.0 / n), Tensor::full({n}, 1.0 / n)});
  const std::vector<heads::MomentSpan> targets{{0, 3}, {5, 9}, {2, 15}};
  const double ret = loss::retrieval_loss(dists, targets).item();
  o.require(std::abs(ret - 2.0 * std::log(16.0)) < 1e-6, "retrieval " + fmt("%.9f", ret));

  const auto eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const double nce = msp::msp_contrastive_loss(eye, eye, 1.0).item();
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  o.require(std::abs(nce - expect) < 1e-6, "orthonormal InfoNCE " + fmt("%.9f", nce));

  const auto flat = Tensor::full({5, 4}, 0.7);
  const double uniform = msp::msp_contrastive_loss(flat, flat, 0.07).item();
  o.require(std::abs(uniform - std::log(5.0)) < 1e-6, "uniform InfoNCE " + fmt("%.9f", uniform));
  o.note("2 ln N " + fmt("%.6f", ret) + ", InfoNCE " + fmt("%.6f", nce) + ", ln B " + fmt("%.6f", uniform));
  return o;
}

Outcome gate_invariants() {
  Outcome o;
  NoGradScope no_grad;
  std::mt19937_64 rng(23);
  std::size_t bad_range = 0, bad_outer = 0;
  double worst = 0.0;
  const std::size_t evaluations = 10000, per_init = 100;
  qc2::Qc2Params params;
  for (std::size_t i = 0; i < evaluations; ++i) {
    if (i % per_init == 0) {
      nn::Initializer init(rng());
      params = qc2::Qc2Params::create(8, 2, init);
    }
    const std::size_t frames = 1 + rng() % 12;
    const double scale = std::exp(std::uniform_real_distribution<double>(-3.0, 2.0)(rng));
    const auto out = qc2::qc2_forward(gaussian({frames, 8}, rng, scale), gaussian({8}, rng, scale), params);
    const auto& gt = out.gates;
    for (double v : gt.temporal.data()) bad_range += !(v > 0.0 && v < 1.0);
    for (double v : gt.channel.data()) bad_range += !(v > 0.0 && v < 1.0);
    for (std::size_t r = 0; r < frames; ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        const double v = gt.combined.at(r, c);
        bad_range += !(v > 0.0 && v < 1.0);
        const double err = std::abs(v - gt.temporal.at(r) * gt.channel.at(c));
        worst = std::max(worst, err);
        bad_outer += err > 1e-6;
      }
    }
  }
  o.require(bad_range == 0, std::to_string(bad_range) + " gate values outside (0,1)");
  o.require(bad_outer == 0, std::to_string(bad_outer) + " outer-product mismatches");
  o.note(std::to_string(evaluations) + " evaluations, max outer-product error " + fmt("%.1e", worst));
  return o;
}

Outcome overfit_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  data::SyntheticOptions so;
  so.seed = 7;
  so.episodes = 4;
  so.frames = 32;
  so.noise = 0.1;
  const auto corpus = data::synthesize(so);
  ModelConfig mc = ModelConfig::desk();
  mc.vocab_size = corpus.vocabulary.size();
  TrainConfig tc = TrainConfig::desk();
  tc.lr = 1e-3;
  tc.epochs = 200;
  QuagModel model = QuagModel::create(mc, tc.seed);
  Trainer trainer(model, corpus.episodes, tc);
  for (std::size_t e = 0; e < tc.epochs; ++e) trainer.run_epoch();

  std::vector<double> ious;
  std::size_t steps_ok = 0, caps_ok = 0;
  for (const auto& ep : corpus.episodes) {
    const auto p = predict(model, ep);
    ious.push_back(metrics::span_iou(metrics::to_interval(p.moment), metrics::to_interval(ep.moment)));
    steps_ok += p.moment.start == ep.moment.start && p.steps == ep.steps;
    caps_ok += p.captions == ep.captions;
  }
  const double recall = metrics::recall_at_iou(ious, 0.5);
  const double secs = seconds_since(t0);
  o.require(recall == 1.0, "recall@0.5 " + fmt("%.3f", recall));
  o.require(steps_ok == corpus.episodes.size(), "step match on " + std::to_string(steps_ok) + "/4");
  o.require(caps_ok == corpus.episodes.size(), "captions match on " + std::to_string(caps_ok) + "/4");
  o.require(secs < 300.0, "runtime " + fmt("%.0f s", secs));
  o.note("recall@0.5 " + fmt("%.2f", recall) + ", steps " + std::to_string(steps_ok) + "/4, captions " +
         std::to_string(caps_ok) + "/4, " + fmt("%.0f s", secs));
  return o;
}

Outcome ablation_direction() {
  Outcome o;
  const auto t0 = Clock::now();
  AblationOptions opts;
  opts.train.epochs = 10;
  const auto report = run_ablation(opts);
  const double quag = report["mean"]["quag"].get<double>();
  const double joint = report["mean"]["joint"].get<double>();
  o.require(report["direction_holds"].get<bool>(), "quag below joint");
  o.note("held-out R@0.5 quag " + fmt("%.3f", quag) + " vs joint " + fmt("%.3f", joint) + " over 3 seeds, " +
         fmt("%.0f s", seconds_since(t0)));
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  const double iou = metrics::span_iou({0, 10}, {5, 15});
  o.require(std::abs(iou - 1.0 / 3.0) < 1e-9, "iou " + fmt("%.9f", iou));

  const metrics::Tokens abc{"a", "b", "c"}, ac{"a", "c"};
  const double rouge = metrics::rouge_l(abc, ac);
  o.require(std::abs(rouge - 0.7899) < 1e-4, "ROUGE-L " + fmt("%.6f", rouge) + " expected 0.7899");

  auto words = [](std::initializer_list<const char*> w) { return metrics::Tokens(w.begin(), w.end()); };
  const std::vector<std::vector<metrics::Tokens>> refs{{words({"a", "cat", "sat", "on", "the", "mat"})},
                                                       {words({"a", "dog", "sat", "on", "the", "log"})},
                                                       {words({"the", "cat", "ran"})}};
  const std::vector<metrics::Tokens> cands{words({"a", "cat", "sat", "on", "the", "mat"}),
                                           words({"a", "dog", "ran", "on", "the", "mat"}),
                                           words({"the", "cat", "sat"})};
  const auto cider = metrics::corpus_cider(cands, refs);
  const double expected[3] = {10.0, 1.9051388097437283, 1.8620743752396156};
  for (std::size_t i = 0; i < 3; ++i) {
    o.require(std::abs(cider.items[i].score - expected[i]) < 1e-6,
              "CIDEr item " + std::to_string(i) + " " + fmt("%.9f", cider.items[i].score));
  }
  for (double v : cider.items[0].per_n) o.require(std::abs(v - 1.0) < 1e-9, "identical per-n " + fmt("%.9f", v));
  o.note("iou " + fmt("%.6f", iou) + ", ROUGE-L " + fmt("%.6f", rouge) + ", CIDEr " + fmt("%.6f", cider.score));
  return o;
}

Outcome determinism_round_trip() {
  Outcome o;
  data::SyntheticOptions so;
  so.seed = 11;
  so.episodes = 5;
  so.frames = 12;
  so.feature_dim = 8;
  const auto corpus = data::synthesize(so);
  for (const auto& ep : corpus.episodes) {
    const auto bytes = data::encode_episode(ep);
    o.require(data::encode_episode(data::decode_episode(bytes)) == bytes, ep.id + " does not round-trip");
  }

  ModelConfig mc;
  mc.visual_dim = mc.audio_dim = mc.text_dim = 8;
  mc.dim = 16;
  mc.heads = 2;
  mc.encoder_layers = 1;
  mc.max_frames = 12;
  mc.vocab_size = corpus.vocabulary.size();
  mc.dropout = 0.1;
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch = 2;
  tc.seed = 5;

  auto run = [&](std::size_t iterations, std::vector<double>* losses) {
    auto model = std::make_unique<QuagModel>(QuagModel::create(mc, 5));
    auto trainer = std::make_unique<Trainer>(*model, corpus.episodes, tc);
    for (std::size_t i = 0; i < iterations; ++i) {
      const auto rec = trainer->step();
      if (losses) losses->push_back(rec.total);
    }
    return std::make_pair(std::move(model), std::move(trainer));
  };
  std::vector<double> full_losses;
  const auto [m1, t1] = run(18, &full_losses);
  const auto [m2, t2] = run(18, nullptr);
  o.require(encode_checkpoint(t1->checkpoint()) == encode_checkpoint(t2->checkpoint()),
            "identical seeds gave different checkpoints");

  const auto [m3, t3] = run(9, nullptr);
  const auto ckpt = decode_checkpoint(encode_checkpoint(t3->checkpoint()));
  auto resumed = QuagModel::create(mc, 99);
  Trainer tr(resumed, corpus.episodes, tc);
  tr.restore(ckpt);
  double worst = 0.0;
  for (std::size_t i = 9; i < 18; ++i) worst = std::max(worst, std::abs(tr.step().total - full_losses[i]));
  o.require(worst <= 1e-7, "resume loss gap " + fmt("%.2e", worst));
  o.note("5 episodes round-trip, checkpoints identical, resume loss gap " + fmt("%.1e", worst));
  return o;
}

bool on_simplex(const Tensor& p, std::span<const std::uint8_t> mask = {}) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double v = p.at(i);
    if (v < 0.0 || (!mask.empty() && mask[i] && v != 0.0)) return false;
    total += v;
  }
  return std::abs(total - 1.0) < 1e-6;
}

Outcome structural_invariants() {
  Outcome o;
  NoGradScope no_grad;
  std::mt19937_64 rng(31);
  std::size_t bad_bounds = 0, bad_mask = 0, bad_simplex = 0;
  const std::size_t settings = 1000;
  for (std::size_t s = 0; s < settings; ++s) {
    nn::Initializer init(rng());
    const std::size_t dim = 4 + rng() % 5, frames = 2 + rng() % 20;
    const auto seg = heads::SegmentationHead::create(dim, init);
    const auto ret = heads::RetrievalHead::create(dim, init);
    const double scale = std::exp(std::uniform_real_distribution<double>(-2.0, 2.5)(rng));
    const auto repr = gaussian({frames, dim}, rng, scale);

    const auto dist = heads::predict_moment_span(repr, ret);
    bad_simplex += !on_simplex(dist.p_start) || !on_simplex(dist.p_end);
    const auto span = heads::decode_moment(dist);
    bad_bounds += span.start > span.end || span.end >= frames;

    const std::size_t a = rng() % frames, b = rng() % frames;
    const heads::MomentSpan moment{std::min(a, b), std::max(a, b)};
    const std::size_t max_steps = 1 + rng() % 8;
    const auto bounds = heads::predict_step_boundaries(repr, moment, seg, max_steps);
    bool ok = !bounds.empty() && bounds.back() == moment.end && bounds.size() <= max_steps;
    for (std::size_t k = 0; ok && k < bounds.size(); ++k) {
      if (moment.start < moment.end) ok = bounds[k] > moment.start;
      ok = ok && bounds[k] <= moment.end && (k == 0 || bounds[k] > bounds[k - 1]);
    }
    bad_bounds += !ok;

    if (moment.start < moment.end) {
      for (std::size_t k = 0; k < bounds.size(); ++k) {
        const auto sd = heads::step_distribution(repr, moment, std::span(bounds).first(k), seg);
        const std::size_t last = k == 0 ? moment.start : bounds[k - 1];
        for (std::size_t j = 0; j < frames; ++j) {
          const bool allowed = j > last && j <= moment.end;
          bad_mask += allowed == (sd.mask[j] != 0);
        }
        bad_simplex += !on_simplex(sd.probs, sd.mask);
      }
    }
  }
  o.require(bad_bounds == 0, std::to_string(bad_bounds) + " invalid boundary lists");
  o.require(bad_mask == 0, std::to_string(bad_mask) + " mask errors");
  o.require(bad_simplex == 0, std::to_string(bad_simplex) + " distributions off the simplex");
  o.note(std::to_string(settings) + " random settings");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"closed-form losses", closed_form_losses},
      {"gate invariants", gate_invariants},
      {"overfit oracle", overfit_oracle},
      {"ablation direction", ablation_direction},
      {"metric oracles", metric_oracles},
      {"determinism and round-trip", determinism_round_trip},
      {"structural invariants", structural_invariants},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failed += !out.pass;
    std::printf("[%s] %zu %s: %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                out.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
