#include <gtest/gtest.h>

#include "quag/model.hpp"
#include "quag/model_check.hpp"
#include "quag/synthetic.hpp"

using namespace quag;

namespace {

ModelConfig small_config(FusionMode fusion = FusionMode::Quag) {
  ModelConfig c;
  c.visual_dim = c.audio_dim = c.text_dim = 12;
  c.dim = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.ffn_hidden = 32;
  c.max_frames = 16;
  c.max_caption_len = 6;
  c.fusion = fusion;
  return c;
}

std::vector<data::EpisodeRecord> corpus(std::size_t frames, std::size_t episodes = 3) {
  data::SyntheticOptions o;
  o.seed = 5;
  o.episodes = episodes;
  o.frames = frames;
  o.feature_dim = 12;
  return data::synthesize(o).episodes;
}

std::vector<const data::EpisodeRecord*> pointers(const std::vector<data::EpisodeRecord>& eps) {
  std::vector<const data::EpisodeRecord*> out;
  for (const auto& e : eps) out.push_back(&e);
  return out;
}

}  // namespace

TEST(QuagModel, ShapeAudit) {
  const auto model = QuagModel::create(small_config(), 1);
  const auto eps = corpus(7);
  const auto enc = encode_episode(model, eps[0]);
  EXPECT_EQ(enc.repr.shape(), (Shape{7, 16}));
  EXPECT_EQ(enc.pooled_visual.shape(), (Shape{16}));
  EXPECT_EQ(enc.pooled_audio.shape(), (Shape{16}));

  const auto batch = pointers(eps);
  const auto ret = forward(model, batch, loss::Task::Retrieval);
  ASSERT_EQ(ret.spans.size(), 3u);
  EXPECT_EQ(ret.spans[0].p_start.shape(), (Shape{7}));
  const auto seg = forward(model, batch, loss::Task::Segmentation);
  std::size_t steps = 0;
  for (const auto& e : eps) steps += e.steps.size();
  EXPECT_EQ(seg.steps.size(), steps);
  const auto cap = forward(model, batch, loss::Task::Captioning);
  ASSERT_EQ(cap.caption_logits.size(), steps);
  EXPECT_EQ(cap.caption_logits[0].dim(1), model.config.vocab_size);
  EXPECT_EQ(cap.caption_logits[0].dim(0), cap.caption_targets[0].size());
}

TEST(QuagModel, RejectsMismatchedEpisodes) {
  const auto model = QuagModel::create(small_config(), 1);
  auto ep = corpus(7)[0];
  ep.visual = Tensor::zeros({7, 5});
  EXPECT_THROW(check_episode_dims(model, ep), ShapeError);
  auto long_ep = corpus(20)[0];
  EXPECT_THROW(encode_episode(model, long_ep), ShapeError);
}

TEST(QuagModel, ForwardIsPure) {
  const auto model = QuagModel::create(small_config(), 2);
  const auto eps = corpus(9);
  const auto a = encode_episode(model, eps[1]).repr.to_floats();
  const auto b = encode_episode(model, eps[1]).repr.to_floats();
  EXPECT_EQ(a, b);
  const auto p1 = predict(model, eps[1]), p2 = predict(model, eps[1]);
  EXPECT_EQ(p1.moment, p2.moment);
  EXPECT_EQ(p1.steps, p2.steps);
  EXPECT_EQ(p1.captions, p2.captions);
}

TEST(QuagModel, RegistryIsStableAcrossSeedsAndModes) {
  const auto a = QuagModel::create(small_config(), 3);
  const auto b = QuagModel::create(small_config(), 3);
  const auto c = QuagModel::create(small_config(), 4);
  ASSERT_EQ(a.registry.size(), b.registry.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.registry.size(); ++i) {
    const auto& [name, t] = a.registry.entries()[i];
    EXPECT_EQ(name, b.registry.entries()[i].first);
    EXPECT_EQ(t.to_floats(), b.registry.entries()[i].second.to_floats()) << name;
    differs = differs || t.to_floats() != c.registry.entries()[i].second.to_floats();
  }
  EXPECT_TRUE(differs);
  for (auto mode : {FusionMode::Joint, FusionMode::MspOnly, FusionMode::Qc2Only}) {
    const auto m = QuagModel::create(small_config(mode), 3);
    ASSERT_EQ(m.registry.size(), a.registry.size());
    for (std::size_t i = 0; i < m.registry.size(); ++i) {
      EXPECT_EQ(m.registry.entries()[i].first, a.registry.entries()[i].first);
    }
  }
  for (const auto& group : QuagModel::groups()) {
    EXPECT_FALSE(a.registry.with_prefix(group + ".").empty()) << group;
  }
}

TEST(QuagModel, FusionModesRouteGradients) {
  const auto eps = corpus(8);
  const auto batch = pointers(eps);
  for (auto mode : {FusionMode::Quag, FusionMode::Joint, FusionMode::MspOnly, FusionMode::Qc2Only}) {
    auto model = QuagModel::create(small_config(mode), 6);
    model.registry.zero_grad();
    const auto bundle = batch_loss(model, batch, loss::Task::Retrieval, 0.1);
    bundle.total.backward();
    auto touched = [&](const std::string& group) {
      for (const auto& [name, t] : model.registry.with_prefix(group + ".")) {
        if (!t.has_grad()) continue;
        for (double g : t.grad())
          if (g != 0.0) return true;
      }
      return false;
    };
    EXPECT_EQ(touched("msp"), uses_msp(mode)) << fusion_name(mode);
    EXPECT_EQ(touched("qc2"), uses_qc2(mode)) << fusion_name(mode);
    EXPECT_TRUE(touched("retrieval"));
    if (!uses_msp(mode)) EXPECT_EQ(bundle.msp_loss.item(), 0.0);
    else EXPECT_GT(bundle.msp_loss.item(), 0.0);
  }
}

TEST(QuagModel, PredictionStructure) {
  const auto model = QuagModel::create(small_config(), 7);
  for (const auto& ep : corpus(12, 4)) {
    const auto p = predict(model, ep);
    EXPECT_EQ(p.id, ep.id);
    EXPECT_LE(p.moment.start, p.moment.end);
    EXPECT_LT(p.moment.end, ep.frames());
    ASSERT_FALSE(p.steps.empty());
    EXPECT_EQ(p.steps.back(), p.moment.end);
    EXPECT_LE(p.steps.size(), model.config.max_steps);
    EXPECT_EQ(p.captions.size(), p.steps.size());
    for (const auto& c : p.captions) EXPECT_LE(c.size(), model.config.max_caption_len);
  }
}

TEST(CaptionPairs, TeacherForcingLayout) {
  const heads::SpecialTokens tok;
  const auto pair = caption_pair({7, 8, 9}, tok, 8);
  EXPECT_EQ(pair.input, (std::vector<int>{1, 7, 8, 9}));
  EXPECT_EQ(pair.target, (std::vector<int>{7, 8, 9, 2}));
  const auto cut = caption_pair({7, 8, 9}, tok, 2);
  EXPECT_EQ(cut.input, (std::vector<int>{1, 7}));
  EXPECT_EQ(cut.target, (std::vector<int>{7, 2}));
}

TEST(CaptionPairs, WindowFollowsSteps) {
  ModelConfig c = small_config();
  const heads::MomentSpan moment{2, 9};
  const std::vector<std::size_t> steps{4, 6, 9};
  EXPECT_EQ(caption_window(c, moment, steps, 0), (std::pair<std::size_t, std::size_t>{2, 4}));
  EXPECT_EQ(caption_window(c, moment, steps, 2), (std::pair<std::size_t, std::size_t>{7, 9}));
  c.caption_full_moment = true;
  EXPECT_EQ(caption_window(c, moment, steps, 1), (std::pair<std::size_t, std::size_t>{2, 9}));
}

TEST(ModelGradients, EveryGroupAndTaskPasses) {
  ModelCheckOptions o;
  const auto checks = check_model_gradients(o);
  EXPECT_EQ(checks.size(), QuagModel::groups().size() * 3);
  for (const auto& c : checks) {
    EXPECT_TRUE(c.passed) << c.group << "/" << loss::task_name(c.task) << " rel " << c.result.max_rel_error;
  }
}

TEST(ModelGradients, InjectedFaultIsDetected) {
  ModelCheckOptions o;
  o.groups = {"qc2"};
  o.fault_factor = 1.5;
  bool any_failed = false;
  for (const auto& c : check_model_gradients(o)) any_failed = any_failed || !c.passed;
  EXPECT_TRUE(any_failed);
}
