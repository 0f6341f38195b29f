#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "quag/synthetic.hpp"
#include "quag/trainer.hpp"

using namespace quag;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.visual_dim = c.audio_dim = c.text_dim = 8;
  c.dim = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.ffn_hidden = 16;
  c.max_frames = 10;
  c.max_caption_len = 5;
  return c;
}

data::SyntheticCorpus small_corpus(std::size_t episodes = 5) {
  data::SyntheticOptions o;
  o.seed = 2;
  o.episodes = episodes;
  o.frames = 10;
  o.feature_dim = 8;
  return data::synthesize(o);
}

TrainConfig small_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch = 2;
  t.seed = 3;
  return t;
}

std::vector<std::vector<float>> snapshot(const QuagModel& m) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : m.registry.entries()) out.push_back(t.to_floats());
  return out;
}

QuagModel make_model(const data::SyntheticCorpus& corpus, std::uint64_t seed = 1) {
  auto c = small_config();
  c.vocab_size = corpus.vocabulary.size();
  return QuagModel::create(c, seed);
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("quag_trainer_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(AdamW, FirstStepHandTrace) {
  PrecisionScope f64(Precision::F64);
  auto w = Tensor::from_values({1}, {1.0}, true);
  AdamW opt({{"w", w}}, {.lr = 0.1, .weight_decay = 0.0});
  sum(w).backward();
  opt.step();
  // m_hat = g = 1, v_hat = g^2 = 1.
  EXPECT_NEAR(w.item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.item(), 0.9, 1e-8);
}

TEST(AdamW, DecoupledDecayOnZeroGradient) {
  PrecisionScope f64(Precision::F64);
  auto w = Tensor::from_values({2}, {2.0, -4.0}, true);
  AdamW opt({{"w", w}}, {.lr = 0.1, .weight_decay = 0.5});
  opt.step();
  EXPECT_NEAR(w.at(0), 2.0 * (1 - 0.05), 1e-15);
  EXPECT_NEAR(w.at(1), -4.0 * (1 - 0.05), 1e-15);
}

TEST(AdamW, WithDecayAddsShrinkToAdamStep) {
  PrecisionScope f64(Precision::F64);
  auto a = Tensor::from_values({1}, {1.0}, true), b = Tensor::from_values({1}, {1.0}, true);
  AdamW with({{"a", a}}, {.lr = 0.1, .weight_decay = 0.01});
  AdamW without({{"b", b}}, {.lr = 0.1, .weight_decay = 0.0});
  sum(a).backward();
  sum(b).backward();
  with.step();
  without.step();
  EXPECT_NEAR(b.item() - a.item(), 0.1 * 0.01 * 1.0, 1e-15);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  auto a = Tensor::from_values({2}, {1.0, 1.0}, true), b = Tensor::from_values({1}, {1.0}, true);
  AdamW opt({{"a", a}, {"b", b}}, {});
  sum(add(scale(sum(a), 0.0), b)).backward();
  b.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.parameter(), "b");
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_EQ(a.at(0), 1.0);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(TaskLoader, CyclicOrderPreserving) {
  const auto corpus = small_corpus(5);
  std::vector<const data::EpisodeRecord*> eps;
  for (const auto& e : corpus.episodes) eps.push_back(&e);
  const TaskLoader loader(loss::Task::Retrieval, eps, 2);
  EXPECT_EQ(loader.batches_per_pass(), 3u);
  const auto b2 = loader.batch(2);
  ASSERT_EQ(b2.size(), 2u);
  EXPECT_EQ(b2[0], eps[4]);
  EXPECT_EQ(b2[1], eps[0]);
  EXPECT_THROW(TaskLoader(loss::Task::Retrieval, {}, 2), std::invalid_argument);
}

TEST(Trainer, RoundRobinTasks) {
  const auto corpus = small_corpus();
  auto model = make_model(corpus);
  Trainer trainer(model, corpus.episodes, small_train());
  EXPECT_EQ(trainer.iterations_per_epoch(), 9u);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto rec = trainer.step();
    EXPECT_EQ(rec.task, kTaskCycle[i % 3]);
    EXPECT_EQ(rec.iteration, i + 1);
    EXPECT_TRUE(std::isfinite(rec.total));
  }
  EXPECT_EQ(trainer.next_task(), loss::Task::Segmentation);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUntouched) {
  const auto corpus = small_corpus();
  auto model = make_model(corpus);
  const auto before = snapshot(model);
  auto cfg = small_train();
  cfg.lr = 0.0;
  Trainer trainer(model, corpus.episodes, cfg);
  trainer.run_epoch();
  EXPECT_EQ(snapshot(model), before);
}

TEST(Trainer, DeterministicAndLogsOneLinePerIteration) {
  const auto corpus = small_corpus();
  auto c = small_config();
  c.vocab_size = corpus.vocabulary.size();
  c.dropout = 0.1;
  auto a = QuagModel::create(c, 1), b = QuagModel::create(c, 1);
  Trainer ta(a, corpus.episodes, small_train()), tb(b, corpus.episodes, small_train());
  std::ostringstream log_a, log_b;
  ta.run_epoch(&log_a);
  tb.run_epoch(&log_b);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_EQ(log_a.str(), log_b.str());
  std::istringstream lines(log_a.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("iteration").get<std::size_t>(), ++count);
    EXPECT_TRUE(j.contains("task_loss"));
  }
  EXPECT_EQ(count, ta.iterations_per_epoch());
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto corpus = small_corpus();
  auto c = small_config();
  c.vocab_size = corpus.vocabulary.size();
  c.dropout = 0.1;
  auto full = QuagModel::create(c, 1);
  Trainer tf(full, corpus.episodes, small_train());
  tf.run_epoch();
  tf.run_epoch();

  auto first = QuagModel::create(c, 1);
  Trainer t1(first, corpus.episodes, small_train());
  t1.run_epoch();
  const auto bytes = encode_checkpoint(t1.checkpoint());

  auto resumed = QuagModel::create(c, 99);
  Trainer t2(resumed, corpus.episodes, small_train());
  t2.restore(decode_checkpoint(bytes));
  EXPECT_EQ(t2.iteration(), t1.iteration());
  t2.run_epoch();

  const auto sf = snapshot(full), sr = snapshot(resumed);
  ASSERT_EQ(sf.size(), sr.size());
  for (std::size_t i = 0; i < sf.size(); ++i) {
    for (std::size_t j = 0; j < sf[i].size(); ++j) EXPECT_NEAR(sf[i][j], sr[i][j], 1e-7);
  }
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto corpus = small_corpus();
  auto model = make_model(corpus);
  Trainer trainer(model, corpus.episodes, small_train());
  trainer.step();
  const auto ckpt = trainer.checkpoint();
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.digest, ckpt.digest);
  ASSERT_EQ(back.tensors.size(), ckpt.tensors.size());
  EXPECT_NE(back.find("adamw.step"), nullptr);
  EXPECT_EQ(back.find("nope"), nullptr);

  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  EXPECT_THROW(decode_checkpoint(std::span(bytes).first(bytes.size() - 3)), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(1);
  EXPECT_THROW(decode_checkpoint(trailing), CheckpointError);

  auto other_cfg = model.config;
  other_cfg.dim = 16;
  auto other = QuagModel::create(other_cfg, 1);
  EXPECT_THROW(load_parameters(other, back), CheckpointError);

  auto fresh = make_model(corpus, 5);
  load_parameters(fresh, back);
  EXPECT_EQ(snapshot(fresh), snapshot(model));
  EXPECT_THROW(read_checkpoint("/nonexistent/ckpt.bin"), std::exception);
}

TEST(Train, WritesArtifactsAndResumes) {
  const auto dir = scratch("artifacts");
  const auto data_dir = dir / "data";
  data::SyntheticOptions o;
  o.seed = 2;
  o.episodes = 4;
  o.frames = 10;
  o.feature_dim = 8;
  const auto manifest = data::generate_synthetic_dataset(o, data_dir);
  const auto dataset = data::load_dataset(manifest);
  auto mc = small_config();
  mc.vocab_size = dataset.vocabulary.size();
  auto tc = small_train();
  tc.epochs = 1;
  const auto result = train(mc, tc, dataset, dir / "run");
  EXPECT_TRUE(fs::exists(dir / "run" / "config.json"));
  EXPECT_TRUE(fs::exists(result.checkpoint));
  auto count_lines = [&] {
    std::ifstream in(result.log);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
  };
  const auto per_epoch = count_lines();
  EXPECT_GT(per_epoch, 0u);
  tc.epochs = 2;
  train(mc, tc, dataset, dir / "run", result.checkpoint);
  EXPECT_EQ(count_lines(), 2 * per_epoch);
  fs::remove_all(dir);
}
