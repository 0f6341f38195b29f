#include "quag/model_check.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace quag {

TinyInstance make_tiny_instance(std::uint64_t seed, FusionMode fusion) {
  TinyInstance inst;
  auto& c = inst.config;
  c.visual_dim = 6;
  c.audio_dim = 5;
  c.text_dim = 4;
  c.dim = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn_hidden = 16;
  c.max_frames = 5;
  c.max_caption_len = 4;
  c.vocab_size = 12;
  c.fusion = fusion;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random = [&](Shape shape) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(gauss(rng));
    return Tensor::from_floats(std::move(shape), v);
  };
  const std::size_t n = 5;
  data::EpisodeRecord a;
  a.id = "tiny-0";
  a.visual = random({n, c.visual_dim});
  a.audio = random({n, c.audio_dim});
  a.query = random({c.text_dim});
  a.moment = {1, 4};
  a.steps = {2, 4};
  a.captions = {{4, 5, 6}, {7, 8}};
  a.caption_text = {"w0 w1 w2", "w3 w4"};

  data::EpisodeRecord b;
  b.id = "tiny-1";
  b.visual = random({n, c.visual_dim});
  b.audio = random({n, c.audio_dim});
  b.query = random({c.text_dim});
  b.moment = {0, 3};
  b.steps = {1, 2, 3};
  b.captions = {{9}, {10, 11}, {4, 9, 11}};
  b.caption_text = {"w5", "w6 w7", "w0 w5 w7"};
  inst.episodes = {a, b};
  return inst;
}

std::vector<GroupCheck> check_model_gradients(const ModelCheckOptions& options) {
  const auto all_groups = QuagModel::groups();
  std::vector<std::string> groups = options.groups.empty() ? all_groups : options.groups;
  for (const auto& g : groups) {
    if (std::find(all_groups.begin(), all_groups.end(), g) == all_groups.end()) {
      throw std::invalid_argument("unknown parameter group '" + g + "'");
    }
  }

  const auto inst = make_tiny_instance(options.seed, options.fusion);
  const QuagModel model = QuagModel::create(inst.config, options.seed);
  std::vector<const data::EpisodeRecord*> batch;
  for (const auto& ep : inst.episodes) batch.push_back(&ep);

  GradCheckOptions gc;
  gc.step = options.step;
  gc.seed = options.seed;

  std::vector<GroupCheck> out;
  for (const auto& group : groups) {
    const auto params = model.registry.with_prefix(group + ".");
    for (loss::Task task : {loss::Task::Retrieval, loss::Task::Segmentation, loss::Task::Captioning}) {
      auto f = [&] {
        const Tensor total = batch_loss(model, batch, task, options.lambda).total;
        return options.fault_factor == 1.0 ? total : corrupt_backward(total, options.fault_factor);
      };
      GroupCheck check;
      check.group = group;
      check.task = task;
      check.result = grad_check(f, params, gc);
      check.passed = check.result.max_rel_error < kModelGradTolerance;
      out.push_back(std::move(check));
    }
  }
  return out;
}

}  // namespace quag
