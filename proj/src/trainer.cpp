#include "quag/trainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <ostream>

namespace quag {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- AdamW

AdamW::AdamW(NamedTensors params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr >= 0.0)) throw std::invalid_argument("adamw: lr must be nonnegative");
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + name + "'", name);
    }
  }
  ++step_;
  const auto prec = current_precision();
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  const double lr = options_.lr, wd = options_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const bool has = p.has_grad();
    auto theta = p.mutable_data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = has ? p.grad()[j] : 0.0;
      m_[i][j] = round_value(options_.beta1 * m_[i][j] + (1.0 - options_.beta1) * g, prec);
      v_[i][j] = round_value(options_.beta2 * v_[i][j] + (1.0 - options_.beta2) * g * g, prec);
      const double m_hat = m_[i][j] / c1;
      const double v_hat = v_[i][j] / c2;
      theta[j] = round_value(theta[j] - lr * (m_hat / (std::sqrt(v_hat) + options_.eps) + wd * theta[j]),
                             prec);
    }
  }
}

NamedTensors AdamW::state() const {
  NamedTensors out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    out.emplace_back("adamw.m:" + name, Tensor::from_values(p.shape(), m_[i]));
    out.emplace_back("adamw.v:" + name, Tensor::from_values(p.shape(), v_[i]));
  }
  out.emplace_back("adamw.step", Tensor::from_values({1}, {static_cast<double>(step_)}));
  return out;
}

void AdamW::load_state(const NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks optimizer state '" + name + "'");
    if (it->second->shape() != shape) {
      throw CheckpointError("optimizer state '" + name + "' has shape " +
                            shape_string(it->second->shape()) + ", expected " + shape_string(shape));
    }
    return *it->second;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    const auto m = fetch("adamw.m:" + name, p.shape()).data();
    const auto v = fetch("adamw.v:" + name, p.shape()).data();
    m_[i].assign(m.begin(), m.end());
    v_[i].assign(v.begin(), v.end());
  }
  step_ = static_cast<std::uint64_t>(fetch("adamw.step", {1}).item());
}

// ---------------------------------------------------------------- checkpoint

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::span<const unsigned char> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, ckpt.digest);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u64(out, e);
    for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  Reader in(bytes);
  auto magic = in.take(8, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.digest = in.u64("config digest");
  const auto count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.u32("name length");
    auto name_bytes = in.take(len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = in.u32("rank");
    if (rank == 0 || rank > 8) throw CheckpointError("tensor '" + name + "' has invalid rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto e = in.u64("extent");
      if (e == 0 || e > (std::uint64_t{1} << 32)) throw CheckpointError("tensor '" + name + "' has invalid extent");
      shape.push_back(static_cast<std::size_t>(e));
      numel *= static_cast<std::size_t>(e);
    }
    if (numel > bytes.size()) throw CheckpointError("checkpoint truncated in tensor '" + name + "'");
    auto payload = in.take(4 * numel, "payload");
    std::vector<float> values(numel);
    for (std::size_t k = 0; k < numel; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * k + b]) << (8 * b);
      values[k] = std::bit_cast<float>(bits);
    }
    ckpt.tensors.emplace_back(std::move(name), Tensor::from_floats(std::move(shape), values));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("failed writing " + path.string());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_parameters(QuagModel& model, const Checkpoint& ckpt) {
  if (ckpt.digest != config_digest(model.config)) {
    throw CheckpointError("checkpoint was written for a different model configuration");
  }
  for (auto& [name, param] : model.registry.entries()) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (src->shape() != param.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(src->shape()) +
                            ", model expects " + shape_string(param.shape()));
    }
    Tensor dst = param;
    std::copy(src->data().begin(), src->data().end(), dst.mutable_data().begin());
  }
}

// ---------------------------------------------------------------- loaders

TaskLoader::TaskLoader(loss::Task task, std::vector<const data::EpisodeRecord*> episodes,
                       std::size_t batch)
    : task_(task), episodes_(std::move(episodes)), batch_(batch) {
  if (episodes_.empty()) throw std::invalid_argument("empty " + loss::task_name(task) + " loader");
  if (batch_ == 0) throw std::invalid_argument("batch size must be positive");
}

std::vector<const data::EpisodeRecord*> TaskLoader::batch(std::uint64_t index) const {
  const std::size_t n = episodes_.size();
  const std::size_t count = std::min(batch_, n);
  std::vector<const data::EpisodeRecord*> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(episodes_[static_cast<std::size_t>((index * batch_ + i) % n)]);
  }
  return out;
}

std::size_t TaskLoader::batches_per_pass() const { return (episodes_.size() + batch_ - 1) / batch_; }

nlohmann::json IterationRecord::to_json() const {
  return {{"iteration", iteration}, {"epoch", epoch},       {"task", loss::task_name(task)},
          {"task_loss", task_loss}, {"msp_loss", msp_loss}, {"total", total}};
}

// ---------------------------------------------------------------- trainer

namespace {

std::size_t task_index(loss::Task task) {
  for (std::size_t i = 0; i < kTaskCycle.size(); ++i) {
    if (kTaskCycle[i] == task) return i;
  }
  return 0;
}

std::vector<TaskLoader> make_loaders(const std::vector<data::EpisodeRecord>& episodes,
                                     std::size_t batch) {
  std::vector<const data::EpisodeRecord*> all, segmented, captioned;
  for (const auto& ep : episodes) {
    all.push_back(&ep);
    if (!ep.steps.empty()) segmented.push_back(&ep);
    if (!ep.captions.empty() && ep.captions.size() == ep.steps.size()) captioned.push_back(&ep);
  }
  std::vector<TaskLoader> loaders;
  loaders.emplace_back(loss::Task::Retrieval, all, batch);
  loaders.emplace_back(loss::Task::Segmentation, segmented, batch);
  loaders.emplace_back(loss::Task::Captioning, captioned, batch);
  return loaders;
}

AdamWOptions adamw_options(const TrainConfig& c) {
  return {c.lr, c.beta1, c.beta2, c.eps, c.weight_decay};
}

}  // namespace

Trainer::Trainer(QuagModel& model, const std::vector<data::EpisodeRecord>& episodes,
                 TrainConfig config)
    : model_(model),
      config_(config),
      loaders_(make_loaders(episodes, config.batch)),
      optimizer_(model.registry.entries(), adamw_options(config)) {
  config_.validate();
  std::size_t per_task = 0;
  for (const auto& l : loaders_) per_task = std::max(per_task, l.batches_per_pass());
  iterations_per_epoch_ = per_task * kTaskCycle.size();
}

IterationRecord Trainer::step() {
  const loss::Task task = next_task();
  const auto& loader = loaders_[task_index(task)];
  const std::uint64_t served = iteration_ / kTaskCycle.size();
  const auto batch = loader.batch(served);

  // Dropout draws depend only on the seed and the iteration, so a resumed
  // run sees the same masks as an uninterrupted one.
  std::mt19937_64 rng(config_.seed * 0x9e3779b97f4a7c15ULL + iteration_);
  const nn::Dropout dropout{model_.config.dropout, model_.config.dropout > 0.0 ? &rng : nullptr};

  model_.registry.zero_grad();
  const auto bundle = batch_loss(model_, batch, task, config_.lambda, dropout);
  IterationRecord rec;
  rec.iteration = iteration_ + 1;
  rec.epoch = iteration_ / iterations_per_epoch_ + 1;
  rec.task = task;
  rec.task_loss = bundle.task_loss.item();
  rec.msp_loss = bundle.msp_loss.item();
  rec.total = bundle.total.item();
  if (!std::isfinite(rec.total)) {
    throw NonFiniteError("non-finite " + loss::task_name(task) + " loss at iteration " +
                         std::to_string(rec.iteration));
  }
  bundle.total.backward();
  optimizer_.step();
  ++iteration_;
  return rec;
}

EpochStats Trainer::run_epoch(std::ostream* log) {
  EpochStats stats;
  stats.epoch = iteration_ / iterations_per_epoch_ + 1;
  const std::size_t remaining = iterations_per_epoch_ - iteration_ % iterations_per_epoch_;
  for (std::size_t i = 0; i < remaining; ++i) {
    const auto rec = step();
    const auto t = task_index(rec.task);
    stats.task_loss[t] += rec.task_loss;
    stats.msp_loss[t] += rec.msp_loss;
    ++stats.iterations[t];
    if (log) *log << rec.to_json().dump() << '\n';
  }
  for (std::size_t t = 0; t < 3; ++t) {
    if (stats.iterations[t]) {
      stats.task_loss[t] /= static_cast<double>(stats.iterations[t]);
      stats.msp_loss[t] /= static_cast<double>(stats.iterations[t]);
    }
  }
  if (log) log->flush();
  return stats;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.digest = config_digest(model_.config);
  ckpt.tensors = model_.registry.entries();
  for (auto& entry : optimizer_.state()) ckpt.tensors.push_back(std::move(entry));
  ckpt.tensors.emplace_back("trainer.iteration",
                            Tensor::from_values({1}, {static_cast<double>(iteration_)}));
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_parameters(model_, ckpt);
  optimizer_.load_state(ckpt.tensors);
  const Tensor* it = ckpt.find("trainer.iteration");
  if (!it) throw CheckpointError("checkpoint lacks trainer.iteration");
  iteration_ = static_cast<std::uint64_t>(it->item());
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const data::Dataset& dataset, const fs::path& out_dir,
                  const std::optional<fs::path>& resume_from) {
  model_config.validate();
  train_config.validate();
  fs::create_directories(out_dir);

  QuagModel model = QuagModel::create(model_config, train_config.seed);
  for (const auto& ep : dataset.episodes) check_episode_dims(model, ep);
  Trainer trainer(model, dataset.episodes, train_config);
  if (resume_from) trainer.restore(read_checkpoint(*resume_from));

  {
    nlohmann::json cfg = {{"model", model_config}, {"train", train_config},
                          {"dataset", dataset.manifest.to_json()}};
    std::ofstream out(out_dir / "config.json");
    if (!out) throw std::ios_base::failure("cannot write " + (out_dir / "config.json").string());
    out << cfg.dump(2) << '\n';
  }

  TrainResult result;
  result.checkpoint = out_dir / "checkpoint.bin";
  result.log = out_dir / "metrics.jsonl";
  std::ofstream log(result.log, resume_from ? std::ios::app : std::ios::trunc);
  if (!log) throw std::ios_base::failure("cannot write " + result.log.string());

  const std::uint64_t target = train_config.epochs * trainer.iterations_per_epoch();
  while (trainer.iteration() < target) {
    try {
      result.epochs.push_back(trainer.run_epoch(&log));
    } catch (const NonFiniteError&) {
      // step() checks before touching any state, so the trainer still holds
      // the last good parameters.
      write_checkpoint(trainer.checkpoint(), out_dir / "checkpoint.last_good.bin");
      throw;
    }
  }
  write_checkpoint(trainer.checkpoint(), result.checkpoint);
  return result;
}

}  // namespace quag
