#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "quag/config.hpp"
#include "quag/episode.hpp"
#include "quag/losses.hpp"
#include "quag/model.hpp"

namespace quag {

// A NaN/inf loss or gradient. Carries the offending parameter when known.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& message, std::string parameter = {})
      : std::runtime_error(message), parameter_(std::move(parameter)) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// A parameter without a gradient is treated as having a zero gradient.
class AdamW {
 public:
  AdamW(NamedTensors params, AdamWOptions options);

  void step();
  std::uint64_t steps() const { return step_; }
  const AdamWOptions& options() const { return options_; }

  // Moment buffers as "adamw.m:<param>", "adamw.v:<param>" plus "adamw.step".
  NamedTensors state() const;
  void load_state(const NamedTensors& tensors);

 private:
  NamedTensors params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
  AdamWOptions options_;
};

// Checkpoint layout, little-endian:
//   8 bytes magic "QUAGCKPT", u32 version, u64 model-config digest, u32 count,
//   then per tensor: u32 name length, name bytes, u32 rank, u64 extents,
//   f32 payload.
inline constexpr char kCheckpointMagic[8] = {'Q', 'U', 'A', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::uint64_t digest = 0;
  NamedTensors tensors;

  const Tensor* find(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into the model's parameters. The digest and every
// parameter name and shape must match.
void load_parameters(QuagModel& model, const Checkpoint& checkpoint);

// The three task cycle, in order.
inline constexpr std::array<loss::Task, 3> kTaskCycle = {
    loss::Task::Retrieval, loss::Task::Segmentation, loss::Task::Captioning};

// Cyclic, order-preserving loader: batch k holds episodes (k*B + i) mod n.
class TaskLoader {
 public:
  TaskLoader(loss::Task task, std::vector<const data::EpisodeRecord*> episodes, std::size_t batch);
  std::vector<const data::EpisodeRecord*> batch(std::uint64_t index) const;
  std::size_t size() const { return episodes_.size(); }
  std::size_t batches_per_pass() const;
  loss::Task task() const { return task_; }

 private:
  loss::Task task_;
  std::vector<const data::EpisodeRecord*> episodes_;
  std::size_t batch_;
};

struct IterationRecord {
  std::uint64_t iteration = 0;  // 1-based
  std::uint64_t epoch = 0;      // 1-based
  loss::Task task = loss::Task::Retrieval;
  double task_loss = 0.0;
  double msp_loss = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const;
};

struct EpochStats {
  std::uint64_t epoch = 0;
  std::array<double, 3> task_loss{};  // mean per task, indexed like kTaskCycle
  std::array<double, 3> msp_loss{};
  std::array<std::size_t, 3> iterations{};
};

class Trainer {
 public:
  Trainer(QuagModel& model, const std::vector<data::EpisodeRecord>& episodes, TrainConfig config);

  // One round-robin iteration: next task, next batch, backward, AdamW step.
  IterationRecord step();
  // Runs up to the next epoch boundary.
  EpochStats run_epoch(std::ostream* log = nullptr);

  std::uint64_t iteration() const { return iteration_; }
  std::size_t iterations_per_epoch() const { return iterations_per_epoch_; }
  loss::Task next_task() const { return kTaskCycle[iteration_ % 3]; }

  Checkpoint checkpoint() const;
  // Restores parameters, optimizer moments and the iteration counter.
  void restore(const Checkpoint& checkpoint);

  const TrainConfig& config() const { return config_; }
  const AdamW& optimizer() const { return optimizer_; }

 private:
  QuagModel& model_;
  TrainConfig config_;
  std::vector<TaskLoader> loaders_;
  AdamW optimizer_;
  std::uint64_t iteration_ = 0;
  std::size_t iterations_per_epoch_ = 0;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<EpochStats> epochs;
};

// Writes config.json, metrics.jsonl and checkpoint.bin under out_dir. On a
// non-finite loss the pre-step state goes to checkpoint.last_good.bin and
// NonFiniteError is thrown. With resume_from, training continues from that
// checkpoint and the log is appended to.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const data::Dataset& dataset, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace quag
