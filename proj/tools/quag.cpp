// quag: synthesize data, train, evaluate, gradient-check and run fusion
// ablations from the command line.
//
// Exit codes: 0 ok, 2 usage or invalid configuration, 3 I/O, 4 numeric
// failure (non-finite loss, failed gradient check).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "quag/ablation.hpp"
#include "quag/evaluate.hpp"
#include "quag/model_check.hpp"
#include "quag/synthetic.hpp"
#include "quag/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace quag;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kNumeric = 4 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::ios_base::failure("failed writing " + path.string());
}

std::size_t env_threads() {
  const char* v = std::getenv("QUAG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("QUAG_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

// Flags shared by train and ablate. Unset flags leave the config-file or
// preset value alone.
struct ConfigFlags {
  std::optional<std::string> config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> dim, heads, batch, epochs, encoder_layers;
  std::optional<double> tau, lambda, lr, dropout, weight_decay;
  std::optional<std::string> fusion;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON file with \"model\" and \"train\" sections");
    app->add_option("--preset", preset, "Base settings before the config file")
        ->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--seed", seed, "Initialization and data-order seed");
    app->add_option("--dim", dim, "Hidden size D");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--encoder-layers", encoder_layers, "Multi-modal encoder depth");
    app->add_option("--tau", tau, "Contrastive temperature");
    app->add_option("--lambda", lambda, "Weight of the contrastive loss");
    app->add_option("--lr", lr, "AdamW learning rate");
    app->add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay");
    app->add_option("--batch", batch, "Batch size");
    app->add_option("--epochs", epochs, "Round-robin epochs");
    app->add_option("--dropout", dropout, "Dropout rate");
    app->add_option("--fusion", fusion, "Fusion mode")
        ->check(CLI::IsMember({"quag", "joint", "msp-only", "qc2-only"}));
  }

  std::pair<ModelConfig, TrainConfig> resolve() const {
    ModelConfig mc = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
    TrainConfig tc = preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
    if (config) {
      const json j = read_json(*config);
      try {
        if (j.contains("model")) {
          json merged = mc;
          merged.update(j["model"]);
          mc = merged.get<ModelConfig>();
        }
        if (j.contains("train")) {
          json merged = tc;
          merged.update(j["train"]);
          tc = merged.get<TrainConfig>();
        }
      } catch (const json::exception& e) {
        throw UsageError(*config + ": " + e.what());
      }
    }
    if (seed) tc.seed = *seed;
    if (dim) mc.dim = *dim;
    if (heads) mc.heads = *heads;
    if (encoder_layers) mc.encoder_layers = *encoder_layers;
    if (tau) mc.temperature = *tau;
    if (lambda) tc.lambda = *lambda;
    if (lr) tc.lr = *lr;
    if (weight_decay) tc.weight_decay = *weight_decay;
    if (batch) tc.batch = *batch;
    if (epochs) tc.epochs = *epochs;
    if (dropout) mc.dropout = *dropout;
    if (fusion) mc.fusion = parse_fusion(*fusion);
    return {mc, tc};
  }
};

// Input dims, vocabulary and frame budget follow the dataset.
void fit_to_dataset(ModelConfig& mc, const data::Dataset& ds) {
  mc.visual_dim = ds.manifest.dims.visual;
  mc.audio_dim = ds.manifest.dims.audio;
  mc.text_dim = ds.manifest.dims.text;
  mc.vocab_size = ds.vocabulary.size();
  for (const auto& ep : ds.episodes) mc.max_frames = std::max(mc.max_frames, ep.frames());
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  data::SyntheticOptions options;
  std::size_t holdout = 0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const auto manifest = data::generate_synthetic_dataset(a.options, a.out, a.holdout);
  std::cout << manifest.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  ConfigFlags flags;
  std::string data;
  std::string out;
  std::optional<std::string> resume;
};

int run_train(const TrainArgs& a) {
  auto [mc, tc] = a.flags.resolve();
  const auto ds = data::load_dataset(a.data);
  fit_to_dataset(mc, ds);
  std::optional<fs::path> resume;
  if (a.resume) resume = *a.resume;
  try {
    const auto result = train(mc, tc, ds, a.out, resume);
    json summary = {{"checkpoint", result.checkpoint.string()}, {"log", result.log.string()}};
    if (!result.epochs.empty()) {
      const auto& last = result.epochs.back();
      summary["final_epoch"] = last.epoch;
      for (std::size_t t = 0; t < kTaskCycle.size(); ++t) {
        summary["final_task_loss"][loss::task_name(kTaskCycle[t])] = last.task_loss[t];
      }
    }
    std::cout << summary.dump() << '\n';
  } catch (const NonFiniteError& e) {
    std::cerr << "quag train: " << e.what() << "; last good state in "
              << (fs::path(a.out) / "checkpoint.last_good.bin").string() << '\n';
    return kNumeric;
  }
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string data;
  std::optional<std::string> checkpoint;
  std::optional<std::string> model_config;
  std::string out;
  bool oracle = false;
  bool pretty = false;
  bool per_episode = false;
};

int run_eval(const EvalArgs& a) {
  if (!a.oracle && !a.checkpoint) throw UsageError("eval needs --checkpoint or --oracle");
  const auto ds = data::load_dataset(a.data);
  EvalOptions opts;
  opts.threads = env_threads();
  opts.per_episode_segmentation = a.per_episode;

  json run = {{"data", a.data}, {"oracle", a.oracle}, {"per_episode_segmentation", a.per_episode},
              {"threads", opts.threads}};
  std::vector<Prediction> predictions;
  if (a.oracle) {
    predictions = oracle_predictions(ds);
  } else {
    const fs::path ckpt_path = *a.checkpoint;
    const fs::path cfg_path = a.model_config ? fs::path(*a.model_config) : ckpt_path.parent_path() / "config.json";
    const json cfg = read_json(cfg_path);
    if (!cfg.contains("model")) throw UsageError(cfg_path.string() + " has no \"model\" section");
    const auto mc = cfg["model"].get<ModelConfig>();
    QuagModel model = QuagModel::create(mc, 0);
    load_parameters(model, read_checkpoint(ckpt_path));
    for (const auto& ep : ds.episodes) check_episode_dims(model, ep);
    predictions = predict_all(model, ds, opts.threads);
    run["checkpoint"] = ckpt_path.string();
    run["model"] = mc;
    if (cfg.contains("train")) run["train"] = cfg["train"];
  }

  json report = evaluate(predictions, ds, opts);
  report["config"] = run;
  validate_report(report);
  write_json(report, a.out);
  if (a.pretty) {
    std::cout << render_report(report);
  } else {
    std::cout << json{{"report", a.out},
                      {"retrieval", report["retrieval"]},
                      {"segmentation", report["segmentation"]},
                      {"rouge_l", report["captioning"]["rouge_l"]},
                      {"cider", report["captioning"]["cider"]}}
                     .dump()
              << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::vector<std::string> groups;
  std::uint64_t seed = 0;
  double step = 1e-3;
  bool inject_fault = false;
  std::string fusion = "quag";
};

int run_gradcheck(const GradcheckArgs& a) {
  ModelCheckOptions o;
  o.seed = a.seed;
  o.groups = a.groups;
  o.step = a.step;
  o.fusion = parse_fusion(a.fusion);
  if (a.inject_fault) o.fault_factor = 1.5;
  const auto checks = check_model_gradients(o);
  bool ok = true;
  std::printf("%-14s %-5s %12s  %s\n", "group", "task", "max rel err", "status");
  for (const auto& c : checks) {
    ok = ok && c.passed;
    std::printf("%-14s %-5s %12.3e  %s\n", c.group.c_str(), loss::task_name(c.task).c_str(),
                c.result.max_rel_error, c.passed ? "pass" : "FAIL");
  }
  std::printf("tolerance %.0e: %s\n", kModelGradTolerance, ok ? "all groups pass" : "failures");
  return ok ? kOk : kNumeric;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  ConfigFlags flags;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> modes{"quag", "joint"};
  std::size_t episodes = 32, holdout = 8, frames = 32, feature_dim = 32;
  double noise = 0.5;
  std::string out;
  bool pretty = false;
};

int run_ablate(const AblateArgs& a) {
  auto [mc, tc] = a.flags.resolve();
  if (!a.flags.epochs && !(a.flags.config)) tc.epochs = 10;
  AblationOptions o;
  o.seeds = a.seeds;
  o.modes.clear();
  for (const auto& m : a.modes) o.modes.push_back(parse_fusion(m));
  o.episodes = a.episodes;
  o.holdout = a.holdout;
  o.frames = a.frames;
  o.feature_dim = a.feature_dim;
  o.noise = a.noise;
  o.model = mc;
  o.train = tc;
  const json report = run_ablation(o, [&](const std::string& line) {
    if (a.pretty) std::cout << line << std::endl;
  });
  write_json(report, a.out);
  if (a.pretty) {
    for (const auto& [mode, value] : report["mean"].items()) {
      std::printf("mean %-8s %.4f\n", mode.c_str(), value.get<double>());
    }
    std::printf("direction %s\n", report["direction_holds"].get<bool>() ? "holds" : "FAILS");
  } else {
    std::cout << json{{"report", a.out}, {"mean", report["mean"]},
                      {"direction_holds", report["direction_holds"]}}
                     .dump()
              << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QUAG: query-centric audio-visual moment retrieval, segmentation and step captioning"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory (created if missing)")->required();
  synth_cmd->add_option("--seed", synth.options.seed, "Generator seed");
  synth_cmd->add_option("--episodes", synth.options.episodes, "Number of episodes");
  synth_cmd->add_option("--frames", synth.options.frames, "Frames per episode (N_v >= 4)");
  synth_cmd->add_option("--feature-dim", synth.options.feature_dim, "Feature size of every stream");
  synth_cmd->add_option("--vocab", synth.options.vocab_size, "Vocabulary size including specials");
  synth_cmd->add_option("--noise", synth.options.noise, "Gaussian noise std");
  synth_cmd->add_option("--topics", synth.options.topics, "Number of query topics");
  synth_cmd->add_option("--step-types", synth.options.step_types, "Number of step types");
  synth_cmd->add_option("--holdout", synth.holdout, "Episodes reserved for test.json");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Round-robin multi-task training");
  train_cmd->add_option("--data", tr.data, "Dataset manifest")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  tr.flags.attach(train_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Predict and score a dataset split");
  eval_cmd->add_option("--data", ev.data, "Dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint");
  eval_cmd->add_option("--model-config", ev.model_config,
                       "Run config.json (default: next to the checkpoint)");
  eval_cmd->add_option("--out", ev.out, "Report path")->required();
  eval_cmd->add_flag("--oracle", ev.oracle, "Score the ground truth against itself");
  eval_cmd->add_flag("--pretty", ev.pretty, "Print tables instead of JSON");
  eval_cmd->add_flag("--per-episode-seg", ev.per_episode, "Average segmentation rates per episode");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gc_cmd->add_option("--group", gc.groups, "Restrict to these groups")
      ->check(CLI::IsMember(QuagModel::groups()));
  gc_cmd->add_option("--seed", gc.seed, "Instance seed");
  gc_cmd->add_option("--step", gc.step, "Central-difference step");
  gc_cmd->add_option("--fusion", gc.fusion, "Fusion mode")
      ->check(CLI::IsMember({"quag", "joint", "msp-only", "qc2-only"}));
  gc_cmd->add_flag("--inject-fault", gc.inject_fault, "Corrupt the backward pass (negative control)");

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Compare fusion modes on held-out synthetic data");
  ab_cmd->add_option("--out", ab.out, "Report path")->required();
  ab_cmd->add_option("--seeds", ab.seeds, "Corpus and initialization seeds")->delimiter(',');
  ab_cmd->add_option("--modes", ab.modes, "Fusion modes, the first is compared to the rest")
      ->delimiter(',')
      ->check(CLI::IsMember({"quag", "joint", "msp-only", "qc2-only"}));
  ab_cmd->add_option("--episodes", ab.episodes, "Episodes per corpus");
  ab_cmd->add_option("--holdout", ab.holdout, "Held-out episodes per corpus");
  ab_cmd->add_option("--frames", ab.frames, "Frames per episode");
  ab_cmd->add_option("--feature-dim", ab.feature_dim, "Feature size of every stream");
  ab_cmd->add_option("--noise", ab.noise, "Gaussian noise std");
  ab_cmd->add_flag("--pretty", ab.pretty, "Print progress and a summary");
  ab.flags.attach(ab_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(gc);
    if (*ab_cmd) return run_ablate(ab);
  } catch (const NonFiniteError& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kNumeric;
  } catch (const data::EpisodeError& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kIo;
  } catch (const CheckpointError& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kUsage;
  } catch (const std::runtime_error& e) {
    // Remaining runtime errors come from malformed data files.
    std::cerr << "quag: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "quag: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
