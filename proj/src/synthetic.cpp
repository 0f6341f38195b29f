#include "quag/synthetic.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <random>

namespace quag::data {

namespace fs = std::filesystem;

namespace {

constexpr std::array kWordPool = {
    "add",    "the",     "onion",   "stir",   "pan",    "slowly", "cut",    "dough",
    "into",   "pieces",  "pour",    "sauce",  "mix",    "flour",  "water",  "bake",
    "for",    "minutes", "heat",    "oil",    "fold",   "paper",  "edges",  "glue",
    "paint",  "wall",    "sand",    "board",  "drill",  "hole",   "tighten", "screw",
    "rinse",  "rice",    "boil",    "eggs",   "whisk",  "cream",  "chop",   "garlic",
    "spread", "butter",  "roll",    "crust",  "trim",   "fabric", "sew",    "seam",
    "plant",  "seeds",   "water",   "soil",   "press",  "button", "attach", "cable",
    "wipe",   "surface", "measure", "length", "mark",   "line",   "lift",   "lid"};

// Deduplicated pool words in first-occurrence order.
std::vector<std::string> word_pool() {
  std::vector<std::string> words;
  for (const char* w : kWordPool) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.emplace_back(w);
  }
  return words;
}

std::vector<std::vector<double>> signal_vectors(std::size_t count, std::size_t dim,
                                                std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> out;
  const bool orthogonalize = count <= dim;
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> v(dim);
    for (auto& x : v) x = gauss(rng);
    if (orthogonalize) {
      for (const auto& u : out) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

void SyntheticOptions::validate() const {
  if (episodes < 1) throw std::invalid_argument("synthetic: need at least one episode");
  if (frames < 4) throw std::invalid_argument("synthetic: frames (N_v) must be at least 4");
  if (vocab_size < 8) throw std::invalid_argument("synthetic: vocab_size must be at least 8");
  if (vocab_size - 4 > word_pool().size()) {
    throw std::invalid_argument("synthetic: vocab_size may not exceed " +
                                std::to_string(word_pool().size() + 4));
  }
  if (feature_dim < 1) throw std::invalid_argument("synthetic: feature_dim must be positive");
  if (!(noise >= 0.0)) throw std::invalid_argument("synthetic: noise must be nonnegative");
  if (topics < 1 || step_types < 1) throw std::invalid_argument("synthetic: need topics and step types");
  if (caption_words < 1) throw std::invalid_argument("synthetic: caption_words must be positive");
}

nlohmann::json SyntheticOptions::to_json() const {
  return nlohmann::json{{"seed", seed},         {"episodes", episodes},
                        {"frames", frames},     {"feature_dim", feature_dim},
                        {"vocab_size", vocab_size}, {"noise", noise},
                        {"topics", topics},     {"step_types", step_types},
                        {"caption_words", caption_words}};
}

SyntheticCorpus synthesize(const SyntheticOptions& o) {
  o.validate();
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  const auto pool = word_pool();
  const std::vector<std::string> words(pool.begin(),
                                       pool.begin() + static_cast<std::ptrdiff_t>(o.vocab_size - 4));
  SyntheticCorpus corpus;
  corpus.vocabulary = Vocabulary::from_words(words);

  std::vector<std::string> templates;
  for (std::size_t t = 0; t < o.step_types; ++t) {
    std::string text;
    for (std::size_t w = 0; w < o.caption_words; ++w) {
      if (!text.empty()) text += ' ';
      text += words[uniform(0, words.size() - 1)];
    }
    templates.push_back(text);
  }

  const auto basis = signal_vectors(o.topics + o.step_types, o.feature_dim, rng);
  const std::vector<std::vector<double>> topic_vecs(basis.begin(),
                                                    basis.begin() + static_cast<std::ptrdiff_t>(o.topics));
  const std::vector<std::vector<double>> type_vecs(basis.begin() + static_cast<std::ptrdiff_t>(o.topics),
                                                   basis.end());

  const std::size_t n = o.frames, d = o.feature_dim;
  for (std::size_t e = 0; e < o.episodes; ++e) {
    EpisodeRecord r;
    char id[64];
    std::snprintf(id, sizeof(id), "syn-%llu-%04zu", static_cast<unsigned long long>(o.seed), e);
    r.id = id;

    const std::size_t topic = uniform(0, o.topics - 1);
    const std::size_t min_len = std::max<std::size_t>(2, n / 4);
    const std::size_t max_len = std::max<std::size_t>(min_len, n / 2);
    const std::size_t length = uniform(min_len, max_len);
    const std::size_t start = uniform(0, n - length);
    r.moment = {start, start + length - 1};

    const std::size_t step_count = std::max<std::size_t>(1, std::min<std::size_t>(uniform(2, 3), length / 2));
    std::vector<std::size_t> step_len(step_count, 2);
    for (std::size_t extra = length - 2 * step_count; extra > 0; --extra) {
      ++step_len[uniform(0, step_count - 1)];
    }
    std::vector<std::size_t> step_type(step_count);
    for (std::size_t k = 0; k < step_count; ++k) {
      do {
        step_type[k] = uniform(0, o.step_types - 1);
      } while (k > 0 && o.step_types > 1 && step_type[k] == step_type[k - 1]);
    }

    // Per-frame planted signal.
    std::vector<double> signal(n * d, 0.0);
    std::size_t cursor = start;
    for (std::size_t k = 0; k < step_count; ++k) {
      for (std::size_t f = cursor; f < cursor + step_len[k]; ++f) {
        for (std::size_t j = 0; j < d; ++j) {
          signal[f * d + j] = topic_vecs[topic][j] + type_vecs[step_type[k]][j];
        }
      }
      cursor += step_len[k];
      r.steps.push_back(cursor - 1);
      r.caption_text.push_back(templates[step_type[k]]);
      r.captions.push_back(corpus.vocabulary.encode(templates[step_type[k]]));
    }

    std::vector<double> visual(n * d), audio(n * d), query(d);
    for (std::size_t i = 0; i < n * d; ++i) visual[i] = signal[i] + o.noise * gauss(rng);
    for (std::size_t i = 0; i < n * d; ++i) audio[i] = signal[i] + o.noise * gauss(rng);
    for (std::size_t j = 0; j < d; ++j) query[j] = topic_vecs[topic][j] + 0.25 * o.noise * gauss(rng);

    std::vector<float> vf(visual.begin(), visual.end());
    std::vector<float> af(audio.begin(), audio.end());
    std::vector<float> qf(query.begin(), query.end());
    r.visual = Tensor::from_floats({n, d}, vf);
    r.audio = Tensor::from_floats({n, d}, af);
    r.query = Tensor::from_floats({d}, qf);
    validate_episode(r);
    corpus.episodes.push_back(std::move(r));
  }
  return corpus;
}

fs::path generate_synthetic_dataset(const SyntheticOptions& options, const fs::path& out_dir,
                                    std::size_t holdout) {
  const auto corpus = synthesize(options);
  if (holdout >= corpus.episodes.size() && holdout != 0) {
    throw std::invalid_argument("synthetic: holdout must leave at least one training episode");
  }
  fs::create_directories(out_dir);
  corpus.vocabulary.save(out_dir / "vocab.txt");

  DatasetManifest all;
  all.split = "all";
  all.vocabulary = "vocab.txt";
  all.dims = {options.feature_dim, options.feature_dim, options.feature_dim};
  all.generator = options.to_json();
  for (std::size_t i = 0; i < corpus.episodes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%04zu.qep", i);
    write_episode(corpus.episodes[i], out_dir / name);
    all.episodes.emplace_back(name);
  }
  all.save(out_dir / "manifest.json");

  if (holdout > 0) {
    DatasetManifest train = all, test = all;
    train.split = "train";
    test.split = "test";
    const auto cut = static_cast<std::ptrdiff_t>(all.episodes.size() - holdout);
    train.episodes.assign(all.episodes.begin(), all.episodes.begin() + cut);
    test.episodes.assign(all.episodes.begin() + cut, all.episodes.end());
    train.save(out_dir / "train.json");
    test.save(out_dir / "test.json");
  }
  return out_dir / "manifest.json";
}

}  // namespace quag::data
