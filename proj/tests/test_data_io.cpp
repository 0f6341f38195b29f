#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "quag/episode.hpp"
#include "quag/synthetic.hpp"

using namespace quag;
using namespace quag::data;
namespace fs = std::filesystem;

namespace {

EpisodeRecord sample_episode() {
  EpisodeRecord r;
  r.id = "ep_x";
  std::vector<double> v(5 * 3), a(5 * 2), q(4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1f * static_cast<float>(i) - 0.7f;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -0.05f * static_cast<float>(i);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = 1.5f + static_cast<float>(i);
  r.visual = Tensor::from_values({5, 3}, v);
  r.audio = Tensor::from_values({5, 2}, a);
  r.query = Tensor::from_values({4}, q);
  r.moment = {1, 4};
  r.steps = {2, 4};
  r.captions = {{4, 5}, {6}};
  r.caption_text = {"cut onion", "stir"};
  return r;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("quag_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

EpisodeErrorCode decode_error(std::span<const unsigned char> bytes) {
  try {
    decode_episode(bytes);
  } catch (const EpisodeError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return EpisodeErrorCode::Io;
}

}  // namespace

TEST(EpisodeFormat, RoundTripIsBitExact) {
  const auto r = sample_episode();
  const auto bytes = encode_episode(r);
  const auto back = decode_episode(bytes);
  EXPECT_EQ(back.id, r.id);
  EXPECT_EQ(back.moment, r.moment);
  EXPECT_EQ(back.steps, r.steps);
  EXPECT_EQ(back.captions, r.captions);
  EXPECT_EQ(back.caption_text, r.caption_text);
  EXPECT_EQ(back.visual.to_floats(), r.visual.to_floats());
  EXPECT_EQ(back.audio.to_floats(), r.audio.to_floats());
  EXPECT_EQ(back.query.to_floats(), r.query.to_floats());
  EXPECT_EQ(encode_episode(back), bytes);
}

TEST(EpisodeFormat, HeaderCorruption) {
  auto bytes = encode_episode(sample_episode());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(decode_error(bad_magic), EpisodeErrorCode::CorruptHeader);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_EQ(decode_error(bad_version), EpisodeErrorCode::CorruptHeader);
}

TEST(EpisodeFormat, TruncationAndTrailingBytes) {
  const auto bytes = encode_episode(sample_episode());
  for (std::size_t cut : {std::size_t{4}, std::size_t{14}, std::size_t{40}, bytes.size() - 1}) {
    EXPECT_EQ(decode_error(std::span(bytes).first(cut)), EpisodeErrorCode::Truncated) << cut;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_EQ(decode_error(longer), EpisodeErrorCode::CorruptHeader);
}

TEST(EpisodeFormat, InvariantsNameTheField) {
  auto r = sample_episode();
  r.steps = {4, 2};
  try {
    validate_episode(r);
    FAIL();
  } catch (const EpisodeError& e) {
    EXPECT_EQ(e.code(), EpisodeErrorCode::InvariantViolation);
    EXPECT_EQ(e.field(), "steps");
  }
  r = sample_episode();
  r.moment = {1, 7};
  EXPECT_THROW(validate_episode(r), EpisodeError);
  r = sample_episode();
  r.steps = {2, 3};
  EXPECT_THROW(validate_episode(r), EpisodeError);
  r = sample_episode();
  r.audio = Tensor::zeros({4, 2});
  EXPECT_THROW(validate_episode(r), EpisodeError);
}

TEST(EpisodeFormat, MissingFileIsAnIoError) {
  try {
    load_episode("/nonexistent/ep.qep");
    FAIL();
  } catch (const EpisodeError& e) {
    EXPECT_EQ(e.code(), EpisodeErrorCode::Io);
  }
}

TEST(Vocabulary, SpecialTokensAndRoundTrip) {
  auto vocab = Vocabulary::from_words({"stir", "the", "pot", "stir"});
  EXPECT_EQ(vocab.size(), 7u);
  EXPECT_EQ(vocab.id("<pad>"), 0);
  EXPECT_EQ(vocab.id("stir"), 4);
  EXPECT_EQ(vocab.id("never"), 3);
  const auto ids = vocab.encode("Stir  THE pan");
  EXPECT_EQ(ids, (std::vector<int>{4, 5, 3}));
  const auto dir = scratch("vocab");
  vocab.save(dir / "v.txt");
  const auto back = Vocabulary::load(dir / "v.txt");
  EXPECT_EQ(back.tokens(), vocab.tokens());
  EXPECT_EQ(back.decode(std::vector<int>{4, 6}), "stir pot");
  fs::remove_all(dir);
}

TEST(Tokenize, LowercaseWhitespaceSplit) {
  EXPECT_EQ(tokenize("  Add\tSalt\nNow "), (std::vector<std::string>{"add", "salt", "now"}));
  EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Synthetic, DeterministicAndValid) {
  SyntheticOptions o;
  o.seed = 9;
  o.episodes = 6;
  const auto a = synthesize(o), b = synthesize(o);
  ASSERT_EQ(a.episodes.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(encode_episode(a.episodes[i]), encode_episode(b.episodes[i]));
    EXPECT_NO_THROW(validate_episode(a.episodes[i]));
    EXPECT_GE(a.episodes[i].steps.size(), 2u);
  }
  o.seed = 10;
  EXPECT_NE(encode_episode(synthesize(o).episodes[0]), encode_episode(a.episodes[0]));
}

TEST(Synthetic, RejectsBadOptions) {
  SyntheticOptions o;
  o.frames = 2;
  EXPECT_THROW(o.validate(), std::invalid_argument);
  o = {};
  o.noise = -1.0;
  EXPECT_THROW(o.validate(), std::invalid_argument);
  o = {};
  o.episodes = 0;
  EXPECT_THROW(o.validate(), std::invalid_argument);
}

TEST(Synthetic, MatchedFilterRecoversPlantedMomentAtZeroNoise) {
  SyntheticOptions o;
  o.seed = 3;
  o.episodes = 8;
  o.noise = 0.0;
  for (const auto& ep : synthesize(o).episodes) {
    std::vector<double> score(ep.frames());
    double best = 0.0;
    for (std::size_t f = 0; f < ep.frames(); ++f) {
      for (std::size_t d = 0; d < ep.query.numel(); ++d) score[f] += ep.visual.at(f, d) * ep.query.at(d);
      best = std::max(best, score[f]);
    }
    std::size_t first = ep.frames(), last = 0;
    for (std::size_t f = 0; f < ep.frames(); ++f) {
      if (score[f] > 0.5 * best) {
        first = std::min(first, f);
        last = f;
      }
    }
    EXPECT_EQ(first, ep.moment.start) << ep.id;
    EXPECT_EQ(last, ep.moment.end) << ep.id;
  }
}

TEST(Dataset, GenerateAndLoad) {
  const auto dir = scratch("dataset");
  SyntheticOptions o;
  o.seed = 4;
  o.episodes = 5;
  const auto manifest = generate_synthetic_dataset(o, dir, 2);
  const auto all = load_dataset(manifest);
  EXPECT_EQ(all.episodes.size(), 5u);
  EXPECT_EQ(all.manifest.dims, (FeatureDims{32, 32, 32}));
  EXPECT_EQ(load_dataset(dir / "train.json").episodes.size(), 3u);
  const auto test = load_dataset(dir / "test.json");
  ASSERT_EQ(test.episodes.size(), 2u);
  EXPECT_EQ(test.episodes[1].id, all.episodes[4].id);

  auto m = DatasetManifest::load(manifest);
  EXPECT_EQ(DatasetManifest::from_json(m.to_json()).episodes, m.episodes);
  m.dims.visual = 7;
  m.save(dir / "bad.json");
  EXPECT_THROW(load_dataset(dir / "bad.json"), EpisodeError);
  fs::remove_all(dir);
}
