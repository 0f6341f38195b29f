#include "quag/episode.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace quag::data {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& message) {
  throw EpisodeError(EpisodeErrorCode::InvariantViolation, field,
                     "episode invariant violated in '" + field + "': " + message);
}

void require_finite(const Tensor& t, const std::string& field) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) invalid(field, "non-finite feature value");
  }
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

void put_floats(std::vector<unsigned char>& out, const Tensor& t) {
  for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

Tensor get_floats(std::span<const unsigned char> bytes, std::size_t offset, Shape shape) {
  const std::size_t n = shape_numel(shape);
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
  }
  return Tensor::from_floats(std::move(shape), values);
}

}  // namespace

void validate_episode(const EpisodeRecord& r) {
  if (r.id.empty()) invalid("id", "empty id");
  if (!r.visual.defined() || r.visual.rank() != 2) invalid("visual", "expected [N_v x D_v] features");
  if (!r.audio.defined() || r.audio.rank() != 2) invalid("audio", "expected [N_v x D_a] features");
  if (!r.query.defined() || r.query.rank() != 1) invalid("query", "expected a [D_t] vector");
  const std::size_t n = r.visual.dim(0);
  if (r.audio.dim(0) != n) {
    invalid("audio", "length " + std::to_string(r.audio.dim(0)) + " differs from visual length " +
                         std::to_string(n));
  }
  require_finite(r.visual, "visual");
  require_finite(r.audio, "audio");
  require_finite(r.query, "query");
  if (!(r.moment.start < r.moment.end && r.moment.end < n)) {
    invalid("moment", "need 0 <= start < end < N_v, got (" + std::to_string(r.moment.start) + ", " +
                          std::to_string(r.moment.end) + ") with N_v = " + std::to_string(n));
  }
  if (r.steps.empty()) invalid("steps", "no step boundaries");
  std::size_t prev = r.moment.start;
  for (auto b : r.steps) {
    if (b <= prev) invalid("steps", "boundaries must be strictly ascending and after the moment start");
    prev = b;
  }
  if (r.steps.back() != r.moment.end) invalid("steps", "last boundary must equal the moment end");
  if (r.captions.size() != r.steps.size()) {
    invalid("captions", std::to_string(r.captions.size()) + " captions for " +
                            std::to_string(r.steps.size()) + " steps");
  }
  if (r.caption_text.size() != r.steps.size()) {
    invalid("caption_text", std::to_string(r.caption_text.size()) + " caption strings for " +
                                std::to_string(r.steps.size()) + " steps");
  }
  for (const auto& cap : r.captions) {
    for (int tok : cap) {
      if (tok < 0) invalid("captions", "negative token id");
    }
  }
}

std::vector<unsigned char> encode_episode(const EpisodeRecord& r) {
  validate_episode(r);
  nlohmann::json meta{{"id", r.id},
                      {"frames", r.visual.dim(0)},
                      {"visual_dim", r.visual.dim(1)},
                      {"audio_dim", r.audio.dim(1)},
                      {"text_dim", r.query.dim(0)},
                      {"moment", {r.moment.start, r.moment.end}},
                      {"steps", r.steps},
                      {"captions", r.captions},
                      {"caption_text", r.caption_text}};
  const std::string meta_text = meta.dump();
  std::vector<unsigned char> out;
  out.reserve(16 + meta_text.size() + 4 * (r.visual.numel() + r.audio.numel() + r.query.numel()));
  out.insert(out.end(), std::begin(kEpisodeMagic), std::end(kEpisodeMagic));
  put_u32(out, kEpisodeVersion);
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.insert(out.end(), meta_text.begin(), meta_text.end());
  put_floats(out, r.visual);
  put_floats(out, r.audio);
  put_floats(out, r.query);
  return out;
}

EpisodeRecord decode_episode(std::span<const unsigned char> bytes) {
  constexpr std::size_t header = sizeof(kEpisodeMagic) + 8;
  if (bytes.size() < header) {
    throw EpisodeError(EpisodeErrorCode::Truncated, "header",
                       "episode file truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  if (!std::equal(std::begin(kEpisodeMagic), std::end(kEpisodeMagic), bytes.begin(),
                  [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; })) {
    throw EpisodeError(EpisodeErrorCode::CorruptHeader, "magic", "not an episode file (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kEpisodeVersion) {
    throw EpisodeError(EpisodeErrorCode::CorruptHeader, "version",
                       "unsupported episode format version " + std::to_string(version));
  }
  const std::size_t meta_len = get_u32(bytes, 12);
  if (bytes.size() < header + meta_len) {
    throw EpisodeError(EpisodeErrorCode::Truncated, "metadata", "episode metadata truncated");
  }
  nlohmann::json meta;
  std::size_t frames = 0, dv = 0, da = 0, dt = 0;
  EpisodeRecord r;
  try {
    meta = nlohmann::json::parse(bytes.begin() + header,
                                 bytes.begin() + static_cast<std::ptrdiff_t>(header + meta_len));
    r.id = meta.at("id").get<std::string>();
    frames = meta.at("frames").get<std::size_t>();
    dv = meta.at("visual_dim").get<std::size_t>();
    da = meta.at("audio_dim").get<std::size_t>();
    dt = meta.at("text_dim").get<std::size_t>();
    const auto moment = meta.at("moment").get<std::vector<std::size_t>>();
    if (moment.size() != 2) throw std::invalid_argument("moment must have two entries");
    r.moment = {moment[0], moment[1]};
    r.steps = meta.at("steps").get<std::vector<std::size_t>>();
    r.captions = meta.at("captions").get<std::vector<std::vector<int>>>();
    r.caption_text = meta.at("caption_text").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw EpisodeError(EpisodeErrorCode::CorruptHeader, "metadata",
                       std::string("episode metadata unreadable: ") + e.what());
  }
  if (frames == 0 || dv == 0 || da == 0 || dt == 0) {
    throw EpisodeError(EpisodeErrorCode::CorruptHeader, "metadata", "zero feature extent in metadata");
  }
  const std::size_t floats = frames * dv + frames * da + dt;
  const std::size_t expected = header + meta_len + 4 * floats;
  if (bytes.size() < expected) {
    throw EpisodeError(EpisodeErrorCode::Truncated, "payload",
                       "episode payload truncated: have " + std::to_string(bytes.size()) +
                           " bytes, need " + std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw EpisodeError(EpisodeErrorCode::CorruptHeader, "payload",
                       "episode file has " + std::to_string(bytes.size() - expected) +
                           " trailing bytes");
  }
  std::size_t offset = header + meta_len;
  r.visual = get_floats(bytes, offset, {frames, dv});
  offset += 4 * frames * dv;
  r.audio = get_floats(bytes, offset, {frames, da});
  offset += 4 * frames * da;
  r.query = get_floats(bytes, offset, {dt});
  validate_episode(r);
  return r;
}

void write_episode(const EpisodeRecord& record, const fs::path& path) {
  const auto bytes = encode_episode(record);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw EpisodeError(EpisodeErrorCode::Io, "path", "cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw EpisodeError(EpisodeErrorCode::Io, "path", "write failed for " + path.string());
}

EpisodeRecord load_episode(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EpisodeError(EpisodeErrorCode::Io, "path", "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_episode(bytes);
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(word);
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* special : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(special);
}

void Vocabulary::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw std::invalid_argument("vocabulary: invalid token '" + token + "'");
  }
  if (index_.contains(token)) throw std::invalid_argument("vocabulary: duplicate token '" + token + "'");
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words)
    if (!v.index_.contains(w)) v.add(w);
  return v;
}

Vocabulary Vocabulary::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  Vocabulary fresh;
  if (lines.size() < fresh.size() ||
      !std::equal(fresh.tokens_.begin(), fresh.tokens_.end(), lines.begin())) {
    throw std::runtime_error("vocabulary " + path.string() + " does not start with the special tokens");
  }
  Vocabulary v;
  for (std::size_t i = v.size(); i < lines.size(); ++i) v.add(lines[i]);
  return v;
}

void Vocabulary::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? heads::SpecialTokens{}.unk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  return nlohmann::json{{"version", 1},
                        {"split", split},
                        {"episodes", episodes},
                        {"vocabulary", vocabulary},
                        {"dims", {{"visual", dims.visual}, {"audio", dims.audio}, {"text", dims.text}}},
                        {"generator", generator}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.split = j.at("split").get<std::string>();
  m.episodes = j.at("episodes").get<std::vector<std::string>>();
  m.vocabulary = j.at("vocabulary").get<std::string>();
  const auto& dims = j.at("dims");
  m.dims = {dims.at("visual").get<std::size_t>(), dims.at("audio").get<std::size_t>(),
            dims.at("text").get<std::size_t>()};
  m.generator = j.value("generator", nlohmann::json());
  return m;
}

void DatasetManifest::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write manifest " + path.string());
  out << to_json().dump(2) << '\n';
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open manifest " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
}

Dataset load_dataset(const fs::path& manifest_path) {
  Dataset ds;
  ds.manifest = DatasetManifest::load(manifest_path);
  const fs::path root = manifest_path.parent_path();
  ds.vocabulary = Vocabulary::load(root / ds.manifest.vocabulary);
  for (const auto& rel : ds.manifest.episodes) {
    auto ep = load_episode(root / rel);
    const FeatureDims dims{ep.visual.dim(1), ep.audio.dim(1), ep.query.dim(0)};
    if (dims != ds.manifest.dims) {
      throw EpisodeError(EpisodeErrorCode::InvariantViolation, "dims",
                         "episode " + rel + " feature dims disagree with the manifest");
    }
    for (const auto& cap : ep.captions) {
      for (int tok : cap) {
        if (static_cast<std::size_t>(tok) >= ds.vocabulary.size()) {
          throw EpisodeError(EpisodeErrorCode::InvariantViolation, "captions",
                             "episode " + rel + " uses token id " + std::to_string(tok) +
                                 " beyond the vocabulary");
        }
      }
    }
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace quag::data
