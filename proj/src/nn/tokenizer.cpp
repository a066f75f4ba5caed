#include "modalign/nn/tokenizer.hpp"

#include <algorithm>
#include <unordered_map>

#include "modalign/error.hpp"
#include "modalign/util/rng.hpp"
#include "modalign/util/strings.hpp"

namespace modalign::nn {
namespace {

bool is_unicode_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

/// Decodes one UTF-8 sequence at `i`; malformed bytes decode as themselves.
char32_t decode(std::string_view s, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  int extra = 0;
  char32_t cp = b0;
  if (b0 >= 0xF0 && b0 < 0xF8) { extra = 3; cp = b0 & 0x07; }
  else if (b0 >= 0xE0) { extra = 2; cp = b0 & 0x0F; }
  else if (b0 >= 0xC0) { extra = 1; cp = b0 & 0x1F; }
  if (b0 >= 0xF8 || i + static_cast<std::size_t>(extra) >= s.size()) {
    len = 1;
    return b0;
  }
  for (int k = 1; k <= extra; ++k) {
    const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((b & 0xC0) != 0x80) {
      len = 1;
      return b0;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  len = static_cast<std::size_t>(extra) + 1;
  return cp;
}

bool is_ascii_punct(char32_t c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
}

}  // namespace

void TokenizerConfig::validate() const {
  if (max_sequence_length == 0) throw ConfigError("tokenizer: max_sequence_length must be positive");
  if (mode == VocabMode::hashed && num_buckets == 0) throw ConfigError("tokenizer: num_buckets must be positive");
  if (mode == VocabMode::learned && max_vocab == 0) throw ConfigError("tokenizer: max_vocab must be positive");
}

nlohmann::json to_json(const TokenizerConfig& c) {
  return {{"lowercase", c.lowercase},
          {"mode", c.mode == VocabMode::hashed ? "hashed" : "learned"},
          {"num_buckets", c.num_buckets},
          {"max_vocab", c.max_vocab},
          {"max_sequence_length", c.max_sequence_length}};
}

TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j) {
  TokenizerConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "lowercase") c.lowercase = value.get<bool>();
    else if (key == "mode") {
      const auto m = value.get<std::string>();
      if (m == "hashed") c.mode = VocabMode::hashed;
      else if (m == "learned") c.mode = VocabMode::learned;
      else throw ConfigError("tokenizer: unknown vocabulary mode '" + m + "'");
    } else if (key == "num_buckets") c.num_buckets = value.get<std::size_t>();
    else if (key == "max_vocab") c.max_vocab = value.get<std::size_t>();
    else if (key == "max_sequence_length") c.max_sequence_length = value.get<std::size_t>();
    else throw ConfigError("tokenizer: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

std::size_t Encoded::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Batch make_batch(std::span<const Encoded> sequences) {
  std::size_t width = 0;
  for (const auto& s : sequences) {
    if (s.ids.size() != s.mask.size()) throw ShapeError("batch: ids and mask lengths differ");
    width = std::max(width, s.ids.size());
  }
  Batch b;
  b.ids = Batch::IdMatrix::Constant(static_cast<Eigen::Index>(sequences.size()), static_cast<Eigen::Index>(width), kPadId);
  b.mask = Batch::MaskMatrix::Zero(b.ids.rows(), b.ids.cols());
  for (std::size_t r = 0; r < sequences.size(); ++r) {
    for (std::size_t c = 0; c < sequences[r].ids.size(); ++c) {
      b.ids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sequences[r].ids[c];
      b.mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sequences[r].mask[c];
    }
  }
  return b;
}

Tokenizer::Tokenizer(TokenizerConfig config) : config_(config) { config_.validate(); }

Tokenizer Tokenizer::learn(TokenizerConfig config, std::span<const std::string> corpus) {
  config.mode = VocabMode::learned;
  Tokenizer base(config);
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& tok : base.split(text)) ++counts[std::move(tok)];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > config.max_vocab) ranked.resize(config.max_vocab);
  std::vector<std::string> vocab;
  vocab.reserve(ranked.size());
  for (auto& [tok, n] : ranked) vocab.push_back(tok);
  return from_vocabulary(config, std::move(vocab));
}

Tokenizer Tokenizer::from_vocabulary(TokenizerConfig config, std::vector<std::string> vocabulary) {
  config.mode = VocabMode::learned;
  Tokenizer t(config);
  t.vocabulary_ = std::move(vocabulary);
  for (std::size_t i = 0; i < t.vocabulary_.size(); ++i) {
    if (!t.index_.emplace(t.vocabulary_[i], static_cast<std::int32_t>(i + 2)).second) {
      throw ConfigError("tokenizer: duplicate vocabulary entry '" + t.vocabulary_[i] + "'");
    }
  }
  return t;
}

std::vector<std::string> Tokenizer::split(std::string_view text) const {
  std::vector<std::string> out;
  std::string current;
  const auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    std::size_t len = 1;
    const char32_t cp = decode(text, i, len);
    if (is_unicode_space(cp)) {
      flush();
    } else if (is_ascii_punct(cp)) {
      flush();
      out.emplace_back(1, text[i]);
    } else if (cp < 0x80 && config_.lowercase) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
    } else {
      current.append(text.substr(i, len));
    }
    i += len;
  }
  flush();
  return out;
}

std::int32_t Tokenizer::token_id(std::string_view token) const {
  if (config_.mode == VocabMode::hashed) {
    return static_cast<std::int32_t>(2 + util::fnv1a64(token) % config_.num_buckets);
  }
  const auto it = index_.find(token);
  return it == index_.end() ? kUnknownId : it->second;
}

Encoded Tokenizer::encode(std::string_view text, bool pad) const {
  const auto tokens = split(text);
  const std::size_t n = std::min(tokens.size(), config_.max_sequence_length);
  Encoded e;
  e.empty = tokens.empty();
  const std::size_t width = pad ? config_.max_sequence_length : n;
  e.ids.assign(width, kPadId);
  e.mask.assign(width, 0);
  for (std::size_t i = 0; i < n; ++i) {
    e.ids[i] = token_id(tokens[i]);
    e.mask[i] = 1;
  }
  return e;
}

std::size_t Tokenizer::vocab_size() const {
  return 2 + (config_.mode == VocabMode::hashed ? config_.num_buckets : vocabulary_.size());
}

}  // namespace modalign::nn
