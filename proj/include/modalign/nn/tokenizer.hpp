#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace modalign::nn {

enum class VocabMode { hashed, learned };

struct TokenizerConfig {
  bool lowercase = true;
  VocabMode mode = VocabMode::hashed;
  std::size_t num_buckets = std::size_t{1} << 15;
  std::size_t max_vocab = 20000;
  std::size_t max_sequence_length = 512;

  void validate() const;
};

nlohmann::json to_json(const TokenizerConfig& config);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnknownId = 1;

/// Token ids padded to the sequence cap, with 1 marking real tokens.
struct Encoded {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  /// Set when the text produced no tokens.
  bool empty = false;

  std::size_t length() const;
};

/// Rows of ids and masks padded to the longest member.
struct Batch {
  using IdMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  IdMatrix ids;
  MaskMatrix mask;

  Eigen::Index size() const { return ids.rows(); }
};

Batch make_batch(std::span<const Encoded> sequences);

class Tokenizer {
 public:
  explicit Tokenizer(TokenizerConfig config = {});

  /// Learned-vocabulary tokenizer: the `max_vocab` most frequent tokens of
  /// `corpus`, ties broken lexicographically.
  static Tokenizer learn(TokenizerConfig config, std::span<const std::string> corpus);
  static Tokenizer from_vocabulary(TokenizerConfig config, std::vector<std::string> vocabulary);

  /// Lowercases ASCII (when configured), splits on Unicode whitespace and
  /// isolates every ASCII punctuation character.
  std::vector<std::string> split(std::string_view text) const;

  std::int32_t token_id(std::string_view token) const;

  /// `pad` = false leaves the sequence at its real length.
  Encoded encode(std::string_view text, bool pad = true) const;

  std::size_t vocab_size() const;
  const TokenizerConfig& config() const { return config_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

 private:
  TokenizerConfig config_;
  std::vector<std::string> vocabulary_;
  std::map<std::string, std::int32_t, std::less<>> index_;
};

}  // namespace modalign::nn
