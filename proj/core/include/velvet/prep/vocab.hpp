#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace velvet::prep {

/// WordPiece vocabulary. Ids are line numbers of the vocabulary file; the
/// specials come first in the order [PAD], [UNK], [CLS], [MASK],
/// [SENT_1] .. [SENT_n]. Continuation pieces carry a `##` prefix.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kCls = 2;
  static constexpr std::int64_t kMask = 3;
  static constexpr int kDefaultMaxSentences = 50;

  Vocabulary() = default;

  /// Prepends the special tokens to `body`. Duplicates are rejected.
  static Vocabulary from_body(const std::vector<std::string>& body, int max_num_sent = kDefaultMaxSentences);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);
  static Vocabulary load(const std::filesystem::path& path);
  /// Small built-in vocabulary covering the synthetic report templates and
  /// common radiology words, plus single-character pieces.
  static const Vocabulary& builtin();

  void save(const std::filesystem::path& path) const;

  /// -1 when absent.
  std::int64_t id(std::string_view token) const;
  const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

  int max_num_sent() const { return max_num_sent_; }
  std::int64_t sent_id(int sentence_index) const;  // 1-based
  std::int64_t first_body_id() const { return 4 + max_num_sent_; }
  bool is_special(std::int64_t id) const { return id >= 0 && id < first_body_id(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
  int max_num_sent_ = 0;
};

}  // namespace velvet::prep
