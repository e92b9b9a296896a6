#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace foreranker {

struct Session;

using TokenId = std::int32_t;

/// Token to id map with four reserved ids ahead of the corpus tokens.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kNumReserved = 4;

  Vocabulary() = default;
  /// Tokens are deduplicated and sorted so the id assignment does not depend
  /// on input order.
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary from_sessions(std::span<const Session> sessions);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId id(const std::string& token) const;
  std::vector<TokenId> tokenize(std::span<const std::string> tokens) const;
  /// Whitespace-split convenience overload.
  std::vector<TokenId> tokenize(const std::string& text) const;

  /// Total id space including the reserved ids.
  std::size_t size() const { return tokens_.size() + kNumReserved; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace foreranker
