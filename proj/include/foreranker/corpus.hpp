#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foreranker/vocab.hpp"

namespace foreranker {

using Tokens = std::vector<std::string>;

struct Document {
  std::string doc_id;
  Tokens tokens;
  bool clicked = false;

  bool operator==(const Document&) const = default;
};

struct QueryTurn {
  Tokens query;
  std::vector<Document> candidates;
  /// First clicked candidate, if the user clicked anything.
  std::optional<std::size_t> positive_index;

  bool operator==(const QueryTurn&) const = default;
};

struct Session {
  std::string session_id;
  std::vector<QueryTurn> turns;

  bool operator==(const Session&) const = default;
};

struct BehaviorPair {
  Tokens query;
  Tokens document;

  bool operator==(const BehaviorPair&) const = default;
};

/// Ordered (query, first-clicked document) pairs taken from one side of a turn.
struct BehaviorWindow {
  std::vector<BehaviorPair> pairs;

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }
  bool operator==(const BehaviorWindow&) const = default;
};

enum class InputVariant { kHistory, kHistoryFuture };

struct SerializedInput {
  std::vector<TokenId> token_ids;
  InputVariant variant = InputVariant::kHistory;
  /// History pairs that survived truncation.
  std::size_t history_pairs = 0;
  std::size_t future_pairs = 0;
};

inline constexpr std::size_t kDefaultFutureTurns = 2;
inline constexpr std::size_t kUnboundedFuture = std::numeric_limits<std::size_t>::max();
inline constexpr std::size_t kDefaultMaxLength = 128;

/// Throws InputError on a malformed turn (empty candidates, bad positive).
void validate(const Session& session);

/// Clicked turns strictly before `turn`; clickless turns contribute nothing.
BehaviorWindow build_history(const Session& session, std::size_t turn);

/// Clicked turns in (turn, turn + k], clipped at the end of the session.
BehaviorWindow build_future(const Session& session, std::size_t turn,
                            std::size_t k = kDefaultFutureTurns);

/// [CLS] H q [SEP] d [SEP]. Oldest history pairs are dropped to fit
/// `max_length`; the query and document are never cut.
SerializedInput serialize_history(const BehaviorWindow& history, std::span<const std::string> query,
                                  std::span<const std::string> document, const Vocabulary& vocab,
                                  std::size_t max_length = kDefaultMaxLength);

/// [CLS] H q [SEP] d [SEP] F [SEP]. Future pairs are dropped from the far end
/// first, then history pairs from the oldest end.
SerializedInput serialize_future(const BehaviorWindow& history, std::span<const std::string> query,
                                 std::span<const std::string> document,
                                 const BehaviorWindow& future, const Vocabulary& vocab,
                                 std::size_t max_length = kDefaultMaxLength);

/// One JSON object per line. Output is byte-stable for equal inputs.
void write_corpus(std::span<const Session> sessions, const std::filesystem::path& path);
std::vector<Session> load_corpus(const std::filesystem::path& path);

std::string session_to_json(const Session& session);
Session session_from_json(const std::string& line, std::size_t line_number);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace foreranker
