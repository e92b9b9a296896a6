#include "foreranker/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "foreranker/errors.hpp"

namespace foreranker {

using Json = nlohmann::ordered_json;

void validate(const Session& session) {
  if (session.turns.empty()) {
    throw InputError("session " + session.session_id + " has no turns");
  }
  for (std::size_t t = 0; t < session.turns.size(); ++t) {
    const auto& turn = session.turns[t];
    if (turn.candidates.empty()) {
      throw InputError("session " + session.session_id + " turn " + std::to_string(t) +
                       " has no candidates");
    }
    if (turn.positive_index) {
      if (*turn.positive_index >= turn.candidates.size()) {
        throw InputError("session " + session.session_id + " turn " + std::to_string(t) +
                         ": positive_index out of range");
      }
      if (!turn.candidates[*turn.positive_index].clicked) {
        throw InputError("session " + session.session_id + " turn " + std::to_string(t) +
                         ": positive candidate is not clicked");
      }
    }
  }
}

namespace {

void check_turn(const Session& session, std::size_t turn) {
  if (turn >= session.turns.size()) {
    throw InputError("turn index " + std::to_string(turn) + " out of range for session " +
                     session.session_id + " with " + std::to_string(session.turns.size()) +
                     " turns");
  }
}

void append_pair(BehaviorWindow& window, const QueryTurn& turn) {
  if (!turn.positive_index) return;
  window.pairs.push_back({turn.query, turn.candidates[*turn.positive_index].tokens});
}

std::size_t pair_length(const BehaviorPair& p) { return p.query.size() + p.document.size(); }

void append_ids(std::vector<TokenId>& out, const Tokens& tokens, const Vocabulary& vocab) {
  for (const auto& t : tokens) out.push_back(vocab.id(t));
}

void append_ids(std::vector<TokenId>& out, std::span<const std::string> tokens,
                const Vocabulary& vocab) {
  for (const auto& t : tokens) out.push_back(vocab.id(t));
}

void check_current(std::span<const std::string> query, std::span<const std::string> document) {
  if (query.empty()) throw InputError("cannot serialize an empty query");
  if (document.empty()) throw InputError("cannot serialize an empty document");
}

}  // namespace

BehaviorWindow build_history(const Session& session, std::size_t turn) {
  check_turn(session, turn);
  BehaviorWindow window;
  for (std::size_t t = 0; t < turn; ++t) append_pair(window, session.turns[t]);
  return window;
}

BehaviorWindow build_future(const Session& session, std::size_t turn, std::size_t k) {
  check_turn(session, turn);
  BehaviorWindow window;
  const std::size_t last = session.turns.size() - 1;
  const std::size_t end = (k >= last - turn) ? last : turn + k;
  for (std::size_t t = turn + 1; t <= end; ++t) append_pair(window, session.turns[t]);
  return window;
}

SerializedInput serialize_history(const BehaviorWindow& history, std::span<const std::string> query,
                                  std::span<const std::string> document, const Vocabulary& vocab,
                                  std::size_t max_length) {
  check_current(query, document);
  std::size_t length = 3 + query.size() + document.size();
  if (length > max_length) {
    throw InputError("query and document alone need " + std::to_string(length) +
                     " tokens, more than the maximum " + std::to_string(max_length));
  }
  // Keep the most recent pairs that fit.
  std::size_t first = history.pairs.size();
  while (first > 0 && length + pair_length(history.pairs[first - 1]) <= max_length) {
    length += pair_length(history.pairs[first - 1]);
    --first;
  }

  SerializedInput out;
  out.variant = InputVariant::kHistory;
  out.history_pairs = history.pairs.size() - first;
  out.token_ids.reserve(length);
  out.token_ids.push_back(Vocabulary::kCls);
  for (std::size_t i = first; i < history.pairs.size(); ++i) {
    append_ids(out.token_ids, history.pairs[i].query, vocab);
    append_ids(out.token_ids, history.pairs[i].document, vocab);
  }
  append_ids(out.token_ids, query, vocab);
  out.token_ids.push_back(Vocabulary::kSep);
  append_ids(out.token_ids, document, vocab);
  out.token_ids.push_back(Vocabulary::kSep);
  return out;
}

SerializedInput serialize_future(const BehaviorWindow& history, std::span<const std::string> query,
                                 std::span<const std::string> document,
                                 const BehaviorWindow& future, const Vocabulary& vocab,
                                 std::size_t max_length) {
  check_current(query, document);
  const std::size_t core = 4 + query.size() + document.size();
  if (core > max_length) {
    throw InputError("query and document alone need " + std::to_string(core) +
                     " tokens, more than the maximum " + std::to_string(max_length));
  }
  std::size_t history_len = 0;
  for (const auto& p : history.pairs) history_len += pair_length(p);
  std::size_t future_len = 0;
  for (const auto& p : future.pairs) future_len += pair_length(p);

  std::size_t n_future = future.pairs.size();
  while (n_future > 0 && core + history_len + future_len > max_length) {
    future_len -= pair_length(future.pairs[n_future - 1]);
    --n_future;
  }
  std::size_t first = 0;
  while (first < history.pairs.size() && core + history_len + future_len > max_length) {
    history_len -= pair_length(history.pairs[first]);
    ++first;
  }

  SerializedInput out;
  out.variant = InputVariant::kHistoryFuture;
  out.history_pairs = history.pairs.size() - first;
  out.future_pairs = n_future;
  out.token_ids.reserve(core + history_len + future_len);
  out.token_ids.push_back(Vocabulary::kCls);
  for (std::size_t i = first; i < history.pairs.size(); ++i) {
    append_ids(out.token_ids, history.pairs[i].query, vocab);
    append_ids(out.token_ids, history.pairs[i].document, vocab);
  }
  append_ids(out.token_ids, query, vocab);
  out.token_ids.push_back(Vocabulary::kSep);
  append_ids(out.token_ids, document, vocab);
  out.token_ids.push_back(Vocabulary::kSep);
  for (std::size_t i = 0; i < n_future; ++i) {
    append_ids(out.token_ids, future.pairs[i].query, vocab);
    append_ids(out.token_ids, future.pairs[i].document, vocab);
  }
  out.token_ids.push_back(Vocabulary::kSep);
  return out;
}

std::string session_to_json(const Session& session) {
  Json turns = Json::array();
  for (const auto& turn : session.turns) {
    Json candidates = Json::array();
    for (const auto& doc : turn.candidates) {
      Json d;
      d["doc_id"] = doc.doc_id;
      d["tokens"] = doc.tokens;
      d["clicked"] = doc.clicked;
      candidates.push_back(std::move(d));
    }
    Json t;
    t["query"] = turn.query;
    t["candidates"] = std::move(candidates);
    t["positive_index"] = turn.positive_index ? Json(*turn.positive_index) : Json(nullptr);
    turns.push_back(std::move(t));
  }
  Json s;
  s["session_id"] = session.session_id;
  s["turns"] = std::move(turns);
  return s.dump();
}

namespace {

const Json& field(const Json& obj, const char* name, std::size_t line) {
  if (!obj.is_object()) throw ParseError("expected a JSON object", line);
  auto it = obj.find(name);
  if (it == obj.end()) throw ParseError(std::string("missing field \"") + name + "\"", line);
  return *it;
}

Tokens token_list(const Json& value, const char* name, std::size_t line) {
  if (!value.is_array()) throw ParseError(std::string("field \"") + name + "\" must be an array", line);
  Tokens out;
  out.reserve(value.size());
  for (const auto& v : value) {
    if (!v.is_string()) throw ParseError(std::string("field \"") + name + "\" must hold strings", line);
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

Session session_from_json(const std::string& text, std::size_t line) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  Session s;
  const auto& id = field(j, "session_id", line);
  if (!id.is_string()) throw ParseError("field \"session_id\" must be a string", line);
  s.session_id = id.get<std::string>();
  const auto& turns = field(j, "turns", line);
  if (!turns.is_array()) throw ParseError("field \"turns\" must be an array", line);
  for (const auto& jt : turns) {
    QueryTurn turn;
    turn.query = token_list(field(jt, "query", line), "query", line);
    const auto& cands = field(jt, "candidates", line);
    if (!cands.is_array()) throw ParseError("field \"candidates\" must be an array", line);
    for (const auto& jc : cands) {
      Document doc;
      const auto& did = field(jc, "doc_id", line);
      if (!did.is_string()) throw ParseError("field \"doc_id\" must be a string", line);
      doc.doc_id = did.get<std::string>();
      doc.tokens = token_list(field(jc, "tokens", line), "tokens", line);
      const auto& clicked = field(jc, "clicked", line);
      if (!clicked.is_boolean()) throw ParseError("field \"clicked\" must be a boolean", line);
      doc.clicked = clicked.get<bool>();
      turn.candidates.push_back(std::move(doc));
    }
    const auto& pos = field(jt, "positive_index", line);
    if (pos.is_number_unsigned()) {
      turn.positive_index = pos.get<std::size_t>();
    } else if (!pos.is_null()) {
      throw ParseError("field \"positive_index\" must be a non-negative integer or null", line);
    }
    s.turns.push_back(std::move(turn));
  }
  try {
    validate(s);
  } catch (const InputError& e) {
    throw ParseError(e.what(), line);
  }
  return s;
}

void write_corpus(std::span<const Session> sessions, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : sessions) {
    out += session_to_json(s);
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<Session> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  std::vector<Session> sessions;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    sessions.push_back(session_from_json(line, line_number));
  }
  return sessions;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace foreranker
