#include "foreranker/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "foreranker/corpus.hpp"
#include "foreranker/errors.hpp"
#include "foreranker/rng.hpp"

namespace foreranker {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(tokens_[i], static_cast<TokenId>(i) + kNumReserved);
  }
}

Vocabulary Vocabulary::from_sessions(std::span<const Session> sessions) {
  std::set<std::string> seen;
  for (const auto& s : sessions) {
    for (const auto& turn : s.turns) {
      seen.insert(turn.query.begin(), turn.query.end());
      for (const auto& doc : turn.candidates) seen.insert(doc.tokens.begin(), doc.tokens.end());
    }
  }
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  write_file_atomic(path, out);
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::tokenize(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<TokenId> Vocabulary::tokenize(const std::string& text) const {
  std::istringstream in(text);
  std::vector<std::string> parts;
  for (std::string t; in >> t;) parts.push_back(std::move(t));
  return tokenize(parts);
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("foreranker-vocab");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

}  // namespace foreranker
