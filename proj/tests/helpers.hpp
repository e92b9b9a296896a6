#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "foreranker/corpus.hpp"
#include "foreranker/encoder.hpp"
#include "foreranker/rng.hpp"

namespace testing_support {

// A session whose turn t has query "q<t>" and candidates "d<t>_<j>". The
// positive is candidate 0 when clicked[t] is set.
inline foreranker::Session make_session(const std::string& id, const std::vector<bool>& clicked,
                                        std::size_t candidates = 3) {
  foreranker::Session s;
  s.session_id = id;
  for (std::size_t t = 0; t < clicked.size(); ++t) {
    foreranker::QueryTurn turn;
    turn.query = {"q" + std::to_string(t)};
    for (std::size_t j = 0; j < candidates; ++j) {
      foreranker::Document d;
      d.doc_id = id + "/d" + std::to_string(t) + "_" + std::to_string(j);
      d.tokens = {"d" + std::to_string(t) + "_" + std::to_string(j), "w" + std::to_string(j)};
      d.clicked = clicked[t] && j == 0;
      turn.candidates.push_back(d);
    }
    if (clicked[t]) turn.positive_index = 0;
    s.turns.push_back(turn);
  }
  return s;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("foreranker_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> random_scores(foreranker::Rng& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> s(n);
  for (auto& x : s) x = u(rng);
  return s;
}

// Five-point central difference of f at x along one coordinate; the error is
// O(h^4), which leaves room for tight relative tolerances.
template <typename F>
double five_point(F&& f, double h) {
  return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

// A model small enough for finite differences.
inline foreranker::ArchConfig tiny_arch(std::size_t vocab_size = 16) {
  foreranker::ArchConfig a;
  a.vocab_size = vocab_size;
  a.d_model = 8;
  a.heads = 2;
  a.ff_width = 12;
  a.layers = 2;
  a.max_length = 24;
  a.head_hidden = 6;
  return a;
}

inline std::vector<foreranker::TokenId> random_input(foreranker::Rng& rng, std::size_t vocab_size,
                                                     std::size_t length) {
  std::vector<foreranker::TokenId> ids{foreranker::Vocabulary::kCls};
  for (std::size_t i = 1; i < length; ++i) {
    ids.push_back(static_cast<foreranker::TokenId>(
        foreranker::Vocabulary::kSep + rng() % (vocab_size - foreranker::Vocabulary::kSep)));
  }
  return ids;
}

}  // namespace testing_support
