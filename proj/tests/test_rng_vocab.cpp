#include <doctest.h>

#include <filesystem>

#include "foreranker/rng.hpp"
#include "foreranker/vocab.hpp"

using namespace foreranker;

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("derived streams are stable per label and distinct across labels") {
  auto a = make_rng(7, "shuffle/0");
  auto b = make_rng(7, "shuffle/0");
  auto c = make_rng(7, "shuffle/1");
  auto d = make_rng(8, "shuffle/0");
  const auto xa = a(), xb = b(), xc = c(), xd = d();
  CHECK(xa == xb);
  CHECK(xa != xc);
  CHECK(xa != xd);
}

TEST_CASE("vocabulary ids do not depend on token order") {
  Vocabulary v1({"b", "a", "c", "a"});
  Vocabulary v2({"c", "b", "a"});
  CHECK(v1 == v2);
  CHECK(v1.size() == 3 + Vocabulary::kNumReserved);
  CHECK(v1.id("a") == Vocabulary::kNumReserved);
  CHECK(v1.id("c") == Vocabulary::kNumReserved + 2);
  CHECK(v1.hash() == v2.hash());
}

TEST_CASE("unknown tokens map to the unknown id") {
  Vocabulary v({"x"});
  auto ids = v.tokenize("x zzz x");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == Vocabulary::kNumReserved);
  CHECK(ids[1] == Vocabulary::kUnk);
}

TEST_CASE("vocabulary save and load round trip") {
  const auto path = std::filesystem::temp_directory_path() / "foreranker_vocab_test.txt";
  Vocabulary v({"delta", "alpha", "charlie"});
  v.save(path);
  auto back = Vocabulary::load(path);
  CHECK(back == v);
  CHECK(back.hash() == v.hash());
  std::filesystem::remove(path);
}

TEST_CASE("different vocabularies hash differently") {
  CHECK(Vocabulary({"a", "b"}).hash() != Vocabulary({"a", "c"}).hash());
  CHECK(Vocabulary({"ab"}).hash() != Vocabulary({"a", "b"}).hash());
}
