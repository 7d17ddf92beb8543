#include <doctest.h>

#include <cmath>
#include <set>

#include "rfedit/error.hpp"
#include "rfedit/latent_grid.hpp"
#include "rfedit/rng.hpp"
#include "rfedit/vocab.hpp"

using namespace rfedit;

TEST_SUITE("core") {
  TEST_CASE("latent grid arithmetic and shape checks") {
    LatentGrid a({2, 2, 2}, 1.0), b({2, 2, 2}, 3.0);
    LatentGrid c = a + b;
    CHECK(c.at(1, 1, 1) == 4.0);
    c.add_scaled(a, -4.0);
    CHECK(c.squared_norm() == 0.0);
    CHECK(b.rms() == doctest::Approx(3.0));
    CHECK_THROWS_AS(a + LatentGrid({1, 2, 2}), ShapeError);
    CHECK_THROWS_AS(LatentGrid({1, 2, 2}, std::vector<double>(3)), ShapeError);
    a[0] = std::nan("");
    CHECK_FALSE(a.all_finite());
  }

  TEST_CASE("channel-major layout") {
    LatentGrid g({3, 2, 4});
    g.at(2, 1, 3) = 7.0;
    CHECK(g[2 * 8 + 1 * 4 + 3] == 7.0);
    CHECK(g.channel(2)[7] == 7.0);
  }

  TEST_CASE("rng streams are reproducible and seed-sensitive") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
      const double x = a.normal();
      CHECK(x == b.normal());
    }
    CHECK(Rng(42).next_u64() != c.next_u64());
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  }

  TEST_CASE("rng moments") {
    Rng r(7);
    double s = 0, ss = 0, u = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double x = r.normal();
      s += x;
      ss += x * x;
      u += r.uniform();
    }
    CHECK(std::fabs(s / n) < 0.01);
    CHECK(std::fabs(ss / n - 1.0) < 0.02);
    CHECK(std::fabs(u / n - 0.5) < 0.01);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
      const auto k = r.below(5);
      CHECK(k < 5);
      seen.insert(k);
    }
    CHECK(seen.size() == 5);
  }

  TEST_CASE("tokenize") {
    const auto t = tokenize("a red circle");
    CHECK(t.length == 3);
    CHECK(t.width() == kDefaultMaxTextTokens);
    CHECK(t.ids[3] == kPadId);
    CHECK(t.is_pad(3));
    CHECK_FALSE(t.is_pad(2));
    CHECK(tokenize("a RED circle") == t);
    CHECK(tokenize("  a   red\tcircle ") == t);
    CHECK_THROWS_AS(tokenize(""), InvalidArgument);
    CHECK_THROWS_AS(tokenize("   "), InvalidArgument);
    CHECK(tokenize("a zebra").ids[1] == kUnkId);
    const auto long_prompt = tokenize("a a a a a a a a a a a");
    CHECK(long_prompt.width() == kDefaultMaxTextTokens);
    CHECK(long_prompt.length == kDefaultMaxTextTokens);
  }

  TEST_CASE("vocabulary ids are below its size") {
    const auto& v = Vocabulary::builtin();
    CHECK(v.size() <= 64);
    CHECK(v.word(kPadId) == "<pad>");
    for (const auto& w : v.words()) CHECK(v.id(w) < v.size());
  }
}
