#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rfedit/error.hpp"
#include "rfedit/mask.hpp"
#include "support.hpp"

using namespace rfedit;

namespace {

ThresholdConfig no_dilation() {
  ThresholdConfig c;
  c.dilation_steps = 0;
  return c;
}

EditMask single_cell(int h, int w, int y, int x) {
  auto m = EditMask::zeros(h, w);
  std::vector<std::uint8_t> v = m.values();
  v[static_cast<std::size_t>(y) * w + x] = 1;
  return EditMask(h, w, v);
}

// Row-stochastic joint attention with `hot` visual tokens boosted in the rows
// of the edit tokens.
AttentionProbs planted_map(int heads, int text, int gh, int gw, const std::vector<int>& edit,
                           const std::vector<int>& hot, double boost, Rng& rng) {
  const int tokens = text + gh * gw;
  AttentionProbs p(heads, tokens);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < tokens; ++i) {
      double sum = 0;
      for (int j = 0; j < tokens; ++j) {
        double v = 1.0 + 0.2 * rng.uniform();
        const bool is_edit = std::find(edit.begin(), edit.end(), i) != edit.end();
        if (is_edit && j >= text && std::find(hot.begin(), hot.end(), j - text) != hot.end())
          v *= boost;
        p.at(h, i, j) = v;
        sum += v;
      }
      for (int j = 0; j < tokens; ++j) p.at(h, i, j) /= sum;
    }
  return p;
}

bool contains(const EditMask& outer, const EditMask& inner) {
  for (int i = 0; i < inner.tokens(); ++i)
    if (inner.token(i) && !outer.token(i)) return false;
  return true;
}

}  // namespace

TEST_SUITE("mask") {
  TEST_CASE("edit token selection") {
    CHECK(select_edit_tokens(tokenize("a red circle"), tokenize("a blue circle")) ==
          std::vector<int>{1});
    CHECK_THROWS_AS(select_edit_tokens(tokenize("a red circle"), tokenize("a red circle")),
                    NoEditTokens);
    CHECK(select_edit_tokens(tokenize("a red circle"), tokenize("a red circle"), {"circle"}) ==
          std::vector<int>{2});
    CHECK(select_edit_tokens(tokenize("a red circle on the left"),
                             tokenize("a blue square on the left")) == std::vector<int>{1, 2});
    // Inserted words shift the tail; every source position that changed counts.
    CHECK(select_edit_tokens(tokenize("a circle"), tokenize("a red circle")) == std::vector<int>{1});
    // Pad positions of the source are never edit tokens.
    CHECK_THROWS_AS(select_edit_tokens(tokenize("a circle"), tokenize("a circle red")), NoEditTokens);
    // Unknown source words are skipped.
    CHECK(select_edit_tokens(tokenize("a zzz circle"), tokenize("a red square")) ==
          std::vector<int>{2});
    CHECK_THROWS_AS(select_edit_tokens(tokenize("a red circle"), tokenize("a red circle"), {"square"}),
                    NoEditTokens);
  }

  TEST_CASE("hand-computed threshold example") {
    const std::vector<double> r{0.9, 0.05, 0.03, 0.02};
    const double mean = 0.25;
    const double sd = std::sqrt((0.65 * 0.65 + 0.2 * 0.2 + 0.22 * 0.22 + 0.23 * 0.23) / 4.0);
    CHECK(mean + sd == doctest::Approx(0.624).epsilon(0.002));
    const auto m = threshold_relevance(r, 2, 2, no_dilation());
    CHECK(m.values() == std::vector<std::uint8_t>{1, 0, 0, 0});
    // The default one-step dilation covers the whole 2x2 grid.
    CHECK(threshold_relevance(r, 2, 2, ThresholdConfig{}).count() == 4);
  }

  TEST_CASE("degenerate relevance") {
    CHECK_THROWS_AS(threshold_relevance(std::vector<double>(16, 0.1), 4, 4, ThresholdConfig{}),
                    DegenerateMaskError);
    CHECK_THROWS_AS(threshold_relevance(std::vector<double>(16, 0.0), 4, 4, ThresholdConfig{}),
                    DegenerateMaskError);
    CHECK_THROWS_AS(threshold_relevance(std::vector<double>(15, 0.1), 4, 4, ThresholdConfig{}),
                    ShapeError);
    try {
      threshold_relevance(std::vector<double>(16, 1.0 / 16), 4, 4, ThresholdConfig{});
    } catch (const DegenerateMaskError& e) {
      CHECK(std::string(e.what()).find("degenerate mask") != std::string::npos);
      CHECK(std::string(e.what()).find("override mask") != std::string::npos);
    }
    // A uniform attention map gives uniform relevance.
    AttentionProbs p(2, 3 + 9);
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) p.at(h, i, j) = 1.0 / 12;
    CHECK_THROWS_AS(extract_mask(p, {1}, 3, 3, 3, ThresholdConfig{}), DegenerateMaskError);
    CHECK_THROWS_AS(extract_mask(p, {}, 3, 3, 3, ThresholdConfig{}), NoEditTokens);
    CHECK_THROWS_AS(extract_mask(p, {5}, 3, 3, 3, ThresholdConfig{}), InvalidArgument);
  }

  TEST_CASE("dilation examples") {
    const auto hot = single_cell(5, 5, 2, 2);
    const auto d = dilate(hot, 1);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) CHECK(d.at(y, x) == (std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1));
    CHECK(dilate(hot, 0) == hot);
    CHECK(dilate(EditMask::ones(3, 4), 2) == EditMask::ones(3, 4));
    const auto corner = dilate(single_cell(4, 4, 0, 0), 1);
    CHECK(corner.values() ==
          std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    CHECK(dilate(hot, 2) == EditMask::ones(5, 5));
    CHECK(dilate(EditMask::zeros(3, 3), 3) == EditMask::zeros(3, 3));
  }

  TEST_CASE("property: dilation is monotone and extensive") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      const int h = 1 + static_cast<int>(rng.below(7)), w = 1 + static_cast<int>(rng.below(7));
      std::vector<std::uint8_t> a(static_cast<std::size_t>(h) * w), b(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform() < 0.2;
        b[i] = a[i] || rng.uniform() < 0.2;  // b contains a
      }
      const EditMask ma(h, w, a), mb(h, w, b);
      const int steps = static_cast<int>(rng.below(3));
      const auto da = dilate(ma, steps), db = dilate(mb, steps);
      CHECK(contains(da, ma));
      CHECK(contains(db, da));
      CHECK(da.count() >= ma.count());
      CHECK(dilate(da, 1) == dilate(ma, steps + 1));
      // Oracle: a cell is set iff some set cell lies within Chebyshev distance `steps`.
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool near = false;
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx)
              near = near || (ma.at(yy, xx) && std::max(std::abs(yy - y), std::abs(xx - x)) <= steps);
          CHECK(da.at(y, x) == near);
        }
    }
  }

  TEST_CASE("property: planted hot regions are found and contain the argmax") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      const int gh = 3 + static_cast<int>(rng.below(4)), gw = 3 + static_cast<int>(rng.below(4));
      const int text = 4, heads = 1 + static_cast<int>(rng.below(3));
      std::vector<int> hot;
      const int n_hot = 1 + static_cast<int>(rng.below(3));
      while (static_cast<int>(hot.size()) < n_hot) {
        const int c = static_cast<int>(rng.below(gh * gw));
        if (std::find(hot.begin(), hot.end(), c) == hot.end()) hot.push_back(c);
      }
      const std::vector<int> edit{1 + static_cast<int>(rng.below(3))};
      const auto p = planted_map(heads, text, gh, gw, edit, hot, 20.0, rng);
      const auto r = edit_relevance(p, edit, text, ThresholdConfig{});
      const int argmax = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
      const auto raw = extract_mask(p, edit, text, gh, gw, no_dilation());
      const auto m = extract_mask(p, edit, text, gh, gw, ThresholdConfig{});
      CHECK(m.token(argmax));
      CHECK(raw.token(argmax));
      CHECK(m == dilate(raw, 1));
      for (int c : hot) CHECK(raw.token(c));
      CHECK(raw.count() == n_hot);
    }
  }

  TEST_CASE("relevance reductions and direction") {
    AttentionProbs p(2, 2 + 4);
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) p.at(h, i, j) = 0.01 * (h + 1) * (i + 1) + 0.001 * j;
    ThresholdConfig cfg;
    auto r = edit_relevance(p, {0, 1}, 2, cfg);
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (int h = 0; h < 2; ++h)
        for (int e : {0, 1}) s += p.at(h, e, 2 + j);
      CHECK(r[j] == doctest::Approx(s / 4));
    }
    cfg.head_reduction = cfg.token_reduction = Reduction::max;
    r = edit_relevance(p, {0, 1}, 2, cfg);
    for (int j = 0; j < 4; ++j) CHECK(r[j] == doctest::Approx(p.at(1, 1, 2 + j)));
    cfg.direction = AttentionDirection::visual_to_text;
    r = edit_relevance(p, {0}, 2, cfg);
    for (int j = 0; j < 4; ++j) CHECK(r[j] == doctest::Approx(p.at(1, 2 + j, 0)));
    CHECK(parse_direction(to_string(AttentionDirection::visual_to_text)) ==
          AttentionDirection::visual_to_text);
    CHECK(parse_reduction("max") == Reduction::max);
    CHECK_THROWS_AS(parse_reduction("median"), InvalidArgument);
  }

  TEST_CASE("edit mask views") {
    Rng rng(13);
    std::vector<std::uint8_t> v(12);
    for (auto& x : v) x = rng.uniform() < 0.5;
    const EditMask m(3, 4, v);
    const auto px = m.pixels(4);
    CHECK(px.size() == 12u * 16u);
    CHECK(EditMask::from_pixels(px, 12, 16, 4) == m);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 16; ++x) CHECK(px[static_cast<std::size_t>(y) * 16 + x] == m.at(y / 4, x / 4));
    CHECK_THROWS_AS(EditMask(2, 2, {0, 1, 2, 0}), InvalidArgument);
    CHECK_THROWS_AS(EditMask(2, 2, {0, 1, 0}), ShapeError);
    CHECK_THROWS_AS(EditMask::from_pixels(px, 12, 16, 5), ShapeError);
    ThresholdConfig bad;
    bad.dilation_steps = -1;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  }
}
