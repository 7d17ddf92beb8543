#include <algorithm>
#include <doctest.h>

#include <cmath>
#include "json.hpp"

#include "rfedit/config_io.hpp"
#include "rfedit/error.hpp"
#include "rfedit/pipeline.hpp"
#include "support.hpp"

using namespace rfedit;

namespace {

const std::string kSource = "a red circle on the left";
const std::string kTarget = "a blue circle on the left";

struct Fixture {
  ModelConfig cfg = test::small_config();
  ToyMmdit model{cfg, 21};
  ModelLayout layout = layout_of(cfg);
  LatentGrid image;
  EditConfig config = test::test_edit_config();

  Fixture() {
    test::randomize(model, 22, 0.1);
    Rng rng(23);
    image = test::random_grid(cfg.image_shape(), rng, 0.5);
    for (double& v : image.values()) v = std::clamp(v, -1.0, 1.0);
    config.num_steps = 5;
  }
};

template <class Fn>
std::string error_text(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("defaults follow the published settings") {
    const EditConfig c;
    CHECK(c.num_steps == 15);
    CHECK(c.delta == 0.9);
    CHECK(c.beta == 0.25);
    CHECK(c.schedule.mode == AttentionMode::KV);
    CHECK(c.schedule.double_blocks);
    CHECK(c.schedule.single_blocks);
    CHECK_FALSE(c.schedule.steps.has_value());
    CHECK(c.solver == SolverKind::euler);
    CHECK(c.threshold.dilation_steps == 1);
    CHECK(c.mask_source == MaskSource::first_inversion_step);
  }

  TEST_CASE("identical prompts fail in the inversion phase") {
    Fixture fx;
    CHECK_THROWS_AS(edit(fx.model, fx.image, kSource, kSource, fx.config), NoEditTokens);
    const auto msg = error_text([&] { edit(fx.model, fx.image, kSource, kSource, fx.config); });
    CHECK(starts_with(msg, "inversion phase: "));
    CHECK(msg.find("no edit tokens found") != std::string::npos);
  }

  TEST_CASE("degenerate attention surfaces with override guidance") {
    Fixture fx;
    const int last = fx.cfg.num_double_blocks - 1;
    for (const auto& p : fx.model.params())
      if (p.name.starts_with("double." + std::to_string(last) + ".") &&
          p.name.find(".qkv.") != std::string::npos)
        p.var->value.setZero();
    const auto msg = error_text([&] { edit(fx.model, fx.image, kSource, kTarget, fx.config); });
    CHECK(starts_with(msg, "inversion phase: degenerate mask"));
    CHECK(msg.find("override mask") != std::string::npos);
    CHECK_THROWS_AS(edit(fx.model, fx.image, kSource, kTarget, fx.config), DegenerateMaskError);
    fx.config.override_mask = EditMask::ones(4, 4);
    CHECK_NOTHROW(edit(fx.model, fx.image, kSource, kTarget, fx.config));
  }

  TEST_CASE("sampling-phase errors are tagged") {
    FunctionVelocity model([](const LatentGrid& z, double t) {
      LatentGrid v(z.shape(), 0.0);
      if (t > 0.5) v[0] = std::nan("");
      return v;
    });
    struct PhaseModel final : VelocityModel {
      LatentGrid evaluate(const LatentGrid& z, double, const TokenIds&,
                          const EvalContext& ctx) const override {
        LatentGrid v(z.shape(), 0.0);
        if (ctx.phase == Phase::sampling) v[0] = std::nan("");
        return v;
      }
    } poisoned;
    ModelLayout layout{{3, 8, 8}, 4, 0, 0, kDefaultMaxTextTokens};
    EditConfig c = test::test_edit_config();
    c.num_steps = 3;
    c.override_mask = EditMask::ones(2, 2);
    const auto msg = error_text([&] { edit(poisoned, layout, LatentGrid({3, 8, 8}), kSource, kTarget, c); });
    CHECK(starts_with(msg, "sampling phase: "));
    CHECK_THROWS_AS(edit(poisoned, layout, LatentGrid({3, 8, 8}), kSource, kTarget, c), NonFiniteError);
    const auto inv = error_text([&] { edit(model, layout, LatentGrid({3, 8, 8}), kSource, kTarget, c); });
    CHECK(starts_with(inv, "inversion phase: "));
  }

  TEST_CASE("input validation") {
    Fixture fx;
    CHECK_THROWS_AS(edit(fx.model, LatentGrid({3, 8, 8}), kSource, kTarget, fx.config), ShapeError);
    fx.config.override_mask = EditMask::ones(2, 2);
    CHECK_THROWS_AS(edit(fx.model, fx.image, kSource, kTarget, fx.config), ShapeError);
    fx.config.override_mask.reset();
    fx.config.delta = 1.2;
    CHECK_THROWS_AS(edit(fx.model, fx.image, kSource, kTarget, fx.config), InvalidArgument);
  }

  TEST_CASE("cache holds one entry per active site and step") {
    Fixture fx;
    auto inv = run_inversion_phase(fx.model, fx.layout, fx.image, kSource, kTarget, fx.config);
    CHECK(inv.cache.frozen());
    CHECK(inv.cache.size() == static_cast<std::size_t>(fx.config.num_steps * 4));
    CHECK(inv.edit_tokens == std::vector<int>{1});
    CHECK(inv.velocity_norms.size() == static_cast<std::size_t>(fx.config.num_steps));
    fx.config.schedule.steps = std::vector<int>{0, 3};
    fx.config.schedule.single_blocks = false;
    inv = run_inversion_phase(fx.model, fx.layout, fx.image, kSource, kTarget, fx.config);
    CHECK(inv.cache.size() == 2u * 2u);
    fx.config.kvmix_on = false;
    fx.config.baseline_mode.reset();
    inv = run_inversion_phase(fx.model, fx.layout, fx.image, kSource, kTarget, fx.config);
    CHECK(inv.cache.size() == 0u);
  }

  TEST_CASE("full-size model at default settings covers every block at every step") {
    ModelConfig cfg;
    ToyMmdit model(cfg, 31);
    test::randomize(model, 32, 0.05);
    Rng rng(33);
    const auto image = test::random_grid(cfg.image_shape(), rng, 0.5);
    EditConfig c = test::test_edit_config();
    auto inv = run_inversion_phase(model, layout_of(cfg), image, kSource, kTarget, c);
    CHECK(inv.cache.size() == 15u * 8u);
    for (int step = 0; step < 15; ++step) {
      for (int l = 0; l < 4; ++l) {
        CHECK(inv.cache.contains({step, l, BlockKind::double_block}));
        CHECK(inv.cache.contains({step, l, BlockKind::single_block}));
      }
      CHECK(inv.cache.at({step, 0, BlockKind::double_block}).interval_start ==
            make_schedule(15)[step]);
    }
    CHECK(inv.mask.grid_h() == 8);
    CHECK(inv.mask.count() > 0);
  }

  TEST_CASE("constant velocity reconstructs exactly") {
    const LatentGrid c({3, 8, 8}, 0.3);
    FunctionVelocity model([&](const LatentGrid&, double) { return c; });
    ModelLayout layout{{3, 8, 8}, 4, 0, 0, kDefaultMaxTextTokens};
    Rng rng(41);
    LatentGrid image = test::random_grid({3, 8, 8}, rng, 0.4);
    EditConfig cfg = test::test_edit_config();
    for (int n : {1, 4, 15}) {
      cfg.num_steps = n;
      const auto out = reconstruct(model, layout, image, kSource, cfg);
      for (std::size_t i = 0; i < image.size(); ++i)
        CHECK(out[i] == doctest::Approx(std::clamp(image[i], -1.0, 1.0)).epsilon(1e-12));
    }
  }

  TEST_CASE("both modules off with target = source equals reconstruct") {
    Fixture fx;
    EditConfig off = fx.config;
    off.kvmix_on = false;
    off.latents_shift_on = false;
    off.baseline_mode = AttentionMode::KV;
    off.override_mask = EditMask::ones(4, 4);
    const auto lattice = edit(fx.model, fx.image, kSource, kSource, off);
    CHECK(lattice.edited == reconstruct(fx.model, fx.image, kSource, fx.config));
    CHECK(lattice.shifted == lattice.inverted);
  }

  TEST_CASE("with_reconstruction matches a separate reconstruct") {
    Fixture fx;
    fx.config.with_reconstruction = true;
    const auto r = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    REQUIRE(r.reconstructed.has_value());
    CHECK(*r.reconstructed == reconstruct(fx.model, fx.image, kSource, fx.config));
  }

  TEST_CASE("delta 1 with a full mask and no shift equals plain target sampling") {
    Fixture fx;
    fx.config.delta = 1.0;
    fx.config.beta = 0.0;
    fx.config.override_mask = EditMask::ones(4, 4);
    const auto r = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    const auto solver = make_solver(fx.config.solver);
    LatentGrid plain = sample(fx.model, r.inverted, make_schedule(fx.config.num_steps),
                              tokenize(kTarget), *solver);
    for (auto& x : plain.values()) x = std::clamp(x, -1.0, 1.0);
    CHECK(r.edited == plain);
    CHECK(r.shifted == r.inverted);
  }

  TEST_CASE("property: Latents-Shift only touches the mask") {
    Fixture fx;
    fx.config.num_steps = 2;
    Rng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::uint8_t> v(16);
      for (auto& x : v) x = rng.uniform() < 0.3;
      EditConfig on = fx.config;
      on.override_mask = EditMask(4, 4, v);
      on.noise_seed = rng.next_u64();
      on.beta = rng.uniform(0.05, 1.0);
      EditConfig off = on;
      off.latents_shift_on = false;
      const auto inv = run_inversion_phase(fx.model, fx.layout, fx.image, kSource, kTarget, on);
      LatentGrid s_on, s_off;
      run_sampling_phase(fx.model, fx.layout, inv.z_T, inv.cache, inv.mask, kTarget, on, &s_on);
      run_sampling_phase(fx.model, fx.layout, inv.z_T, inv.cache, inv.mask, kTarget, off, &s_off);
      CHECK(s_off == inv.z_T);
      const auto px = inv.mask.pixels(4);
      for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < px.size(); ++i) {
          const std::size_t k = c * px.size() + i;
          if (!px[i]) {
            CHECK(s_on[k] == s_off[k]);
          } else {
            CHECK(s_on[k] != s_off[k]);
          }
        }
    }
  }

  TEST_CASE("extracted mask drives both consumers") {
    Fixture fx;
    const auto r = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    CHECK_FALSE(r.mask.empty());
    const auto px = r.mask.pixels(4);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < px.size(); ++i)
        if (!px[i]) {
          CHECK(r.shifted[c * px.size() + i] == r.inverted[c * px.size() + i]);
        }
    // Replaying the sampling phase with that mask as an override reproduces the edit.
    EditConfig replay = fx.config;
    replay.override_mask = r.mask;
    CHECK(edit(fx.model, fx.image, kSource, kTarget, replay).edited == r.edited);
  }

  TEST_CASE("edits are deterministic") {
    Fixture fx;
    fx.config.noise_seed = 77;
    const auto a = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    const auto b = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    CHECK(a.edited == b.edited);
    CHECK(a.inverted == b.inverted);
    CHECK(a.shifted == b.shifted);
    CHECK(a.mask == b.mask);
    CHECK(a.cache.content_hash() == b.cache.content_hash());
    CHECK(a.sampling_velocity_norms == b.sampling_velocity_norms);
    for (std::size_t i = 0; i < a.edited.size(); ++i) {
      CHECK(std::isfinite(a.edited[i]));
      CHECK(std::abs(a.edited[i]) <= 1.0);
    }
  }

  TEST_CASE("sampling never mutates cache or mask") {
    Fixture fx;
    const auto inv = run_inversion_phase(fx.model, fx.layout, fx.image, kSource, kTarget, fx.config);
    const auto hash = inv.cache.content_hash();
    const EditMask mask = inv.mask;
    for (bool kv : {true, false}) {
      EditConfig c = fx.config;
      c.kvmix_on = kv;
      run_sampling_phase(fx.model, fx.layout, inv.z_T, inv.cache, inv.mask, kTarget, c);
    }
    CHECK(inv.cache.content_hash() == hash);
    CHECK(inv.mask == mask);
  }

  TEST_CASE("sampling rejects a cache from another grid") {
    Fixture fx;
    const auto inv = run_inversion_phase(fx.model, fx.layout, fx.image, kSource, kTarget, fx.config);
    EditConfig longer = fx.config;
    longer.num_steps = 7;
    CHECK_THROWS_AS(run_sampling_phase(fx.model, fx.layout, inv.z_T, inv.cache, inv.mask, kTarget, longer),
                    MissingCacheEntry);
  }

  TEST_CASE("config echo is exact") {
    Fixture fx;
    fx.config.noise_seed = 5;
    fx.config.schedule.steps = std::vector<int>{0, 1, 2};
    fx.config.edit_words = {"red"};
    const auto r = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    CHECK(r.config == fx.config);
    nlohmann::json a = fx.config, b = r.config;
    CHECK(a.dump() == b.dump());
  }

  TEST_CASE("alternative mask source runs a target pre-pass") {
    Fixture fx;
    fx.config.mask_source = MaskSource::last_sampling_step;
    const auto r = edit(fx.model, fx.image, kSource, kTarget, fx.config);
    CHECK_FALSE(r.mask.empty());
    CHECK(parse_mask_source("last_sampling_step") == MaskSource::last_sampling_step);
  }
}
