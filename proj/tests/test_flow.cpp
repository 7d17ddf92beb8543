#include <doctest.h>

#include <cmath>

#include "rfedit/error.hpp"
#include "rfedit/flow.hpp"
#include "support.hpp"

using namespace rfedit;
using rfedit::test::convergence_order;
using rfedit::test::scalar_grid;

namespace {

const TokenIds kNoText = tokenize("a");

FunctionVelocity identity_field() {
  return FunctionVelocity([](const LatentGrid& z, double) { return z; });
}

FunctionVelocity constant_field(double c) {
  return FunctionVelocity([c](const LatentGrid& z, double) { return LatentGrid(z.shape(), c); });
}

// Records (phase, step, t, interval_start, canonical) of every evaluation.
class EvalLog final : public VelocityModel {
 public:
  struct Entry {
    Phase phase;
    int step;
    double t, start;
    bool canonical;
  };
  LatentGrid evaluate(const LatentGrid& z, double t, const TokenIds&,
                      const EvalContext& ctx) const override {
    log.push_back({ctx.phase, ctx.step_index, t, ctx.interval_start, ctx.canonical});
    return z;
  }
  mutable std::vector<Entry> log;
};

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("interpolate") {
    Rng rng(1);
    const auto z0 = test::random_grid({3, 4, 4}, rng), z1 = test::random_grid({3, 4, 4}, rng);
    CHECK(interpolate(z0, z1, 0.0) == z0);
    CHECK(interpolate(z0, z1, 1.0) == z1);
    const auto mid = interpolate(LatentGrid({1, 2, 2}, 0.0), LatentGrid({1, 2, 2}, 4.0), 0.25);
    CHECK(mid == LatentGrid({1, 2, 2}, 1.0));
    CHECK_THROWS_AS(interpolate(z0, LatentGrid({1, 4, 4}), 0.5), ShapeError);
    CHECK_THROWS_AS(interpolate(z0, z1, 1.5), InvalidArgument);
  }

  TEST_CASE("fm_loss examples") {
    const auto z0 = scalar_grid(0.0), z1 = scalar_grid(2.0);
    FunctionVelocity oracle([&](const LatentGrid&, double) { return z1 - z0; });
    CHECK(fm_loss(oracle, z0, z1, 0.3, kNoText) == 0.0);
    CHECK(fm_loss(constant_field(0.0), z0, z1, 0.5, kNoText) == 4.0);
    CHECK(fm_loss(constant_field(1.0), z0, z1, 0.5, kNoText) == 1.0);
  }

  TEST_CASE("fm_loss is non-negative and zero only for the exact target") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const auto z0 = test::random_grid({2, 3, 3}, rng), z1 = test::random_grid({2, 3, 3}, rng);
      const double c = rng.normal();
      CHECK(fm_loss(constant_field(c), z0, z1, rng.uniform(), kNoText) > 0.0);
    }
  }

  TEST_CASE("fm_loss names the timestep of a non-finite output") {
    FunctionVelocity bad([](const LatentGrid& z, double) {
      return LatentGrid(z.shape(), std::nan(""));
    });
    try {
      fm_loss(bad, scalar_grid(0), scalar_grid(1), 0.25, kNoText);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(std::string(e.what()).find("t = 0.25") != std::string::npos);
    }
  }

  TEST_CASE("make_schedule") {
    CHECK(make_schedule(1).times() == std::vector<double>{0.0, 1.0});
    CHECK(make_schedule(4).times() == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    const auto g = make_schedule(15);
    CHECK(g.size() == 16);
    CHECK(g[0] == 0.0);
    CHECK(g[15] == 1.0);
    CHECK_THROWS_AS(make_schedule(0), InvalidArgument);
    CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(TimeGrid({0.1, 1.0}), InvalidArgument);
  }

  TEST_CASE("Euler sampling examples") {
    EulerSolver euler;
    const auto field = identity_field();
    CHECK(sample(field, scalar_grid(1.0), make_schedule(1), kNoText, euler)[0] == 2.0);
    CHECK(sample(field, scalar_grid(1.0), TimeGrid({0, 0.5, 1}), kNoText, euler)[0] == 2.25);
    CHECK(sample(constant_field(0.7), scalar_grid(0.0), TimeGrid({0, 0.1, 0.35, 1}), kNoText,
                 euler)[0] == doctest::Approx(0.7).epsilon(1e-15));
  }

  TEST_CASE("inversion steps subtract the step length times the velocity") {
    EulerSolver euler;
    CHECK(invert(identity_field(), scalar_grid(2.0), make_schedule(1), kNoText, euler)[0] == 0.0);
  }

  TEST_CASE("state-independent fields round-trip") {
    EulerSolver euler;
    MidpointSolver mid;
    Rng rng(5);
    FunctionVelocity timevarying([](const LatentGrid& z, double t) {
      LatentGrid v(z.shape());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(3 * t + i);
      return v;
    });
    for (const SolverStep* s : {static_cast<const SolverStep*>(&euler),
                                static_cast<const SolverStep*>(&mid)}) {
      for (int n : {1, 3, 15, 64}) {
        const auto z0 = test::random_grid({3, 4, 4}, rng);
        const auto grid = make_schedule(n);
        const auto c = invert(constant_field(1.3), sample(constant_field(1.3), z0, grid, kNoText, *s),
                              grid, kNoText, *s);
        for (std::size_t i = 0; i < z0.size(); ++i) CHECK(std::fabs(c[i] - z0[i]) <= 1e-6);
      }
    }
    // Time-varying but state-independent: Euler reads v at t_i forward and at
    // t_{i+1} backward, so only the constant field is exact under Euler.
    const auto grid = make_schedule(10);
    const auto z0 = test::random_grid({1, 2, 2}, rng);
    const auto back = invert(timevarying, sample(timevarying, z0, grid, kNoText, euler), grid,
                             kNoText, euler);
    CHECK((back - z0).rms() > 1e-6);
  }

  TEST_CASE("Euler has order one in both directions") {
    EulerSolver euler;
    const auto field = identity_field();
    const std::vector<int> ns = {4, 8, 16, 32, 64};
    std::vector<double> fwd, trip;
    for (int n : ns) {
      const auto g = make_schedule(n);
      const double z1 = sample(field, scalar_grid(1.0), g, kNoText, euler)[0];
      fwd.push_back(std::fabs(z1 - std::exp(1.0)));
      trip.push_back(std::fabs(invert(field, scalar_grid(z1), g, kNoText, euler)[0] - 1.0));
    }
    CHECK(std::fabs(convergence_order(ns, fwd) - 1.0) <= 0.3);
    CHECK(std::fabs(convergence_order(ns, trip) - 1.0) <= 0.3);
    // The coarser grid set yields the same order.
    const std::vector<int> coarse = {2, 4, 8, 16, 32};
    std::vector<double> trip2;
    for (int n : coarse) {
      const auto g = make_schedule(n);
      const double z1 = sample(field, scalar_grid(1.0), g, kNoText, euler)[0];
      trip2.push_back(std::fabs(invert(field, scalar_grid(z1), g, kNoText, euler)[0] - 1.0));
    }
    CHECK(std::fabs(convergence_order(coarse, trip2) - 1.0) <= 0.3);
  }

  TEST_CASE("midpoint has order two forward and at least two on the round trip") {
    MidpointSolver mid;
    const auto field = identity_field();
    const std::vector<int> ns = {4, 8, 16, 32, 64};
    std::vector<double> fwd, trip;
    for (int n : ns) {
      const auto g = make_schedule(n);
      const double z1 = sample(field, scalar_grid(1.0), g, kNoText, mid)[0];
      fwd.push_back(std::fabs(z1 - std::exp(1.0)));
      trip.push_back(std::fabs(invert(field, scalar_grid(z1), g, kNoText, mid)[0] - 1.0));
    }
    CHECK(std::fabs(convergence_order(ns, fwd) - 2.0) <= 0.4);
    // For v = z the two midpoint step factors multiply to 1 + h^4/4.
    CHECK(convergence_order(ns, trip) >= 2.0);
  }

  TEST_CASE("solver steps run in both directions and reject empty steps") {
    EulerSolver euler;
    const auto f = identity_field();
    const auto up = euler.step(f, scalar_grid(1), 0.0, 0.5, kNoText, {});
    const auto down = euler.step(f, scalar_grid(1), 0.5, 0.0, kNoText, {});
    CHECK(up[0] == 1.5);
    CHECK(down[0] == 0.5);
    CHECK_THROWS_AS(euler.step(f, scalar_grid(1), 0.3, 0.3, kNoText, {}), InvalidArgument);
  }

  TEST_CASE("evaluation context reports phase, step, interval start and canonical flag") {
    EvalLog model;
    MidpointSolver mid;
    const auto g = make_schedule(3);
    sample(model, scalar_grid(1), g, kNoText, mid);
    REQUIRE(model.log.size() == 6);
    for (int i = 0; i < 3; ++i) {
      CHECK(model.log[2 * i].phase == Phase::sampling);
      CHECK(model.log[2 * i].step == i);
      CHECK(model.log[2 * i].canonical);
      CHECK_FALSE(model.log[2 * i + 1].canonical);
      CHECK(model.log[2 * i].start == g[i]);
      CHECK(model.log[2 * i].t == g[i]);
    }
    model.log.clear();
    invert(model, scalar_grid(1), g, kNoText, mid);
    REQUIRE(model.log.size() == 6);
    // Inversion walks the intervals backwards but reports sampling numbering.
    for (int k = 0; k < 3; ++k) {
      const int step = 2 - k;
      CHECK(model.log[2 * k].phase == Phase::inversion);
      CHECK(model.log[2 * k].step == step);
      CHECK(model.log[2 * k].start == g[step]);
      CHECK(model.log[2 * k].t == g[step + 1]);
      CHECK(model.log[2 * k].canonical);
      CHECK_FALSE(model.log[2 * k + 1].canonical);
    }
  }

  TEST_CASE("non-finite states carry the step index") {
    FunctionVelocity blowup([](const LatentGrid& z, double t) {
      return LatentGrid(z.shape(), t >= 0.5 ? INFINITY : 1.0);
    });
    EulerSolver euler;
    try {
      sample(blowup, scalar_grid(0), make_schedule(4), kNoText, euler);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.step() == 2);
    }
    CHECK_THROWS_AS(sample(blowup, scalar_grid(NAN), make_schedule(4), kNoText, euler),
                    NonFiniteError);
  }

  TEST_CASE("velocity norms are recorded per step") {
    EulerSolver euler;
    std::vector<double> norms;
    sample(constant_field(2.0), LatentGrid({1, 2, 2}), make_schedule(5), kNoText, euler,
           SolveOptions{nullptr, &norms});
    REQUIRE(norms.size() == 5);
    for (double n : norms) CHECK(n == doctest::Approx(2.0));
  }

  TEST_CASE("solver registry") {
    CHECK(make_solver(parse_solver("euler"))->evaluations_per_step() == 1);
    CHECK(make_solver(parse_solver("midpoint"))->evaluations_per_step() == 2);
    CHECK_THROWS_AS(parse_solver("rk4"), InvalidArgument);
  }
}
