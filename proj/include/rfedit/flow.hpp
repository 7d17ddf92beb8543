#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "rfedit/attention.hpp"
#include "rfedit/latent_grid.hpp"
#include "rfedit/vocab.hpp"

namespace rfedit {

/// Discretization 0 = t_0 < t_1 < ... < t_N = 1 shared by sampling and inversion.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> times);

  std::size_t size() const { return times_.size(); }
  int steps() const { return static_cast<int>(times_.size()) - 1; }
  double operator[](std::size_t i) const { return times_[i]; }
  const std::vector<double>& times() const { return times_; }
  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> times_;
};

enum class Spacing { uniform };

/// {0, 1/N, ..., 1}.
TimeGrid make_schedule(int num_steps, Spacing spacing = Spacing::uniform);

/// v_theta(z, t | condition). Implementations must be deterministic for fixed
/// inputs, parameters and controller state.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  virtual LatentGrid evaluate(const LatentGrid& state, double t, const TokenIds& condition,
                              const EvalContext& ctx) const = 0;
};

/// Wraps a plain function of (z, t); ignores the condition and controller.
class FunctionVelocity final : public VelocityModel {
 public:
  using Fn = std::function<LatentGrid(const LatentGrid&, double)>;
  explicit FunctionVelocity(Fn fn) : fn_(std::move(fn)) {}
  LatentGrid evaluate(const LatentGrid& state, double t, const TokenIds&,
                      const EvalContext&) const override {
    return fn_(state, t);
  }

 private:
  Fn fn_;
};

/// One solver interval from t_from to t_to. Works in both directions. The
/// first velocity evaluation of a step is the canonical one: it is the only
/// evaluation reported to controllers as `canonical`.
class SolverStep {
 public:
  virtual ~SolverStep() = default;
  virtual LatentGrid step(const VelocityModel& model, const LatentGrid& state, double t_from,
                          double t_to, const TokenIds& condition, const EvalContext& ctx) const = 0;
  virtual std::string name() const = 0;
  virtual int evaluations_per_step() const = 0;
};

class EulerSolver final : public SolverStep {
 public:
  LatentGrid step(const VelocityModel& model, const LatentGrid& state, double t_from, double t_to,
                  const TokenIds& condition, const EvalContext& ctx) const override;
  std::string name() const override { return "euler"; }
  int evaluations_per_step() const override { return 1; }
};

/// Explicit midpoint (second order).
class MidpointSolver final : public SolverStep {
 public:
  LatentGrid step(const VelocityModel& model, const LatentGrid& state, double t_from, double t_to,
                  const TokenIds& condition, const EvalContext& ctx) const override;
  std::string name() const override { return "midpoint"; }
  int evaluations_per_step() const override { return 2; }
};

enum class SolverKind { euler, midpoint };

std::unique_ptr<SolverStep> make_solver(SolverKind kind);
SolverKind parse_solver(std::string_view name);
const char* to_string(SolverKind kind);

struct SolveOptions {
  AttentionController* controller = nullptr;
  /// When set, receives the RMS of the effective velocity of each step.
  std::vector<double>* velocity_norms = nullptr;
};

/// t * z1 + (1 - t) * z0.
LatentGrid interpolate(const LatentGrid& z0, const LatentGrid& z1, double t);

/// Mean over elements of ((z1 - z0) - v(interpolate(z0, z1, t), t))^2.
double fm_loss(const VelocityModel& model, const LatentGrid& z0, const LatentGrid& z1, double t,
               const TokenIds& condition);

/// Integrates from t_0 = 0 to t_N = 1; step i covers [t_i, t_{i+1}].
LatentGrid sample(const VelocityModel& model, const LatentGrid& z0, const TimeGrid& grid,
                  const TokenIds& condition, const SolverStep& solver,
                  const SolveOptions& options = {});

/// Integrates from t_N = 1 back to t_0 = 0. The step over [t_i, t_{i+1}] is
/// reported to controllers with step_index i, the index the sampler uses for
/// the same interval.
LatentGrid invert(const VelocityModel& model, const LatentGrid& z1, const TimeGrid& grid,
                  const TokenIds& condition, const SolverStep& solver,
                  const SolveOptions& options = {});

}  // namespace rfedit
