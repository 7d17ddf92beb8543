#include "rfedit/flow.hpp"

#include <cmath>

#include "rfedit/error.hpp"

namespace rfedit {

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw InvalidArgument("TimeGrid needs at least two points");
  if (times_.front() != 0.0 || times_.back() != 1.0)
    throw InvalidArgument("TimeGrid must start at 0 and end at 1");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1]))
      throw InvalidArgument("TimeGrid must be strictly increasing");
}

TimeGrid make_schedule(int num_steps, Spacing spacing) {
  if (num_steps < 1) throw InvalidArgument("make_schedule: num_steps must be >= 1");
  std::vector<double> t(num_steps + 1);
  switch (spacing) {
    case Spacing::uniform:
      for (int i = 0; i <= num_steps; ++i) t[i] = static_cast<double>(i) / num_steps;
      break;
  }
  t.back() = 1.0;
  return TimeGrid(std::move(t));
}

namespace {

void require_step(double t_from, double t_to) {
  if (t_from == t_to) throw InvalidArgument("solver step with t_from == t_to");
}

}  // namespace

LatentGrid EulerSolver::step(const VelocityModel& model, const LatentGrid& state, double t_from,
                             double t_to, const TokenIds& condition, const EvalContext& ctx) const {
  require_step(t_from, t_to);
  EvalContext first = ctx;
  first.canonical = true;
  LatentGrid next = state;
  next.add_scaled(model.evaluate(state, t_from, condition, first), t_to - t_from);
  return next;
}

LatentGrid MidpointSolver::step(const VelocityModel& model, const LatentGrid& state,
                                double t_from, double t_to, const TokenIds& condition,
                                const EvalContext& ctx) const {
  require_step(t_from, t_to);
  const double h = t_to - t_from;
  EvalContext first = ctx;
  first.canonical = true;
  LatentGrid mid = state;
  mid.add_scaled(model.evaluate(state, t_from, condition, first), 0.5 * h);
  EvalContext second = ctx;
  second.canonical = false;
  LatentGrid next = state;
  next.add_scaled(model.evaluate(mid, t_from + 0.5 * h, condition, second), h);
  return next;
}

std::unique_ptr<SolverStep> make_solver(SolverKind kind) {
  switch (kind) {
    case SolverKind::euler:
      return std::make_unique<EulerSolver>();
    case SolverKind::midpoint:
      return std::make_unique<MidpointSolver>();
  }
  throw InvalidArgument("unknown solver");
}

SolverKind parse_solver(std::string_view name) {
  if (name == "euler") return SolverKind::euler;
  if (name == "midpoint") return SolverKind::midpoint;
  throw InvalidArgument("unknown solver '" + std::string(name) + "'");
}

const char* to_string(SolverKind kind) {
  return kind == SolverKind::euler ? "euler" : "midpoint";
}

LatentGrid interpolate(const LatentGrid& z0, const LatentGrid& z1, double t) {
  require_same_shape(z0, z1, "interpolate");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("interpolate: t outside [0, 1]");
  LatentGrid out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * z1[i] + (1.0 - t) * z0[i];
  return out;
}

double fm_loss(const VelocityModel& model, const LatentGrid& z0, const LatentGrid& z1, double t,
               const TokenIds& condition) {
  const LatentGrid zt = interpolate(z0, z1, t);
  const LatentGrid v = model.evaluate(zt, t, condition, EvalContext{});
  require_same_shape(zt, v, "fm_loss model output");
  if (!v.all_finite())
    throw NonFiniteError("fm_loss: non-finite model output at t = " + std::to_string(t), -1);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = (z1[i] - z0[i]) - v[i];
    acc += r * r;
  }
  return acc / static_cast<double>(v.size());
}

namespace {

void check_state(const LatentGrid& next, const LatentGrid& prev, int step, const char* phase) {
  if (next.shape() != prev.shape())
    throw ShapeError(std::string(phase) + ": solver changed the state shape at step " +
                     std::to_string(step));
  if (!next.all_finite())
    throw NonFiniteError(std::string(phase) + ": non-finite state at step " + std::to_string(step),
                         step);
}

void record_norm(const SolveOptions& opt, const LatentGrid& next, const LatentGrid& prev,
                 double dt) {
  if (!opt.velocity_norms) return;
  LatentGrid v = next - prev;
  v *= 1.0 / dt;
  opt.velocity_norms->push_back(v.rms());
}

}  // namespace

LatentGrid sample(const VelocityModel& model, const LatentGrid& z0, const TimeGrid& grid,
                  const TokenIds& condition, const SolverStep& solver,
                  const SolveOptions& options) {
  if (!z0.all_finite()) throw NonFiniteError("sample: non-finite initial state", -1);
  LatentGrid state = z0;
  for (int i = 0; i < grid.steps(); ++i) {
    EvalContext ctx{Phase::sampling, i, true, options.controller, grid[i]};
    LatentGrid next = solver.step(model, state, grid[i], grid[i + 1], condition, ctx);
    check_state(next, state, i, "sample");
    record_norm(options, next, state, grid[i + 1] - grid[i]);
    state = std::move(next);
  }
  return state;
}

LatentGrid invert(const VelocityModel& model, const LatentGrid& z1, const TimeGrid& grid,
                  const TokenIds& condition, const SolverStep& solver,
                  const SolveOptions& options) {
  if (!z1.all_finite()) throw NonFiniteError("invert: non-finite initial state", -1);
  LatentGrid state = z1;
  for (int i = grid.steps(); i >= 1; --i) {
    EvalContext ctx{Phase::inversion, i - 1, true, options.controller, grid[i - 1]};
    LatentGrid next = solver.step(model, state, grid[i], grid[i - 1], condition, ctx);
    check_state(next, state, i - 1, "invert");
    record_norm(options, next, state, grid[i - 1] - grid[i]);
    state = std::move(next);
  }
  return state;
}

}  // namespace rfedit
