#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "rfedit/checkpoint.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/mmdit.hpp"
#include "rfedit/pipeline.hpp"
#include "rfedit/rng.hpp"

namespace rfedit::test {

inline LatentGrid random_grid(GridShape shape, Rng& rng, double scale = 1.0) {
  LatentGrid g(shape);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * rng.normal();
  return g;
}

inline LatentGrid scalar_grid(double v) { return LatentGrid::scalar(v); }

/// Least-squares slope of log(err) against log(N); positive for decaying error.
inline double convergence_order(const std::vector<int>& ns, const std::vector<double>& errs) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(ns.size());
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double x = std::log(static_cast<double>(ns[i])), y = std::log(errs[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// 8x8 images, 2x2 patch grid, two blocks of each kind.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.hidden_dim = 32;
  c.num_heads = 2;
  c.num_double_blocks = 2;
  c.num_single_blocks = 2;
  c.time_embed_dim = 16;
  return c;
}

/// 16x16 images on a 4x4 patch grid; big enough for non-trivial masks.
inline ModelConfig small_config() {
  ModelConfig c = tiny_config();
  c.image_size = 16;
  return c;
}

/// Overwrites every parameter (including the zero-initialized modulation and
/// output layers) with N(0, scale^2) draws.
template <class T>
void randomize(Mmdit<T>& model, std::uint64_t seed, double scale = 0.2) {
  Rng rng(seed);
  for (const auto& p : model.params())
    for (Eigen::Index i = 0; i < p.var->value.size(); ++i)
      p.var->value.data()[i] = static_cast<T>(scale * rng.normal());
}

inline SolverKind solver_under_test() {
  const char* s = std::getenv("RFEDIT_TEST_SOLVER");
  return s ? parse_solver(s) : SolverKind::euler;
}

inline EditConfig test_edit_config() {
  EditConfig c;
  c.solver = solver_under_test();
  return c;
}

inline std::filesystem::path assets_dir() { return RFEDIT_ASSETS_DIR; }
inline std::filesystem::path shipped_checkpoint() { return assets_dir() / "toy_mmdit.ckpt"; }

/// Loaded once per process.
inline const LoadedCheckpoint& shipped() {
  static const LoadedCheckpoint ckpt = load_checkpoint(shipped_checkpoint());
  return ckpt;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rfedit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Saves a randomized small model as a checkpoint in `dir` and returns its path.
inline std::filesystem::path write_tiny_checkpoint(const std::filesystem::path& dir,
                                                   std::uint64_t seed = 3) {
  ToyMmdit model(small_config(), seed);
  randomize(model, seed + 1, 0.1);
  TrainingManifest m;
  m.seed = seed;
  const auto path = dir / "tiny.ckpt";
  save_checkpoint(path, model, m);
  return path;
}

}  // namespace rfedit::test
