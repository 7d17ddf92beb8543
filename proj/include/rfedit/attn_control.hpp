#pragma once

#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "rfedit/flow.hpp"
#include "rfedit/kv_cache.hpp"
#include "rfedit/mask.hpp"

namespace rfedit {

/// Which attention features are taken from (or mixed with) the source pass.
enum class AttentionMode { V, QV, QKV, KV };

AttentionMode parse_attention_mode(std::string_view s);
const char* to_string(AttentionMode m);
inline bool mode_uses_q(AttentionMode m) { return m == AttentionMode::QV || m == AttentionMode::QKV; }
inline bool mode_uses_k(AttentionMode m) { return m == AttentionMode::QKV || m == AttentionMode::KV; }

struct InjectionSchedule {
  std::optional<std::vector<int>> steps;  ///< nullopt: every sampling step
  bool double_blocks = true;
  bool single_blocks = true;
  AttentionMode mode = AttentionMode::KV;

  bool step_active(int step) const;
  bool kind_active(BlockKind kind) const;
  int active_steps(int num_steps) const;
  /// Throws InvalidArgument when a listed step is outside [0, num_steps).
  void validate(int num_steps) const;
  bool operator==(const InjectionSchedule&) const = default;
};

struct MixParams {
  double delta = 0.9;
  EditMask mask;
};

/// M * (delta * target + (1 - delta) * source) + (1 - M) * source, the mask
/// broadcast over every column of a token row.
Features mix_features(const Features& target, const Features& source, const EditMask& mask,
                      double delta);

struct MixedKV {
  Features k;
  Features v;
};

MixedKV mix_kv(const Features& k_target, const Features& v_target, const Features& k_source,
               const Features& v_source, const EditMask& mask, double delta);

struct InjectedFeatures {
  Features q;
  Features k;
  Features v;
};

/// Global (unmasked) substitution of cached source features selected by `mode`.
InjectedFeatures baseline_injection(const AttentionSite& site, const Features& q_target,
                                    const Features& k_target, const Features& v_target,
                                    const KVCache& cache, AttentionMode mode);

/// Cache step whose interval matches the site's interval; throws Error on a
/// timestep mismatch between the cache grid and the running grid.
int resolve_cache_step(const KVCache& cache, const AttentionSite& site);

/// Records visual K/V (and Q when the mode needs it) at canonical inversion
/// sites covered by the schedule.
class SourceRecorder final : public AttentionController {
 public:
  SourceRecorder(KVCache& cache, InjectionSchedule schedule)
      : cache_(cache), schedule_(std::move(schedule)) {}
  void on_attention(const AttentionSite& site, AttentionTensors& tensors,
                    const AttentionProbe& probe) override;

 private:
  KVCache& cache_;
  InjectionSchedule schedule_;
};

/// Copies the attention map at one canonical site.
class AttentionMapCapture final : public AttentionController {
 public:
  AttentionMapCapture(Phase phase, int step_index, BlockKind kind, int layer_index)
      : phase_(phase), step_(step_index), kind_(kind), layer_(layer_index) {}
  void on_attention(const AttentionSite& site, AttentionTensors& tensors,
                    const AttentionProbe& probe) override;
  const std::optional<AttentionProbs>& captured() const { return captured_; }

 private:
  Phase phase_;
  int step_;
  BlockKind kind_;
  int layer_;
  std::optional<AttentionProbs> captured_;
};

/// Masked source/target mixing at active canonical sampling sites; the mode
/// picks which of Q, K, V are mixed. Text features are never touched.
class KvMixController final : public AttentionController {
 public:
  KvMixController(const KVCache& cache, InjectionSchedule schedule, MixParams params);
  void on_attention(const AttentionSite& site, AttentionTensors& tensors,
                    const AttentionProbe& probe) override;

 private:
  const KVCache& cache_;
  InjectionSchedule schedule_;
  MixParams params_;
};

/// Global injection at active canonical sampling sites (mode V is the usual
/// value-injection baseline).
class BaselineInjectionController final : public AttentionController {
 public:
  BaselineInjectionController(const KVCache& cache, InjectionSchedule schedule)
      : cache_(cache), schedule_(std::move(schedule)) {}
  void on_attention(const AttentionSite& site, AttentionTensors& tensors,
                    const AttentionProbe& probe) override;

 private:
  const KVCache& cache_;
  InjectionSchedule schedule_;
};

std::unique_ptr<AttentionController> make_kvmix_controller(const KVCache& cache,
                                                           const InjectionSchedule& schedule,
                                                           MixParams params);

/// Throws MissingCacheEntry unless every (active step, block) the schedule
/// touches on `grid` is present and aligned.
void verify_cache_complete(const KVCache& cache, const InjectionSchedule& schedule,
                           const TimeGrid& grid, int num_double, int num_single);

}  // namespace rfedit
