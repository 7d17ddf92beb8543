#include "rfedit/attn_control.hpp"

#include <algorithm>
#include <cmath>

#include "rfedit/error.hpp"

namespace rfedit {

AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "V" || s == "v") return AttentionMode::V;
  if (s == "QV" || s == "qv") return AttentionMode::QV;
  if (s == "QKV" || s == "qkv") return AttentionMode::QKV;
  if (s == "KV" || s == "kv") return AttentionMode::KV;
  throw InvalidArgument("unknown attention mode '" + std::string(s) + "'");
}

const char* to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::V: return "V";
    case AttentionMode::QV: return "QV";
    case AttentionMode::QKV: return "QKV";
    case AttentionMode::KV: return "KV";
  }
  return "?";
}

bool InjectionSchedule::step_active(int step) const {
  if (!steps) return true;
  return std::find(steps->begin(), steps->end(), step) != steps->end();
}

bool InjectionSchedule::kind_active(BlockKind kind) const {
  return kind == BlockKind::double_block ? double_blocks : single_blocks;
}

int InjectionSchedule::active_steps(int num_steps) const {
  int n = 0;
  for (int i = 0; i < num_steps; ++i) n += step_active(i);
  return n;
}

void InjectionSchedule::validate(int num_steps) const {
  if (!steps) return;
  for (int s : *steps)
    if (s < 0 || s >= num_steps)
      throw InvalidArgument("injection step " + std::to_string(s) + " outside [0, " +
                            std::to_string(num_steps) + ")");
}

Features mix_features(const Features& target, const Features& source, const EditMask& mask,
                      double delta) {
  if (target.rows() != source.rows() || target.cols() != source.cols())
    throw ShapeError("mix: source and target features differ in shape");
  if (mask.tokens() != target.rows())
    throw ShapeError("mix: mask has " + std::to_string(mask.tokens()) + " tokens, features have " +
                     std::to_string(target.rows()));
  if (!(delta >= 0.0 && delta <= 1.0)) throw InvalidArgument("mix: delta outside [0, 1]");
  Features out = source;
  for (Eigen::Index r = 0; r < target.rows(); ++r)
    if (mask.token(static_cast<int>(r))) {
      if (delta == 1.0)
        out.row(r) = target.row(r);
      else if (delta != 0.0)
        out.row(r) = delta * target.row(r) + (1.0 - delta) * source.row(r);
    }
  return out;
}

MixedKV mix_kv(const Features& k_target, const Features& v_target, const Features& k_source,
               const Features& v_source, const EditMask& mask, double delta) {
  if (k_target.rows() != v_target.rows() || k_target.cols() != v_target.cols())
    throw ShapeError("mix_kv: K and V differ in shape");
  return {mix_features(k_target, k_source, mask, delta),
          mix_features(v_target, v_source, mask, delta)};
}

int resolve_cache_step(const KVCache& cache, const AttentionSite& site) {
  const auto step = cache.step_for_time(site.interval_start);
  if (!step)
    throw Error("timestep mismatch: no cached inversion step for interval starting at t = " +
                std::to_string(site.interval_start) + " (" + site.str() + ")");
  return *step;
}

InjectedFeatures baseline_injection(const AttentionSite& site, const Features& q_target,
                                    const Features& k_target, const Features& v_target,
                                    const KVCache& cache, AttentionMode mode) {
  const SiteKey key{resolve_cache_step(cache, site), site.layer_index, site.kind};
  const CachedFeatures& src = cache.at(key);
  InjectedFeatures out{q_target, k_target, src.v};
  if (mode_uses_k(mode)) out.k = src.k;
  if (mode_uses_q(mode)) {
    if (!src.q) throw MissingCacheEntry("no cached source Q at " + key.str());
    out.q = *src.q;
  }
  if (out.k.rows() != k_target.rows() || out.k.cols() != k_target.cols() ||
      out.v.rows() != v_target.rows() || out.v.cols() != v_target.cols())
    throw ShapeError("cached features do not match the running model at " + key.str());
  return out;
}

void SourceRecorder::on_attention(const AttentionSite& site, AttentionTensors& tensors,
                                  const AttentionProbe&) {
  if (site.phase != Phase::inversion || !site.canonical) return;
  if (!schedule_.step_active(site.step_index) || !schedule_.kind_active(site.kind)) return;
  CachedFeatures f;
  f.interval_start = site.interval_start;
  f.k = tensors.k_visual;
  f.v = tensors.v_visual;
  if (mode_uses_q(schedule_.mode)) f.q = tensors.q_visual;
  cache_.insert({site.step_index, site.layer_index, site.kind}, std::move(f));
}

void AttentionMapCapture::on_attention(const AttentionSite& site, AttentionTensors&,
                                       const AttentionProbe& probe) {
  if (!site.canonical || site.phase != phase_ || site.step_index != step_ || site.kind != kind_ ||
      site.layer_index != layer_)
    return;
  captured_ = probe.probabilities();
}

KvMixController::KvMixController(const KVCache& cache, InjectionSchedule schedule,
                                 MixParams params)
    : cache_(cache), schedule_(std::move(schedule)), params_(std::move(params)) {
  if (!(params_.delta >= 0.0 && params_.delta <= 1.0))
    throw InvalidArgument("KV-mix: delta outside [0, 1]");
}

void KvMixController::on_attention(const AttentionSite& site, AttentionTensors& tensors,
                                   const AttentionProbe&) {
  if (site.phase != Phase::sampling || !site.canonical) return;
  if (!schedule_.step_active(site.step_index) || !schedule_.kind_active(site.kind)) return;
  const SiteKey key{resolve_cache_step(cache_, site), site.layer_index, site.kind};
  const CachedFeatures& src = cache_.at(key);
  if (params_.mask.tokens() != site.visual_tokens)
    throw ShapeError("KV-mix: mask token count does not match visual tokens at " + site.str());
  tensors.v_visual = mix_features(tensors.v_visual, src.v, params_.mask, params_.delta);
  if (mode_uses_k(schedule_.mode))
    tensors.k_visual = mix_features(tensors.k_visual, src.k, params_.mask, params_.delta);
  if (mode_uses_q(schedule_.mode)) {
    if (!src.q) throw MissingCacheEntry("no cached source Q at " + key.str());
    tensors.q_visual = mix_features(tensors.q_visual, *src.q, params_.mask, params_.delta);
  }
}

void BaselineInjectionController::on_attention(const AttentionSite& site,
                                               AttentionTensors& tensors,
                                               const AttentionProbe&) {
  if (site.phase != Phase::sampling || !site.canonical) return;
  if (!schedule_.step_active(site.step_index) || !schedule_.kind_active(site.kind)) return;
  auto out = baseline_injection(site, tensors.q_visual, tensors.k_visual, tensors.v_visual, cache_,
                                schedule_.mode);
  tensors.q_visual = std::move(out.q);
  tensors.k_visual = std::move(out.k);
  tensors.v_visual = std::move(out.v);
}

std::unique_ptr<AttentionController> make_kvmix_controller(const KVCache& cache,
                                                           const InjectionSchedule& schedule,
                                                           MixParams params) {
  return std::make_unique<KvMixController>(cache, schedule, std::move(params));
}

void verify_cache_complete(const KVCache& cache, const InjectionSchedule& schedule,
                           const TimeGrid& grid, int num_double, int num_single) {
  schedule.validate(grid.steps());
  const bool any_block = (schedule.double_blocks && num_double > 0) ||
                         (schedule.single_blocks && num_single > 0);
  if (!any_block) return;
  for (int i = 0; i < grid.steps(); ++i) {
    if (!schedule.step_active(i)) continue;
    const auto step = cache.step_for_time(grid[i]);
    if (!step)
      throw MissingCacheEntry("timestep mismatch: cache has no interval starting at t = " +
                              std::to_string(grid[i]));
    for (auto [kind, count] : {std::pair{BlockKind::double_block, num_double},
                               std::pair{BlockKind::single_block, num_single}}) {
      if (!schedule.kind_active(kind)) continue;
      for (int l = 0; l < count; ++l) {
        const auto& f = cache.at({*step, l, kind});
        if (mode_uses_q(schedule.mode) && !f.q)
          throw MissingCacheEntry("no cached source Q at " + SiteKey{*step, l, kind}.str());
      }
    }
  }
}

}  // namespace rfedit
