#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "rfedit/attention.hpp"

namespace rfedit {

struct SiteKey {
  int step_index = 0;
  int layer_index = 0;
  BlockKind kind = BlockKind::double_block;

  auto operator<=>(const SiteKey&) const = default;
  std::string str() const;
};

/// Visual-segment source features recorded at one site during inversion.
struct CachedFeatures {
  double interval_start = 0.0;
  Features k;
  Features v;
  std::optional<Features> q;  ///< only for Q-substituting modes
};

/// Source attention features keyed by (step, layer, block kind). Written once
/// per key during inversion, then frozen; lookups never mutate it.
class KVCache {
 public:
  /// Throws if the cache is frozen or the key already exists.
  void insert(const SiteKey& key, CachedFeatures features);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t size() const { return entries_.size(); }
  bool contains(const SiteKey& key) const { return entries_.count(key) != 0; }
  /// Throws MissingCacheEntry naming the site.
  const CachedFeatures& at(const SiteKey& key) const;
  const std::map<SiteKey, CachedFeatures>& entries() const { return entries_; }

  /// Step index whose interval starts at `t` (exact match within 1e-12).
  std::optional<int> step_for_time(double t) const;

  /// SHA-256 over keys and payload bytes; used to assert immutability.
  std::string content_hash() const;

  /// Spill format: magic "RFEDITKV", u32 version, u64 record count, then per
  /// record a u32-length JSON header {step, layer, kind, interval_start,
  /// rows, cols, dtype, tensors} followed by float64 payloads in the order of
  /// `tensors`. Loaded caches are frozen.
  void save(const std::filesystem::path& path) const;
  static KVCache load(const std::filesystem::path& path);

 private:
  std::map<SiteKey, CachedFeatures> entries_;
  bool frozen_ = false;
};

}  // namespace rfedit
