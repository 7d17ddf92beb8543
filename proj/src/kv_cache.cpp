#include "rfedit/kv_cache.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "rfedit/checkpoint.hpp"
#include "rfedit/error.hpp"

namespace rfedit {

namespace {
constexpr char kMagic[8] = {'R', 'F', 'E', 'D', 'I', 'T', 'K', 'V'};
constexpr std::uint32_t kVersion = 1;

template <class V>
void put(std::string& out, const V& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_matrix(std::string& out, const Features& m) {
  out.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
}
}  // namespace

std::string SiteKey::str() const {
  return "step " + std::to_string(step_index) + " " + to_string(kind) + " block " +
         std::to_string(layer_index);
}

void KVCache::insert(const SiteKey& key, CachedFeatures features) {
  if (frozen_) throw Error("KVCache is frozen; refusing write at " + key.str());
  if (features.k.rows() != features.v.rows() || features.k.cols() != features.v.cols())
    throw ShapeError("KVCache: K and V differ in shape at " + key.str());
  if (!entries_.emplace(key, std::move(features)).second)
    throw Error("KVCache: duplicate write at " + key.str());
}

const CachedFeatures& KVCache::at(const SiteKey& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw MissingCacheEntry("no cached source features at " + key.str());
  return it->second;
}

std::optional<int> KVCache::step_for_time(double t) const {
  for (const auto& [key, f] : entries_)
    if (std::abs(f.interval_start - t) <= 1e-12) return key.step_index;
  return std::nullopt;
}

std::string KVCache::content_hash() const {
  std::string bytes;
  for (const auto& [key, f] : entries_) {
    put(bytes, key.step_index);
    put(bytes, key.layer_index);
    put(bytes, static_cast<int>(key.kind));
    put(bytes, f.interval_start);
    put_matrix(bytes, f.k);
    put_matrix(bytes, f.v);
    if (f.q) put_matrix(bytes, *f.q);
  }
  return sha256_hex(bytes.data(), bytes.size());
}

void KVCache::save(const std::filesystem::path& path) const {
  std::string out(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(entries_.size()));
  for (const auto& [key, f] : entries_) {
    nlohmann::json tensors = {"k", "v"};
    if (f.q) tensors.push_back("q");
    const nlohmann::json header = {{"step", key.step_index},
                                   {"layer", key.layer_index},
                                   {"kind", to_string(key.kind)},
                                   {"interval_start", f.interval_start},
                                   {"rows", f.k.rows()},
                                   {"cols", f.k.cols()},
                                   {"dtype", "float64"},
                                   {"tensors", tensors}};
    const std::string text = header.dump();
    put(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    put_matrix(out, f.k);
    put_matrix(out, f.v);
    if (f.q) put_matrix(out, *f.q);
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write cache " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

KVCache KVCache::load(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("cannot read cache " + path.string());
  const std::string in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > in.size()) throw FormatError(path.string() + ": truncated cache file");
    std::memcpy(dst, in.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path.string() + ": not a cache file");
  std::uint32_t version;
  std::uint64_t count;
  take(&version, sizeof(version));
  if (version != kVersion) throw FormatError(path.string() + ": unsupported cache version");
  take(&count, sizeof(count));
  KVCache cache;
  for (std::uint64_t r = 0; r < count; ++r) {
    std::uint32_t len;
    take(&len, sizeof(len));
    std::string text(len, '\0');
    take(text.data(), len);
    const auto h = nlohmann::json::parse(text);
    SiteKey key{h.at("step").get<int>(), h.at("layer").get<int>(),
                h.at("kind").get<std::string>() == "double" ? BlockKind::double_block
                                                            : BlockKind::single_block};
    const auto rows = h.at("rows").get<Eigen::Index>(), cols = h.at("cols").get<Eigen::Index>();
    auto read = [&] {
      Features m(rows, cols);
      take(m.data(), static_cast<std::size_t>(rows * cols) * sizeof(double));
      return m;
    };
    CachedFeatures f;
    f.interval_start = h.at("interval_start").get<double>();
    for (const auto& name : h.at("tensors")) {
      const auto n = name.get<std::string>();
      if (n == "k")
        f.k = read();
      else if (n == "v")
        f.v = read();
      else if (n == "q")
        f.q = read();
      else
        throw FormatError(path.string() + ": unknown tensor '" + n + "'");
    }
    cache.insert(key, std::move(f));
  }
  cache.freeze();
  return cache;
}

}  // namespace rfedit
