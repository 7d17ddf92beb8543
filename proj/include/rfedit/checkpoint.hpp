#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfedit/mmdit.hpp"

namespace rfedit {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Plain-text sidecar written next to a checkpoint (`<path>.manifest.txt`).
struct TrainingManifest {
  std::uint64_t seed = 0;
  long long training_steps = 0;
  std::string dataset_hash;
  std::map<std::string, std::string> extra;  ///< free-form key/value lines
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout: 8-byte magic "RFEDITCK", u32 version, u64 header length,
/// JSON header (model config, vocabulary, tensor table), then float32
/// little-endian payloads at the offsets listed in the header.
void save_checkpoint(const std::filesystem::path& path, const ToyMmdit& model,
                     const TrainingManifest& manifest,
                     const Vocabulary& vocab = Vocabulary::builtin());

struct LoadedCheckpoint {
  ToyMmdit model;
  std::vector<std::string> vocabulary;
  TrainingManifest manifest;  ///< empty when the sidecar is absent
  std::string sha256;         ///< hash of the checkpoint file bytes
};

/// Throws FormatError on a malformed container and std::filesystem errors on
/// a missing file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);
void write_manifest(const std::filesystem::path& path, const TrainingManifest& m);
TrainingManifest read_manifest(const std::filesystem::path& path);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace rfedit
