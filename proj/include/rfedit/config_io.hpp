#pragma once

#include <filesystem>

#include "json.hpp"
#include "rfedit/pipeline.hpp"
#include "rfedit/train.hpp"

namespace rfedit {

inline constexpr int kConfigSchemaVersion = 1;

/// Every field is written; the override mask is not (it travels as a file).
void to_json(nlohmann::json& j, const EditConfig& c);
/// Missing keys keep their defaults; unknown keys and bad values throw
/// FormatError.
void from_json(const nlohmann::json& j, EditConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Throws FormatError unless `schema_version` is present and supported.
void check_schema(const nlohmann::json& j);

/// Throws std::filesystem::filesystem_error when missing, FormatError when
/// the file is not valid JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace rfedit
