#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfedit/dataset.hpp"
#include "rfedit/error.hpp"
#include "rfedit/pipeline.hpp"

namespace rfedit {

/// One source image plus the prompt pair applied to it. The image is either
/// rendered from `attributes` or read from `image`.
struct EditCase {
  std::string name;
  std::optional<ShapeAttributes> attributes;
  std::filesystem::path image;
  std::filesystem::path mask;  ///< optional externally supplied edit mask
  std::string source_prompt;
  std::string target_prompt;
  std::string target_color;  ///< enables edit_success when set
};

void to_json(nlohmann::json& j, const EditCase& c);
void from_json(const nlohmann::json& j, EditCase& c);

/// `n` recolor cases with attributes drawn from `seed`; each target color
/// differs from the source color.
std::vector<EditCase> make_color_edit_cases(int n, std::uint64_t seed, int image_size = 32);

/// Everything needed to re-execute one edit job.
struct RunSpec {
  std::string group;  ///< row label used by report
  std::filesystem::path checkpoint;
  std::string checkpoint_sha256;
  EditCase edit_case;
  EditConfig config;
  bool spill_cache = false;
};

void to_json(nlohmann::json& j, const RunSpec& s);
void from_json(const nlohmann::json& j, RunSpec& s);

/// Source image (and ground-truth pixel mask when rendered) of a case.
struct CaseImage {
  LatentGrid image;
  std::optional<std::vector<std::uint8_t>> truth_mask;
};
CaseImage load_case_image(const EditCase& c, int image_size);

/// Metrics of one edit. Region metrics use the ground-truth mask when known
/// and the extracted mask otherwise. Contains no timing.
nlohmann::json compute_metrics(const LatentGrid& source, const EditResult& result,
                               const EditCase& c, const CaseImage& ci, int patch_size);

/// Executes one job into `dir`: config.json, source/edited/reconstructed
/// PNGs, mask exports, optional kv_cache.bin, metrics.json, manifest.json.
/// Returns the metrics.
nlohmann::json execute_run(const RunSpec& spec, const ToyMmdit& model,
                           const std::filesystem::path& dir);

/// Runs each job in a forked child, at most `workers` at a time (in-process
/// when workers <= 1). Returns the number of failed jobs.
int run_jobs(const std::vector<std::function<void()>>& jobs, int workers);

struct Variant {
  std::string label;
  EditConfig config;
};

/// none, KV-mix, LS, KV-mix+LS. Rows without KV-mix fall back to the base
/// config's baseline mode.
std::vector<Variant> ablation_variants(const EditConfig& base);
/// One KV-mix row per attention mode.
std::vector<Variant> mode_variants(const EditConfig& base, const std::vector<AttentionMode>& modes);

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

struct ReportRow {
  std::string group;
  int runs = 0;
  int failed = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double psnr_outside = 0.0;
  double ssim_outside = 0.0;
  double success_rate = 0.0;  ///< over runs with a target color
  int success_count = 0;
  int success_total = 0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> checkpoints;  ///< distinct hashes seen
};

/// Collects every run directory (one holding manifest.json) under `roots`.
/// Throws CheckpointMismatch when runs disagree on the checkpoint hash unless
/// `allow_mixed` is set.
Report aggregate_runs(const std::vector<std::filesystem::path>& roots, bool allow_mixed = false);
std::string format_report(const Report& r);
nlohmann::json report_json(const Report& r);

/// Every (variant, case) job of a study, laid out as root/<label>/<case>.
std::vector<RunSpec> study_specs(const std::vector<Variant>& variants,
                                 const std::vector<EditCase>& cases,
                                 const std::filesystem::path& checkpoint,
                                 const std::string& checkpoint_sha256);
std::filesystem::path study_dir(const std::filesystem::path& root, const RunSpec& spec);

}  // namespace rfedit
