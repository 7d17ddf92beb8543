#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rfedit/attn_control.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/kv_cache.hpp"
#include "rfedit/latents_shift.hpp"
#include "rfedit/mask.hpp"
#include "rfedit/mmdit.hpp"

namespace rfedit {

/// Where the relevance map for the edit mask is read.
enum class MaskSource { first_inversion_step, last_sampling_step };

MaskSource parse_mask_source(std::string_view s);
const char* to_string(MaskSource s);

struct EditConfig {
  int num_steps = 15;
  double delta = 0.9;
  double beta = 0.25;
  InjectionSchedule schedule;  ///< mode defaults to KV
  ThresholdConfig threshold;
  SolverKind solver = SolverKind::euler;
  std::uint64_t noise_seed = 0;  ///< Latents-Shift noise
  std::uint64_t model_seed = 0;  ///< recorded for provenance only
  bool kvmix_on = true;
  bool latents_shift_on = true;
  /// With KV-mix off: global injection mode, or none for plain sampling.
  std::optional<AttentionMode> baseline_mode = AttentionMode::V;
  MaskSource mask_source = MaskSource::first_inversion_step;
  std::vector<std::string> edit_words;  ///< overrides automatic edit-token selection
  std::optional<EditMask> override_mask;
  MomentScope moment_scope = MomentScope::global;
  double epsilon = 1e-6;
  bool with_reconstruction = false;

  /// Throws InvalidArgument on out-of-range values.
  void validate() const;
  bool operator==(const EditConfig&) const = default;
};

/// What the pipeline needs to know about the model beyond its velocity.
struct ModelLayout {
  GridShape image;
  int patch_size = 1;
  int num_double = 0;
  int num_single = 0;
  int max_text_tokens = kDefaultMaxTextTokens;

  int grid_h() const { return image.height / patch_size; }
  int grid_w() const { return image.width / patch_size; }
};

ModelLayout layout_of(const ModelConfig& config);

struct InversionOutput {
  LatentGrid z_T;
  KVCache cache;  ///< frozen
  EditMask mask;
  std::vector<int> edit_tokens;  ///< empty when the mask was supplied
  std::vector<double> velocity_norms;
};

struct EditTiming {
  double inversion_seconds = 0.0;
  double sampling_seconds = 0.0;
};

struct EditResult {
  LatentGrid edited;
  std::optional<LatentGrid> reconstructed;
  EditMask mask;
  LatentGrid inverted;
  LatentGrid shifted;
  std::vector<int> edit_tokens;
  std::vector<double> inversion_velocity_norms;
  std::vector<double> sampling_velocity_norms;
  KVCache cache;  ///< frozen source features of the inversion pass
  EditConfig config;
  EditTiming timing;
};

InversionOutput run_inversion_phase(const VelocityModel& model, const ModelLayout& layout,
                                    const LatentGrid& image, const std::string& source_prompt,
                                    const std::string& target_prompt, const EditConfig& config);

/// Latents-Shift (unless ablated), then sampling under the configured
/// controller; the result is clamped to [-1, 1]. Never mutates `cache` or
/// `mask`.
LatentGrid run_sampling_phase(const VelocityModel& model, const ModelLayout& layout,
                              const LatentGrid& z_T, const KVCache& cache, const EditMask& mask,
                              const std::string& target_prompt, const EditConfig& config,
                              LatentGrid* shifted_out = nullptr,
                              std::vector<double>* velocity_norms = nullptr);

/// Both phases. Errors keep their type and gain a phase prefix.
EditResult edit(const VelocityModel& model, const ModelLayout& layout, const LatentGrid& image,
                const std::string& source_prompt, const std::string& target_prompt,
                const EditConfig& config);
EditResult edit(const ToyMmdit& model, const LatentGrid& image, const std::string& source_prompt,
                const std::string& target_prompt, const EditConfig& config);

/// Invert and resample with the same prompt, injecting source K and V at
/// every visual token and skipping Latents-Shift.
LatentGrid reconstruct(const VelocityModel& model, const ModelLayout& layout,
                       const LatentGrid& image, const std::string& prompt,
                       const EditConfig& config = {});
LatentGrid reconstruct(const ToyMmdit& model, const LatentGrid& image, const std::string& prompt,
                       const EditConfig& config = {});

/// The configuration reconstruct runs edit with.
EditConfig reconstruction_config(const EditConfig& base, const ModelLayout& layout);

}  // namespace rfedit
