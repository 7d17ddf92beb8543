#include "rfedit/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "rfedit/error.hpp"

namespace rfedit {

MaskSource parse_mask_source(std::string_view s) {
  if (s == "first_inversion_step") return MaskSource::first_inversion_step;
  if (s == "last_sampling_step") return MaskSource::last_sampling_step;
  throw InvalidArgument("unknown mask source '" + std::string(s) + "'");
}

const char* to_string(MaskSource s) {
  return s == MaskSource::first_inversion_step ? "first_inversion_step" : "last_sampling_step";
}

void EditConfig::validate() const {
  if (num_steps < 1) throw InvalidArgument("num_steps must be >= 1");
  if (!(delta >= 0.0 && delta <= 1.0)) throw InvalidArgument("delta must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  schedule.validate(num_steps);
  threshold.validate();
}

ModelLayout layout_of(const ModelConfig& c) {
  return {c.image_shape(), c.patch_size, c.num_double_blocks, c.num_single_blocks,
          c.max_text_tokens};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Re-raises the in-flight exception with `prefix` prepended, keeping its type.
[[noreturn]] void rethrow_tagged(const std::string& prefix) {
  try {
    throw;
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(prefix + e.what(), e.step());
  } catch (const DegenerateMaskError& e) {
    throw DegenerateMaskError(prefix + e.what());
  } catch (const NoEditTokens& e) {
    throw NoEditTokens(prefix + e.what());
  } catch (const MissingCacheEntry& e) {
    throw MissingCacheEntry(prefix + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(prefix + e.what());
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

bool needs_q(const EditConfig& c) {
  if (c.kvmix_on) return mode_uses_q(c.schedule.mode);
  return c.baseline_mode && mode_uses_q(*c.baseline_mode);
}

bool injects(const EditConfig& c) { return c.kvmix_on || c.baseline_mode.has_value(); }

EditMask mask_from_capture(const AttentionMapCapture& capture, const std::vector<int>& tokens,
                           const ModelLayout& layout, const EditConfig& config) {
  if (!capture.captured()) throw Error("attention map of the last Double block was not captured");
  return extract_mask(*capture.captured(), tokens, layout.max_text_tokens, layout.grid_h(),
                      layout.grid_w(), config.threshold);
}

void check_image(const LatentGrid& image, const ModelLayout& layout) {
  if (image.shape() != layout.image)
    throw ShapeError("image shape " + image.shape().str() + " does not match model input " +
                     layout.image.str());
  if (!image.all_finite()) throw NonFiniteError("input image has non-finite pixels", -1);
}

}  // namespace

InversionOutput run_inversion_phase(const VelocityModel& model, const ModelLayout& layout,
                                    const LatentGrid& image, const std::string& source_prompt,
                                    const std::string& target_prompt, const EditConfig& config) {
  config.validate();
  check_image(image, layout);
  const TokenIds source = tokenize(source_prompt, layout.max_text_tokens);
  const TokenIds target = tokenize(target_prompt, layout.max_text_tokens);
  const TimeGrid grid = make_schedule(config.num_steps);
  const auto solver = make_solver(config.solver);

  InversionOutput out;
  const bool extract = !config.override_mask;
  if (config.override_mask) {
    if (config.override_mask->grid_h() != layout.grid_h() ||
        config.override_mask->grid_w() != layout.grid_w())
      throw ShapeError("override mask does not match the patch grid");
    out.mask = *config.override_mask;
  } else {
    if (layout.num_double < 1) throw InvalidArgument("mask extraction needs a Double block");
    out.edit_tokens = select_edit_tokens(source, target, config.edit_words);
  }

  InjectionSchedule record = config.schedule;
  record.mode = needs_q(config) ? AttentionMode::QKV : AttentionMode::KV;
  SourceRecorder recorder(out.cache, record);
  AttentionMapCapture capture(Phase::inversion, config.num_steps - 1, BlockKind::double_block,
                              layout.num_double - 1);
  std::vector<AttentionController*> chain;
  if (injects(config)) chain.push_back(&recorder);
  if (extract && config.mask_source == MaskSource::first_inversion_step) chain.push_back(&capture);
  ControllerChain controller(chain);

  SolveOptions opt{chain.empty() ? nullptr : &controller, &out.velocity_norms};
  out.z_T = invert(model, image, grid, source, *solver, opt);
  out.cache.freeze();

  if (extract) {
    if (config.mask_source == MaskSource::first_inversion_step) {
      out.mask = mask_from_capture(capture, out.edit_tokens, layout, config);
    } else {
      // Plain sampling with the target prompt; the map of its last step is used.
      AttentionMapCapture last(Phase::sampling, config.num_steps - 1, BlockKind::double_block,
                               layout.num_double - 1);
      sample(model, out.z_T, grid, target, *solver, SolveOptions{&last, nullptr});
      out.mask = mask_from_capture(last, out.edit_tokens, layout, config);
    }
  }
  if (injects(config))
    verify_cache_complete(out.cache, record, grid, layout.num_double, layout.num_single);
  return out;
}

LatentGrid run_sampling_phase(const VelocityModel& model, const ModelLayout& layout,
                              const LatentGrid& z_T, const KVCache& cache, const EditMask& mask,
                              const std::string& target_prompt, const EditConfig& config,
                              LatentGrid* shifted_out, std::vector<double>* velocity_norms) {
  config.validate();
  if (z_T.shape() != layout.image)
    throw ShapeError("latent shape " + z_T.shape().str() + " does not match model input " +
                     layout.image.str());
  if (mask.grid_h() != layout.grid_h() || mask.grid_w() != layout.grid_w())
    throw ShapeError("edit mask does not match the patch grid");
  const TokenIds target = tokenize(target_prompt, layout.max_text_tokens);
  const TimeGrid grid = make_schedule(config.num_steps);
  const auto solver = make_solver(config.solver);

  LatentGrid start = z_T;
  if (config.latents_shift_on)
    start = latents_shift(z_T, mask,
                          ShiftParams{config.beta, config.epsilon, config.noise_seed,
                                      config.moment_scope});
  if (shifted_out) *shifted_out = start;

  std::unique_ptr<AttentionController> controller;
  InjectionSchedule schedule = config.schedule;
  if (config.kvmix_on) {
    verify_cache_complete(cache, schedule, grid, layout.num_double, layout.num_single);
    controller = make_kvmix_controller(cache, schedule, MixParams{config.delta, mask});
  } else if (config.baseline_mode) {
    schedule.mode = *config.baseline_mode;
    verify_cache_complete(cache, schedule, grid, layout.num_double, layout.num_single);
    controller = std::make_unique<BaselineInjectionController>(cache, schedule);
  }
  LatentGrid image = sample(model, start, grid, target, *solver,
                            SolveOptions{controller.get(), velocity_norms});
  for (auto& x : image.values()) x = std::clamp(x, -1.0, 1.0);
  return image;
}

EditResult edit(const VelocityModel& model, const ModelLayout& layout, const LatentGrid& image,
                const std::string& source_prompt, const std::string& target_prompt,
                const EditConfig& config) {
  EditResult r;
  r.config = config;
  auto start = Clock::now();
  InversionOutput inv;
  try {
    inv = run_inversion_phase(model, layout, image, source_prompt, target_prompt, config);
  } catch (const Error&) {
    rethrow_tagged("inversion phase: ");
  }
  r.timing.inversion_seconds = seconds_since(start);

  start = Clock::now();
  try {
    r.edited = run_sampling_phase(model, layout, inv.z_T, inv.cache, inv.mask, target_prompt,
                                  config, &r.shifted, &r.sampling_velocity_norms);
    if (config.with_reconstruction) {
      EditConfig rc = reconstruction_config(config, layout);
      r.reconstructed =
          run_sampling_phase(model, layout, inv.z_T, inv.cache, *rc.override_mask,
                             source_prompt, rc);
    }
  } catch (const Error&) {
    rethrow_tagged("sampling phase: ");
  }
  r.timing.sampling_seconds = seconds_since(start);

  r.mask = std::move(inv.mask);
  r.inverted = std::move(inv.z_T);
  r.edit_tokens = std::move(inv.edit_tokens);
  r.inversion_velocity_norms = std::move(inv.velocity_norms);
  r.cache = std::move(inv.cache);
  return r;
}

EditResult edit(const ToyMmdit& model, const LatentGrid& image, const std::string& source_prompt,
                const std::string& target_prompt, const EditConfig& config) {
  return edit(model, layout_of(model.config()), image, source_prompt, target_prompt, config);
}

EditConfig reconstruction_config(const EditConfig& base, const ModelLayout& layout) {
  EditConfig c = base;
  c.kvmix_on = true;
  c.latents_shift_on = false;
  c.beta = 0.0;
  c.schedule.mode = AttentionMode::KV;
  c.override_mask = EditMask::zeros(layout.grid_h(), layout.grid_w());
  c.edit_words.clear();
  c.with_reconstruction = false;
  return c;
}

LatentGrid reconstruct(const VelocityModel& model, const ModelLayout& layout,
                       const LatentGrid& image, const std::string& prompt,
                       const EditConfig& config) {
  return edit(model, layout, image, prompt, prompt, reconstruction_config(config, layout)).edited;
}

LatentGrid reconstruct(const ToyMmdit& model, const LatentGrid& image, const std::string& prompt,
                       const EditConfig& config) {
  return reconstruct(model, layout_of(model.config()), image, prompt, config);
}

}  // namespace rfedit
