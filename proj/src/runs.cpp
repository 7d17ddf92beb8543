#include "rfedit/runs.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "rfedit/config_io.hpp"
#include "rfedit/image_io.hpp"
#include "rfedit/metrics.hpp"

namespace rfedit {

using nlohmann::json;
namespace fs = std::filesystem;

void to_json(json& j, const EditCase& c) {
  j = json{{"name", c.name},
           {"source_prompt", c.source_prompt},
           {"target_prompt", c.target_prompt},
           {"target_color", c.target_color}};
  if (c.attributes) {
    const auto& a = *c.attributes;
    j["attributes"] = {{"color", palette().at(a.color).name},
                       {"shape", shape_names().at(a.shape)},
                       {"position", position_names().at(a.position)},
                       {"size", a.size},
                       {"offset_x", a.offset_x},
                       {"offset_y", a.offset_y},
                       {"background", a.background}};
  }
  if (!c.image.empty()) j["image"] = c.image.string();
  if (!c.mask.empty()) j["mask"] = c.mask.string();
}

namespace {

int index_of(const std::vector<std::string>& names, const std::string& s, const char* what) {
  const auto it = std::find(names.begin(), names.end(), s);
  if (it == names.end()) throw FormatError(std::string("unknown ") + what + " '" + s + "'");
  return static_cast<int>(it - names.begin());
}

}  // namespace

void from_json(const json& j, EditCase& c) {
  try {
    c.name = j.value("name", std::string("case"));
    c.source_prompt = j.at("source_prompt").get<std::string>();
    c.target_prompt = j.at("target_prompt").get<std::string>();
    c.target_color = j.value("target_color", std::string());
    c.image = j.value("image", std::string());
    c.mask = j.value("mask", std::string());
    if (j.contains("attributes")) {
      const json& a = j.at("attributes");
      ShapeAttributes s;
      const int color = palette_index(a.at("color").get<std::string>());
      if (color < 0) throw FormatError("unknown color '" + a.at("color").get<std::string>() + "'");
      s.color = color;
      s.shape = index_of(shape_names(), a.at("shape").get<std::string>(), "shape");
      s.position = index_of(position_names(), a.at("position").get<std::string>(), "position");
      s.size = a.at("size").get<double>();
      s.offset_x = a.at("offset_x").get<double>();
      s.offset_y = a.at("offset_y").get<double>();
      s.background = a.at("background").get<double>();
      c.attributes = s;
    } else {
      c.attributes.reset();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad edit case: ") + e.what());
  }
  if (!c.attributes && c.image.empty()) throw FormatError("edit case needs attributes or an image");
}

std::vector<EditCase> make_color_edit_cases(int n, std::uint64_t seed, int image_size) {
  if (n < 1) throw InvalidArgument("make_color_edit_cases: n must be >= 1");
  Rng rng(derive_seed(seed, 0x636f6c6f72ULL));
  std::vector<EditCase> out;
  for (int i = 0; i < n; ++i) {
    const ShapeAttributes a = random_attributes(rng, image_size);
    ShapeAttributes t = a;
    const int others = static_cast<int>(palette().size()) - 1;
    t.color = (a.color + 1 + static_cast<int>(rng.below(others))) % static_cast<int>(palette().size());
    char name[64];
    std::snprintf(name, sizeof name, "s%llu_%02d", static_cast<unsigned long long>(seed), i);
    out.push_back({name, a, {}, {}, caption_for(a), caption_for(t), palette()[t.color].name});
  }
  return out;
}

void to_json(json& j, const RunSpec& s) {
  j = json{{"schema_version", kConfigSchemaVersion},
           {"group", s.group},
           {"checkpoint", s.checkpoint.string()},
           {"checkpoint_sha256", s.checkpoint_sha256},
           {"case", s.edit_case},
           {"edit", s.config},
           {"spill_cache", s.spill_cache}};
}

void from_json(const json& j, RunSpec& s) {
  check_schema(j);
  try {
    s.group = j.value("group", std::string());
    s.checkpoint = j.at("checkpoint").get<std::string>();
    s.checkpoint_sha256 = j.value("checkpoint_sha256", std::string());
    s.spill_cache = j.value("spill_cache", false);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad run config: ") + e.what());
  }
  if (!j.contains("case")) throw FormatError("run config lacks 'case'");
  s.edit_case = j.at("case").get<EditCase>();
  s.config = j.contains("edit") ? j.at("edit").get<EditConfig>() : EditConfig{};
}

CaseImage load_case_image(const EditCase& c, int image_size) {
  if (c.attributes) {
    ShapesSample s = render_sample(*c.attributes, image_size);
    return {std::move(s.image), std::move(s.mask)};
  }
  return {read_png(c.image), std::nullopt};
}

namespace {

std::optional<EditMask> load_mask(const fs::path& path, int image_size, int patch) {
  if (path.empty()) return std::nullopt;
  int h = 0, w = 0;
  const auto m = read_mask_png(path, h, w);
  const int grid = image_size / patch;
  if (h == grid && w == grid) return EditMask(grid, grid, m);
  if (h == image_size && w == image_size) return EditMask::from_pixels(m, h, w, patch);
  throw ShapeError("mask '" + path.string() + "' is neither patch- nor pixel-sized");
}

double mask_iou(const EditMask& a, const EditMask& b) {
  int inter = 0, uni = 0;
  for (int i = 0; i < a.tokens(); ++i) {
    inter += a.token(i) && b.token(i);
    uni += a.token(i) || b.token(i);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

}  // namespace

json compute_metrics(const LatentGrid& source, const EditResult& result, const EditCase& c,
                     const CaseImage& ci, int patch_size) {
  const int size = source.shape().height;
  const auto region = ci.truth_mask ? *ci.truth_mask : result.mask.pixels(patch_size);
  json m{{"psnr", psnr(result.edited, source)},
         {"ssim", ssim(result.edited, source)},
         {"mask_tokens", result.mask.count()},
         {"region", ci.truth_mask ? "ground_truth" : "extracted"}};
  bool has_complement = false;
  for (auto r : region) has_complement |= r == 0;
  if (has_complement) {
    m["psnr_outside"] = psnr_outside(result.edited, source, region);
    m["ssim_outside"] = ssim_outside(result.edited, source, region);
  }
  bool any = false;
  for (auto r : region) any |= r != 0;
  if (any) {
    m["dominant_color"] = dominant_color(result.edited, region);
    if (!c.target_color.empty()) m["edit_success"] = edit_success(result.edited, region, c.target_color);
  }
  if (ci.truth_mask)
    m["mask_iou"] = mask_iou(result.mask, EditMask::from_pixels(*ci.truth_mask, size, size, patch_size));
  if (result.reconstructed) m["reconstruction_psnr"] = psnr(*result.reconstructed, source);
  return m;
}

json execute_run(const RunSpec& spec, const ToyMmdit& model, const fs::path& dir) {
  fs::create_directories(dir);
  write_json_file(dir / "config.json", json(spec));
  const auto& mc = model.config();
  const CaseImage ci = load_case_image(spec.edit_case, mc.image_size);
  EditConfig cfg = spec.config;
  if (auto m = load_mask(spec.edit_case.mask, mc.image_size, mc.patch_size)) cfg.override_mask = m;

  json manifest{{"checkpoint", spec.checkpoint.string()},
                {"checkpoint_sha256", spec.checkpoint_sha256},
                {"group", spec.group},
                {"case", spec.edit_case.name},
                {"noise_seed", cfg.noise_seed},
                {"model_seed", cfg.model_seed}};
  try {
    const EditResult r = edit(model, ci.image, spec.edit_case.source_prompt,
                              spec.edit_case.target_prompt, cfg);
    write_png(dir / "source.png", ci.image);
    write_png(dir / "edited.png", r.edited);
    if (r.reconstructed) write_png(dir / "reconstructed.png", *r.reconstructed);
    write_mask_png(dir / "mask_patch.png", r.mask.values(), r.mask.grid_h(), r.mask.grid_w());
    write_mask_png(dir / "mask_pixel.png", r.mask.pixels(mc.patch_size), mc.image_size,
                   mc.image_size);
    if (ci.truth_mask)
      write_mask_png(dir / "truth_mask.png", *ci.truth_mask, mc.image_size, mc.image_size);
    if (spec.spill_cache) r.cache.save(dir / "kv_cache.bin");
    const json metrics = compute_metrics(ci.image, r, spec.edit_case, ci, mc.patch_size);
    write_json_file(dir / "metrics.json", metrics);
    manifest["status"] = "ok";
    manifest["cache_entries"] = r.cache.size();
    manifest["edit_tokens"] = r.edit_tokens;
    manifest["timing"] = {{"inversion_seconds", r.timing.inversion_seconds},
                          {"sampling_seconds", r.timing.sampling_seconds}};
    manifest["velocity_norms"] = {{"inversion", r.inversion_velocity_norms},
                                  {"sampling", r.sampling_velocity_norms}};
    write_json_file(dir / "manifest.json", manifest);
    return metrics;
  } catch (const std::exception& e) {
    manifest["status"] = "error";
    manifest["error"] = e.what();
    write_json_file(dir / "manifest.json", manifest);
    throw;
  }
}

int run_jobs(const std::vector<std::function<void()>>& jobs, int workers) {
  int failures = 0;
  if (workers <= 1) {
    for (const auto& job : jobs) {
      try {
        job();
      } catch (const std::exception& e) {
        std::fprintf(stderr, "job failed: %s\n", e.what());
        ++failures;
      }
    }
    return failures;
  }
  std::size_t next = 0;
  int running = 0;
  std::fflush(nullptr);
  while (next < jobs.size() || running > 0) {
    while (running < workers && next < jobs.size()) {
      const pid_t pid = fork();
      if (pid < 0) throw Error("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          jobs[next]();
        } catch (const std::exception& e) {
          std::fprintf(stderr, "job failed: %s\n", e.what());
          code = 1;
        }
        std::fflush(nullptr);
        _exit(code);
      }
      ++next;
      ++running;
    }
    int status = 0;
    if (wait(&status) < 0) throw Error("wait failed");
    --running;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
  }
  return failures;
}

std::vector<Variant> ablation_variants(const EditConfig& base) {
  std::vector<Variant> v;
  for (auto [label, kv, ls] : {std::tuple{"none", false, false}, std::tuple{"kvmix", true, false},
                              std::tuple{"ls", false, true}, std::tuple{"kvmix+ls", true, true}}) {
    EditConfig c = base;
    c.kvmix_on = kv;
    c.latents_shift_on = ls;
    v.push_back({label, c});
  }
  return v;
}

std::vector<Variant> mode_variants(const EditConfig& base, const std::vector<AttentionMode>& modes) {
  std::vector<Variant> v;
  for (auto m : modes) {
    EditConfig c = base;
    c.kvmix_on = true;
    c.schedule.mode = m;
    v.push_back({to_string(m), c});
  }
  return v;
}

std::vector<RunSpec> study_specs(const std::vector<Variant>& variants,
                                 const std::vector<EditCase>& cases, const fs::path& checkpoint,
                                 const std::string& checkpoint_sha256) {
  std::vector<RunSpec> out;
  for (const auto& v : variants)
    for (const auto& c : cases) out.push_back({v.label, checkpoint, checkpoint_sha256, c, v.config});
  return out;
}

fs::path study_dir(const fs::path& root, const RunSpec& spec) {
  return root / spec.group / spec.edit_case.name;
}

namespace {

void collect_runs(const fs::path& root, std::vector<fs::path>& out) {
  if (!fs::exists(root)) throw fs::filesystem_error("run root not found", root,
                                                    std::make_error_code(std::errc::no_such_file_or_directory));
  if (fs::exists(root / "manifest.json")) {
    out.push_back(root);
    return;
  }
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "manifest.json")
      out.push_back(e.path().parent_path());
}

}  // namespace

Report aggregate_runs(const std::vector<fs::path>& roots, bool allow_mixed) {
  std::vector<fs::path> dirs;
  for (const auto& r : roots) collect_runs(r, dirs);
  std::sort(dirs.begin(), dirs.end());
  std::map<std::string, ReportRow> rows;
  std::vector<std::string> order;
  std::set<std::string> hashes;
  for (const auto& d : dirs) {
    const json manifest = read_json_file(d / "manifest.json");
    const std::string group = manifest.value("group", std::string());
    hashes.insert(manifest.value("checkpoint_sha256", std::string()));
    if (!rows.count(group)) {
      order.push_back(group);
      rows[group].group = group;
    }
    ReportRow& row = rows[group];
    if (manifest.value("status", std::string()) != "ok" || !fs::exists(d / "metrics.json")) {
      ++row.failed;
      continue;
    }
    const json m = read_json_file(d / "metrics.json");
    ++row.runs;
    row.psnr += m.value("psnr", 0.0);
    row.ssim += m.value("ssim", 0.0);
    row.psnr_outside += m.value("psnr_outside", 0.0);
    row.ssim_outside += m.value("ssim_outside", 0.0);
    if (m.contains("edit_success")) {
      ++row.success_total;
      row.success_count += m.at("edit_success").get<bool>();
    }
  }
  if (hashes.size() > 1 && !allow_mixed)
    throw CheckpointMismatch("runs use " + std::to_string(hashes.size()) +
                             " different checkpoints; pass --allow-mixed-checkpoints to aggregate anyway");
  Report rep;
  rep.checkpoints.assign(hashes.begin(), hashes.end());
  for (const auto& g : order) {
    ReportRow r = rows[g];
    if (r.runs > 0) {
      r.psnr /= r.runs;
      r.ssim /= r.runs;
      r.psnr_outside /= r.runs;
      r.ssim_outside /= r.runs;
    }
    r.success_rate = r.success_total ? static_cast<double>(r.success_count) / r.success_total : 0.0;
    rep.rows.push_back(r);
  }
  return rep;
}

std::string format_report(const Report& rep) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "group" << std::right << std::setw(6) << "runs"
     << std::setw(8) << "failed" << std::setw(10) << "psnr" << std::setw(8) << "ssim"
     << std::setw(12) << "psnr_out" << std::setw(10) << "ssim_out" << std::setw(10) << "success"
     << '\n';
  os << std::fixed;
  for (const auto& r : rep.rows)
    os << std::left << std::setw(12) << r.group << std::right << std::setw(6) << r.runs
       << std::setw(8) << r.failed << std::setw(10) << std::setprecision(2) << r.psnr
       << std::setw(8) << std::setprecision(4) << r.ssim << std::setw(12) << std::setprecision(2)
       << r.psnr_outside << std::setw(10) << std::setprecision(4) << r.ssim_outside
       << std::setw(10) << std::setprecision(3) << r.success_rate << '\n';
  return os.str();
}

json report_json(const Report& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"group", r.group},
                    {"runs", r.runs},
                    {"failed", r.failed},
                    {"psnr", r.psnr},
                    {"ssim", r.ssim},
                    {"psnr_outside", r.psnr_outside},
                    {"ssim_outside", r.ssim_outside},
                    {"success_rate", r.success_rate},
                    {"success_count", r.success_count},
                    {"success_total", r.success_total}});
  return {{"checkpoints", rep.checkpoints}, {"rows", rows}};
}

}  // namespace rfedit
