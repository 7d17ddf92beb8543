// Command-line front end: dataset generation, training, and edit studies.
//
// Exit codes: 0 success, 2 usage error, 3 missing or unreadable checkpoint,
// 4 malformed config, 5 runtime failure, 6 checkpoint hash mismatch.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "rfedit/checkpoint.hpp"
#include "rfedit/config_io.hpp"
#include "rfedit/image_io.hpp"
#include "rfedit/metrics.hpp"
#include "rfedit/runs.hpp"
#include "rfedit/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rfedit;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kMissingCheckpoint = 3, kBadConfig = 4, kRuntime = 5,
                kMismatch = 6 };

struct UsageError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};

// Flags shared by every command that runs the edit pipeline.
struct EditFlags {
  std::string config;
  std::optional<int> steps;
  std::optional<double> delta, beta, k;
  std::optional<int> dilation;
  std::optional<std::string> mode, baseline, solver, mask_source, moment_scope, direction,
      injection_steps;
  std::optional<std::uint64_t> noise_seed;
  std::vector<std::string> edit_words;
  bool no_kvmix = false, no_ls = false, with_reconstruction = false, no_double = false,
       no_single = false;
};

void add_edit_flags(CLI::App* app, EditFlags& f) {
  app->add_option("--config", f.config, "JSON edit config; flags override its values");
  app->add_option("--steps", f.steps, "number of solver steps (default 15)");
  app->add_option("--delta", f.delta, "KV-mix strength in [0, 1] (default 0.9)");
  app->add_option("--beta", f.beta, "Latents-Shift fusion ratio in [0, 1] (default 0.25)");
  app->add_option("--mode", f.mode, "mixed attention features: V, QV, QKV, KV (default KV)");
  app->add_option("--baseline", f.baseline,
                  "injection used when KV-mix is off: none, V, QV, QKV, KV (default V)");
  app->add_option("--solver", f.solver, "euler or midpoint");
  app->add_option("--injection-steps", f.injection_steps,
                  "comma-separated sampling steps to inject at (default all)");
  app->add_flag("--no-double", f.no_double, "skip injection in Double blocks");
  app->add_flag("--no-single", f.no_single, "skip injection in Single blocks");
  app->add_option("--threshold-k", f.k, "mask threshold mean + k * std");
  app->add_option("--dilation", f.dilation, "mask dilation steps");
  app->add_option("--direction", f.direction, "text_to_visual or visual_to_text");
  app->add_option("--mask-source", f.mask_source, "first_inversion_step or last_sampling_step");
  app->add_option("--moments", f.moment_scope, "Latents-Shift moments: global or masked");
  app->add_option("--noise-seed", f.noise_seed, "Latents-Shift noise seed");
  app->add_option("--edit-words", f.edit_words, "source words that mark the edited region");
  app->add_flag("--no-kvmix", f.no_kvmix, "disable KV-mix");
  app->add_flag("--no-ls", f.no_ls, "disable Latents-Shift");
  app->add_flag("--reconstruct", f.with_reconstruction, "also save a reconstruction");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

EditConfig resolve_edit_config(const EditFlags& f) {
  EditConfig c;
  if (!f.config.empty()) {
    const json j = read_json_file(f.config);
    check_schema(j);
    c = j.get<EditConfig>();
  }
  try {
    if (f.steps) c.num_steps = *f.steps;
    if (f.delta) c.delta = *f.delta;
    if (f.beta) c.beta = *f.beta;
    if (f.mode) c.schedule.mode = parse_attention_mode(*f.mode);
    if (f.baseline) {
      if (*f.baseline == "none")
        c.baseline_mode.reset();
      else
        c.baseline_mode = parse_attention_mode(*f.baseline);
    }
    if (f.solver) c.solver = parse_solver(*f.solver);
    if (f.injection_steps) {
      std::vector<int> steps;
      for (const auto& s : split_list(*f.injection_steps)) steps.push_back(std::stoi(s));
      c.schedule.steps = steps;
    }
    if (f.no_double) c.schedule.double_blocks = false;
    if (f.no_single) c.schedule.single_blocks = false;
    if (f.k) c.threshold.k = *f.k;
    if (f.dilation) c.threshold.dilation_steps = *f.dilation;
    if (f.direction) c.threshold.direction = parse_direction(*f.direction);
    if (f.mask_source) c.mask_source = parse_mask_source(*f.mask_source);
    if (f.moment_scope) c.moment_scope = parse_moment_scope(*f.moment_scope);
    if (f.noise_seed) c.noise_seed = *f.noise_seed;
    if (!f.edit_words.empty()) c.edit_words = f.edit_words;
    if (f.no_kvmix) c.kvmix_on = false;
    if (f.no_ls) c.latents_shift_on = false;
    if (f.with_reconstruction) c.with_reconstruction = true;
    c.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  } catch (const std::logic_error& e) {
    throw UsageError(std::string("bad number: ") + e.what());
  }
  return c;
}

struct ModelHandle {
  LoadedCheckpoint ckpt;
  fs::path path;
};

ModelHandle load_model(const std::string& path) {
  const fs::path p = fs::absolute(path);
  if (!fs::exists(p)) throw CheckpointError("checkpoint not found: " + p.string());
  try {
    return {load_checkpoint(p), p};
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("unreadable checkpoint: ") + e.what());
  }
}

// Source image selection shared by edit and reconstruct.
struct CaseFlags {
  std::string image, mask, name = "case", color = "red", shape = "circle", position = "center",
                     source, target, target_color;
  double size = 6.0, offset_x = 0.0, offset_y = 0.0, background = 0.5;
};

void add_case_flags(CLI::App* app, CaseFlags& f, bool with_target) {
  app->add_option("--image", f.image, "source PNG (otherwise a shape is rendered)");
  app->add_option("--color", f.color, "rendered shape color");
  app->add_option("--shape", f.shape, "rendered shape: circle, square, triangle");
  app->add_option("--position", f.position, "rendered position: left, right, top, bottom, center");
  app->add_option("--size", f.size, "rendered half extent in pixels");
  app->add_option("--background", f.background, "rendered background gray level in [0, 1]");
  app->add_option("--name", f.name, "case name");
  app->add_option("--source", f.source, "source prompt (default: caption of the rendered shape)");
  if (with_target) {
    app->add_option("--target", f.target, "target prompt");
    app->add_option("--target-color", f.target_color,
                    "palette color the edit aims for (scores edit success; builds --target when absent)");
    app->add_option("--mask", f.mask, "edit mask PNG at patch or pixel resolution");
  }
}

int index_in(const std::vector<std::string>& v, const std::string& s, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == s) return static_cast<int>(i);
  throw UsageError(std::string("unknown ") + what + " '" + s + "'");
}

EditCase resolve_case(const CaseFlags& f, bool with_target) {
  EditCase c;
  c.name = f.name;
  c.mask = f.mask.empty() ? fs::path{} : fs::absolute(f.mask);
  c.target_color = f.target_color;
  if (!f.image.empty()) {
    c.image = fs::absolute(f.image);
    if (f.source.empty()) throw UsageError("--source is required with --image");
  } else {
    ShapeAttributes a;
    a.color = palette_index(f.color);
    if (a.color < 0) throw UsageError("unknown color '" + f.color + "'");
    a.shape = index_in(shape_names(), f.shape, "shape");
    a.position = index_in(position_names(), f.position, "position");
    a.size = f.size;
    a.offset_x = f.offset_x;
    a.offset_y = f.offset_y;
    a.background = f.background;
    c.attributes = a;
  }
  c.source_prompt = f.source.empty() ? caption_for(*c.attributes) : f.source;
  if (with_target) {
    if (!f.target.empty()) {
      c.target_prompt = f.target;
    } else if (!f.target_color.empty() && c.attributes) {
      ShapeAttributes t = *c.attributes;
      t.color = palette_index(f.target_color);
      if (t.color < 0) throw UsageError("unknown target color '" + f.target_color + "'");
      c.target_prompt = caption_for(t);
    } else {
      throw UsageError("--target (or --target-color with a rendered shape) is required");
    }
    if (!c.target_color.empty() && palette_index(c.target_color) < 0)
      throw UsageError("unknown target color '" + c.target_color + "'");
  } else {
    c.target_prompt = c.source_prompt;
  }
  return c;
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

// ---- commands --------------------------------------------------------------

struct GenDataFlags {
  int n = 4000;
  std::uint64_t seed = 2024;
  int size = 32;
  std::string out;
};

int cmd_gen_data(const GenDataFlags& f) {
  const auto data = generate_dataset(f.n, f.seed, f.size);
  fs::create_directories(fs::path(f.out) / "images");
  fs::create_directories(fs::path(f.out) / "masks");
  std::ofstream index(fs::path(f.out) / "index.jsonl");
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    write_png(fs::path(f.out) / "images" / name, data[i].image);
    write_mask_png(fs::path(f.out) / "masks" / name, data[i].mask, f.size, f.size);
    EditCase c{name, data[i].attributes, {}, {}, data[i].caption, data[i].caption, {}};
    json line = c;
    index << json{{"image", std::string("images/") + name},
                  {"mask", std::string("masks/") + name},
                  {"caption", data[i].caption},
                  {"attributes", line["attributes"]}}
                 .dump()
          << '\n';
  }
  const json meta{{"schema_version", kConfigSchemaVersion},
                  {"n", f.n},
                  {"seed", f.seed},
                  {"image_size", f.size},
                  {"dataset_hash", dataset_hash(data)}};
  write_json_file(fs::path(f.out) / "dataset.json", meta);
  print_json(meta);
  return kOk;
}

struct TrainFlags {
  std::string config, out;
  std::optional<int> steps, batch, data_n;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed, model_seed, data_seed;
};

int cmd_train(const TrainFlags& f) {
  // Defaults reproduce the shipped checkpoint.
  ModelConfig mc;
  TrainConfig tc;
  tc.steps = 2500;
  tc.learning_rate = 6e-4;
  int data_n = 4000;
  std::uint64_t data_seed = 2024, model_seed = 7;
  if (!f.config.empty()) {
    const json j = read_json_file(f.config);
    check_schema(j);
    try {
      if (j.contains("model")) mc = j.at("model").get<ModelConfig>();
      if (j.contains("train")) from_json(j.at("train"), tc);
      if (j.contains("dataset")) {
        data_n = j.at("dataset").value("n", data_n);
        data_seed = j.at("dataset").value("seed", data_seed);
      }
      model_seed = j.value("model_seed", model_seed);
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad train config: ") + e.what());
    }
  }
  if (f.steps) tc.steps = *f.steps;
  if (f.batch) tc.batch_size = *f.batch;
  if (f.lr) tc.learning_rate = *f.lr;
  if (f.seed) tc.seed = *f.seed;
  if (f.model_seed) model_seed = *f.model_seed;
  if (f.data_n) data_n = *f.data_n;
  if (f.data_seed) data_seed = *f.data_seed;

  const auto data = generate_dataset(data_n, data_seed, mc.image_size);
  ToyMmdit model(mc, model_seed);
  std::cerr << "training " << model.parameter_count() << " parameters for " << tc.steps
            << " steps\n";
  const fs::path out = f.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream curve(out.string() + ".curve.csv");
  curve << "step,loss\n";
  const TrainResult r = train_toy(model, data, tc, [&](int step, double loss) {
    curve << step << ',' << loss << '\n';
    if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
  });
  TrainingManifest man;
  man.seed = model_seed;
  man.training_steps = tc.steps;
  man.dataset_hash = dataset_hash(data);
  man.extra["train_seed"] = std::to_string(tc.seed);
  man.extra["dataset_seed"] = std::to_string(data_seed);
  man.extra["dataset_size"] = std::to_string(data_n);
  man.extra["eval_loss_initial"] = std::to_string(r.eval_loss_initial);
  man.extra["eval_loss_final"] = std::to_string(r.eval_loss_final);
  save_checkpoint(out, model, man);
  json resolved{{"schema_version", kConfigSchemaVersion},
                {"model", mc},
                {"model_seed", model_seed},
                {"dataset", {{"n", data_n}, {"seed", data_seed}}},
                {"train", tc},
                {"eval_loss_initial", r.eval_loss_initial},
                {"eval_loss_final", r.eval_loss_final}};
  write_json_file(out.string() + ".train.json", resolved);
  print_json(resolved);
  return kOk;
}

struct RunFlags {
  std::string checkpoint = RFEDIT_DEFAULT_CHECKPOINT;
  std::string out;
  bool spill_cache = false;
};

int cmd_edit(const RunFlags& rf, const CaseFlags& cf, const EditFlags& ef) {
  EditConfig cfg = resolve_edit_config(ef);
  const EditCase c = resolve_case(cf, true);
  ModelHandle m = load_model(rf.checkpoint);
  cfg.model_seed = m.ckpt.manifest.seed;
  RunSpec spec{"edit", m.path, m.ckpt.sha256, c, cfg, rf.spill_cache};
  print_json(execute_run(spec, m.ckpt.model, rf.out));
  return kOk;
}

int cmd_reconstruct(const RunFlags& rf, const CaseFlags& cf, const EditFlags& ef) {
  EditConfig cfg = resolve_edit_config(ef);
  const EditCase c = resolve_case(cf, false);
  ModelHandle m = load_model(rf.checkpoint);
  cfg.model_seed = m.ckpt.manifest.seed;
  const auto& mc = m.ckpt.model.config();
  const CaseImage ci = load_case_image(c, mc.image_size);
  const LatentGrid rec = reconstruct(m.ckpt.model, ci.image, c.source_prompt, cfg);
  fs::create_directories(rf.out);
  json spec{{"schema_version", kConfigSchemaVersion},
            {"command", "reconstruct"},
            {"checkpoint", m.path.string()},
            {"checkpoint_sha256", m.ckpt.sha256},
            {"case", c},
            {"edit", cfg}};
  write_json_file(fs::path(rf.out) / "config.json", spec);
  write_png(fs::path(rf.out) / "source.png", ci.image);
  write_png(fs::path(rf.out) / "reconstructed.png", rec);
  const json metrics{{"psnr", psnr(rec, ci.image)}, {"ssim", ssim(rec, ci.image)}};
  write_json_file(fs::path(rf.out) / "metrics.json", metrics);
  write_json_file(fs::path(rf.out) / "manifest.json",
                  {{"status", "ok"},
                   {"group", "reconstruct"},
                   {"checkpoint", m.path.string()},
                   {"checkpoint_sha256", m.ckpt.sha256},
                   {"model_seed", cfg.model_seed}});
  print_json(metrics);
  return kOk;
}

int cmd_rerun(const std::string& dir, const std::string& out, const std::string& checkpoint) {
  const json j = read_json_file(fs::path(dir) / "config.json");
  RunSpec spec = j.get<RunSpec>();
  if (!checkpoint.empty()) spec.checkpoint = fs::absolute(checkpoint);
  ModelHandle m = load_model(spec.checkpoint.string());
  if (!spec.checkpoint_sha256.empty() && spec.checkpoint_sha256 != m.ckpt.sha256)
    throw CheckpointMismatch("checkpoint hash " + m.ckpt.sha256 + " differs from the recorded " +
                             spec.checkpoint_sha256);
  print_json(execute_run(spec, m.ckpt.model, out));
  return kOk;
}

struct StudyFlags {
  int cases = 20;
  std::string seeds = "1,2,3";
  int jobs = 1;
  std::string modes = "V,QV,QKV,KV";
};

int run_study(const RunFlags& rf, const StudyFlags& sf, const EditConfig& base,
              const std::vector<Variant>& variants) {
  ModelHandle m = load_model(rf.checkpoint);
  std::vector<RunSpec> specs;
  for (const auto& s : split_list(sf.seeds)) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(s);
    } catch (const std::logic_error&) {
      throw UsageError("bad seed '" + s + "'");
    }
    std::vector<Variant> seeded = variants;
    for (auto& v : seeded) {
      v.config.noise_seed = seed;
      v.config.model_seed = m.ckpt.manifest.seed;
    }
    const auto cases = make_color_edit_cases(sf.cases, seed, m.ckpt.model.config().image_size);
    auto more = study_specs(seeded, cases, m.path, m.ckpt.sha256);
    specs.insert(specs.end(), more.begin(), more.end());
  }
  (void)base;
  std::vector<std::function<void()>> jobs;
  for (const auto& spec : specs)
    jobs.push_back([&, spec] { execute_run(spec, m.ckpt.model, study_dir(rf.out, spec)); });
  const int failed = run_jobs(jobs, sf.jobs);
  const Report rep = aggregate_runs({rf.out});
  const std::string table = format_report(rep);
  std::cout << table;
  std::ofstream(fs::path(rf.out) / "report.txt") << table;
  write_json_file(fs::path(rf.out) / "report.json", report_json(rep));
  if (failed) {
    std::cerr << failed << " job(s) failed\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& roots, bool allow_mixed, const std::string& out) {
  std::vector<fs::path> paths(roots.begin(), roots.end());
  const Report rep = aggregate_runs(paths, allow_mixed);
  std::cout << format_report(rep);
  if (!out.empty()) write_json_file(out, report_json(rep));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rectified-flow image editing toolkit"};
  app.require_subcommand(1);

  GenDataFlags gf;
  auto* gen = app.add_subcommand("gen-data", "render the captioned shapes dataset");
  gen->add_option("--n", gf.n, "number of samples");
  gen->add_option("--seed", gf.seed, "dataset seed");
  gen->add_option("--size", gf.size, "image size in pixels");
  gen->add_option("--out", gf.out, "output directory")->required();

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train the toy model");
  train->add_option("--config", tf.config, "JSON training config");
  train->add_option("--steps", tf.steps, "optimizer steps");
  train->add_option("--batch", tf.batch, "batch size");
  train->add_option("--lr", tf.lr, "peak learning rate");
  train->add_option("--seed", tf.seed, "training seed");
  train->add_option("--model-seed", tf.model_seed, "initialization seed");
  train->add_option("--data-n", tf.data_n, "dataset size");
  train->add_option("--data-seed", tf.data_seed, "dataset seed");
  train->add_option("--out", tf.out, "checkpoint path")->required();

  RunFlags rf;
  CaseFlags cf;
  EditFlags ef;
  auto* edit_cmd = app.add_subcommand("edit", "edit one image into a run directory");
  auto* recon = app.add_subcommand("reconstruct", "invert and resample one image");
  for (auto* sub : {edit_cmd, recon}) {
    sub->add_option("--checkpoint", rf.checkpoint, "model checkpoint");
    sub->add_option("--out", rf.out, "run directory")->required();
    add_edit_flags(sub, ef);
    add_case_flags(sub, cf, sub == edit_cmd);
  }
  edit_cmd->add_flag("--spill-cache", rf.spill_cache, "write the source K/V cache to the run");

  std::string rerun_dir, rerun_checkpoint;
  auto* rerun = app.add_subcommand("rerun", "re-execute a run directory's config");
  rerun->add_option("run", rerun_dir, "existing run directory")->required();
  rerun->add_option("--out", rf.out, "new run directory")->required();
  rerun->add_option("--checkpoint", rerun_checkpoint, "use this checkpoint path instead");

  StudyFlags sf;
  auto* ablate = app.add_subcommand("ablate", "none / KV-mix / LS / KV-mix+LS over color edits");
  auto* sweep = app.add_subcommand("sweep", "one KV-mix row per attention combination");
  for (auto* sub : {ablate, sweep}) {
    sub->add_option("--checkpoint", rf.checkpoint, "model checkpoint");
    sub->add_option("--out", rf.out, "study root directory")->required();
    sub->add_option("--cases", sf.cases, "color-edit cases per seed");
    sub->add_option("--seeds", sf.seeds, "comma-separated case/noise seeds");
    sub->add_option("--jobs", sf.jobs, "worker processes");
    add_edit_flags(sub, ef);
  }
  sweep->add_option("--modes", sf.modes, "comma-separated modes out of V,QV,QKV,KV");

  std::vector<std::string> report_roots;
  bool allow_mixed = false;
  std::string report_out;
  auto* report = app.add_subcommand("report", "aggregate run directories into a table");
  report->add_option("roots", report_roots, "run directories or study roots")->required();
  report->add_flag("--allow-mixed-checkpoints", allow_mixed, "aggregate across checkpoints");
  report->add_option("--json", report_out, "also write the table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return e.get_exit_code() == 0 ? code : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gf);
    if (*train) return cmd_train(tf);
    if (*edit_cmd) return cmd_edit(rf, cf, ef);
    if (*recon) return cmd_reconstruct(rf, cf, ef);
    if (*rerun) return cmd_rerun(rerun_dir, rf.out, rerun_checkpoint);
    if (*ablate) {
      const EditConfig base = resolve_edit_config(ef);
      return run_study(rf, sf, base, ablation_variants(base));
    }
    if (*sweep) {
      const EditConfig base = resolve_edit_config(ef);
      std::vector<AttentionMode> modes;
      try {
        for (const auto& s : split_list(sf.modes)) modes.push_back(parse_attention_mode(s));
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      return run_study(rf, sf, base, mode_variants(base, modes));
    }
    if (*report) return cmd_report(report_roots, allow_mixed, report_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingCheckpoint;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMismatch;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
