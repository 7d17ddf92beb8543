#include "rfedit/config_io.hpp"

#include <fstream>
#include <set>

#include "rfedit/error.hpp"

namespace rfedit {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError(std::string("unknown ") + what + " key '" + key + "'");
}

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad value for '") + key + "': " + e.what());
  }
}

// Parses an enum through its string parser, turning InvalidArgument into
// FormatError.
template <class E, class Parse>
void read_enum(const json& j, const char* key, E& out, Parse parse) {
  if (!j.contains(key)) return;
  std::string s;
  read_field(j, key, s);
  try {
    out = parse(s);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void to_json(json& j, const EditConfig& c) {
  j = json{{"schema_version", kConfigSchemaVersion},
           {"num_steps", c.num_steps},
           {"delta", c.delta},
           {"beta", c.beta},
           {"attention_mode", to_string(c.schedule.mode)},
           {"injection_steps", c.schedule.steps ? json(*c.schedule.steps) : json(nullptr)},
           {"inject_double", c.schedule.double_blocks},
           {"inject_single", c.schedule.single_blocks},
           {"threshold",
            {{"k", c.threshold.k},
             {"dilation_steps", c.threshold.dilation_steps},
             {"head_reduction", to_string(c.threshold.head_reduction)},
             {"token_reduction", to_string(c.threshold.token_reduction)},
             {"direction", to_string(c.threshold.direction)}}},
           {"solver", to_string(c.solver)},
           {"noise_seed", c.noise_seed},
           {"model_seed", c.model_seed},
           {"kvmix", c.kvmix_on},
           {"latents_shift", c.latents_shift_on},
           {"baseline_mode", c.baseline_mode ? to_string(*c.baseline_mode) : "none"},
           {"mask_source", to_string(c.mask_source)},
           {"edit_words", c.edit_words},
           {"moment_scope", to_string(c.moment_scope)},
           {"epsilon", c.epsilon},
           {"with_reconstruction", c.with_reconstruction}};
}

void from_json(const json& j, EditConfig& c) {
  reject_unknown(j,
                 {"schema_version", "num_steps", "delta", "beta", "attention_mode",
                  "injection_steps", "inject_double", "inject_single", "threshold", "solver",
                  "noise_seed", "model_seed", "kvmix", "latents_shift", "baseline_mode",
                  "mask_source", "edit_words", "moment_scope", "epsilon", "with_reconstruction"},
                 "edit config");
  if (j.contains("schema_version")) check_schema(j);
  read_field(j, "num_steps", c.num_steps);
  read_field(j, "delta", c.delta);
  read_field(j, "beta", c.beta);
  read_enum(j, "attention_mode", c.schedule.mode, parse_attention_mode);
  if (j.contains("injection_steps")) {
    if (j.at("injection_steps").is_null())
      c.schedule.steps.reset();
    else {
      std::vector<int> steps;
      read_field(j, "injection_steps", steps);
      c.schedule.steps = steps;
    }
  }
  read_field(j, "inject_double", c.schedule.double_blocks);
  read_field(j, "inject_single", c.schedule.single_blocks);
  if (j.contains("threshold")) {
    const json& t = j.at("threshold");
    reject_unknown(t, {"k", "dilation_steps", "head_reduction", "token_reduction", "direction"},
                   "threshold");
    read_field(t, "k", c.threshold.k);
    read_field(t, "dilation_steps", c.threshold.dilation_steps);
    read_enum(t, "head_reduction", c.threshold.head_reduction, parse_reduction);
    read_enum(t, "token_reduction", c.threshold.token_reduction, parse_reduction);
    read_enum(t, "direction", c.threshold.direction, parse_direction);
  }
  read_enum(j, "solver", c.solver, parse_solver);
  read_field(j, "noise_seed", c.noise_seed);
  read_field(j, "model_seed", c.model_seed);
  read_field(j, "kvmix", c.kvmix_on);
  read_field(j, "latents_shift", c.latents_shift_on);
  if (j.contains("baseline_mode")) {
    std::string s;
    read_field(j, "baseline_mode", s);
    if (s == "none")
      c.baseline_mode.reset();
    else
      read_enum(j, "baseline_mode", c.baseline_mode.emplace(), parse_attention_mode);
  }
  read_enum(j, "mask_source", c.mask_source, parse_mask_source);
  read_field(j, "edit_words", c.edit_words);
  read_enum(j, "moment_scope", c.moment_scope, parse_moment_scope);
  read_field(j, "epsilon", c.epsilon);
  read_field(j, "with_reconstruction", c.with_reconstruction);
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid edit config: ") + e.what());
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"steps", c.steps},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"warmup_steps", c.warmup_steps},
           {"final_lr_fraction", c.final_lr_fraction},
           {"grad_clip", c.grad_clip},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed},
           {"eval_batch", c.eval_batch}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"steps", "batch_size", "learning_rate", "warmup_steps", "final_lr_fraction",
                  "grad_clip", "adam_beta1", "adam_beta2", "adam_eps", "seed", "eval_batch"},
                 "train config");
  read_field(j, "steps", c.steps);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "warmup_steps", c.warmup_steps);
  read_field(j, "final_lr_fraction", c.final_lr_fraction);
  read_field(j, "grad_clip", c.grad_clip);
  read_field(j, "adam_beta1", c.adam_beta1);
  read_field(j, "adam_beta2", c.adam_beta2);
  read_field(j, "adam_eps", c.adam_eps);
  read_field(j, "seed", c.seed);
  read_field(j, "eval_batch", c.eval_batch);
}

void check_schema(const json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw FormatError("config lacks 'schema_version'");
  if (!j.at("schema_version").is_number_integer() ||
      j.at("schema_version").get<int>() != kConfigSchemaVersion)
    throw FormatError("unsupported config schema_version (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
}

json read_json_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw std::filesystem::filesystem_error("config not found", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace rfedit
