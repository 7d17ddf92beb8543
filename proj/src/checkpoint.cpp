#include "rfedit/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rfedit/error.hpp"

namespace rfedit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {
constexpr char kMagic[8] = {'R', 'F', 'E', 'D', 'I', 'T', 'C', 'K'};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"patch_size", c.patch_size},
                     {"channels", c.channels},
                     {"hidden_dim", c.hidden_dim},
                     {"num_heads", c.num_heads},
                     {"num_double_blocks", c.num_double_blocks},
                     {"num_single_blocks", c.num_single_blocks},
                     {"vocab_size", c.vocab_size},
                     {"max_text_tokens", c.max_text_tokens},
                     {"time_embed_dim", c.time_embed_dim},
                     {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.channels = j.value("channels", d.channels);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.num_double_blocks = j.value("num_double_blocks", d.num_double_blocks);
  c.num_single_blocks = j.value("num_single_blocks", d.num_single_blocks);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_text_tokens = j.value("max_text_tokens", d.max_text_tokens);
  c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".manifest.txt";
}

void write_manifest(const std::filesystem::path& path, const TrainingManifest& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << "seed: " << m.seed << "\n";
  out << "training_steps: " << m.training_steps << "\n";
  out << "dataset_hash: " << m.dataset_hash << "\n";
  for (const auto& [k, v] : m.extra) out << k << ": " << v << "\n";
}

TrainingManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest " + path.string());
  TrainingManifest m;
  for (std::string line; std::getline(in, line);) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    if (key == "seed")
      m.seed = std::stoull(value);
    else if (key == "training_steps")
      m.training_steps = std::stoll(value);
    else if (key == "dataset_hash")
      m.dataset_hash = value;
    else
      m.extra[key] = value;
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const ToyMmdit& model,
                     const TrainingManifest& manifest, const Vocabulary& vocab) {
  nlohmann::json header;
  header["format"] = "rfedit-checkpoint";
  header["version"] = kCheckpointVersion;
  header["dtype"] = "float32";
  header["model_config"] = model.config();
  header["vocabulary"] = vocab.words();
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.params()) {
    const auto rows = p.var->value.rows(), cols = p.var->value.cols();
    table.push_back({{"name", p.name}, {"rows", rows}, {"cols", cols}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(rows * cols) * sizeof(float);
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params())
    out.write(reinterpret_cast<const char*>(p.var->value.data()),
              static_cast<std::streamsize>(p.var->value.size() * sizeof(float)));
  if (!out) throw Error("short write on checkpoint " + path.string());
  out.close();

  TrainingManifest m = manifest;
  m.extra["parameter_count"] = std::to_string(model.parameter_count());
  m.extra["checkpoint_sha256"] = sha256_file(path);
  write_manifest(manifest_path(path), m);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw std::filesystem::filesystem_error("checkpoint not found", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path.string() + ": not a checkpoint file");
  std::uint32_t version;
  std::uint64_t header_len;
  std::memcpy(&version, bytes.data() + 8, sizeof(version));
  std::memcpy(&header_len, bytes.data() + 12, sizeof(header_len));
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < prefix + header_len) throw FormatError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(prefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  const std::size_t payload = prefix + header_len;

  ModelConfig config = header.at("model_config").get<ModelConfig>();
  std::map<std::string, ad::Matrix<float>> tensors;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const std::size_t nbytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
    if (payload + offset + nbytes > bytes.size())
      throw FormatError(path.string() + ": tensor " + t.at("name").get<std::string>() +
                        " runs past end of file");
    ad::Matrix<float> m(rows, cols);
    std::memcpy(m.data(), bytes.data() + payload + offset, nbytes);
    tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  LoadedCheckpoint out{ToyMmdit(config, 0), header.at("vocabulary").get<std::vector<std::string>>(),
                       {}, sha256_hex(bytes.data(), bytes.size())};
  out.model.load_values(tensors);
  if (std::filesystem::exists(manifest_path(path))) out.manifest = read_manifest(manifest_path(path));
  return out;
}

std::string sha256_hex(const void* data, std::size_t size) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace rfedit
