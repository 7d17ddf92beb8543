#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rfedit/autograd.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/rng.hpp"

namespace rfedit {

struct ModelConfig {
  int image_size = 32;
  int patch_size = 4;
  int channels = 3;
  int hidden_dim = 128;
  int num_heads = 4;
  int num_double_blocks = 4;
  int num_single_blocks = 4;
  int vocab_size = 64;
  int max_text_tokens = kDefaultMaxTextTokens;
  int time_embed_dim = 64;
  int mlp_ratio = 4;

  /// Throws InvalidArgument on inconsistent sizes.
  void validate() const;
  int grid() const { return image_size / patch_size; }
  int visual_tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int seq_len() const { return max_text_tokens + visual_tokens(); }
  GridShape image_shape() const { return {channels, image_size, image_size}; }
  bool operator==(const ModelConfig&) const = default;
};

/// (C, H, W) -> ((H/p)(W/p)) x (C p p) token rows, row = gy * (W/p) + gx,
/// column = (c * p + py) * p + px.
template <class T>
ad::Matrix<T> patchify(const LatentGrid& image, int patch_size);
template <class T>
LatentGrid unpatchify(const ad::Matrix<T>& tokens, GridShape shape, int patch_size);

template <class T>
struct NamedParam {
  std::string name;
  ad::Var<T> var;
};

/// Toy multimodal diffusion transformer: Double blocks with separate
/// text/visual weights and joint attention, followed by Single blocks over the
/// concatenated [text; visual] stream. Conditioning on t is through adaLN
/// scale/shift/gate vectors. Text reaches the image only through attention.
template <class T>
class Mmdit final : public VelocityModel {
 public:
  /// Random initialization; modulation and output layers start at zero.
  Mmdit(const ModelConfig& config, std::uint64_t seed);
  Mmdit(Mmdit&&) noexcept = default;
  Mmdit& operator=(Mmdit&&) noexcept = default;
  // Parameters are shared_ptr nodes; copying would alias them.
  Mmdit(const Mmdit&) = delete;
  Mmdit& operator=(const Mmdit&) = delete;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  /// Replaces every parameter value; names and shapes must match exactly.
  void load_values(const std::map<std::string, ad::Matrix<float>>& values);
  std::map<std::string, ad::Matrix<float>> values() const;
  template <class U>
  Mmdit<U> cast() const;

  /// Batched forward in token space. `image_tokens` is (B * N) x patch_dim,
  /// `times` and `texts` have B entries. Returns (B * N) x patch_dim velocity
  /// tokens. A controller in `ctx` requires B == 1 and gradient recording off.
  ad::Var<T> forward_tokens(const ad::Matrix<T>& image_tokens, const std::vector<double>& times,
                            const std::vector<TokenIds>& texts, const EvalContext& ctx = {}) const;

  /// Training loss for a batch: mean squared error between predicted and
  /// target velocity tokens. Differentiable in every parameter.
  ad::Var<T> loss(const ad::Matrix<T>& noisy_tokens, const std::vector<double>& times,
                  const std::vector<TokenIds>& texts, const ad::Matrix<T>& target_tokens) const;

  LatentGrid evaluate(const LatentGrid& state, double t, const TokenIds& condition,
                      const EvalContext& ctx) const override;

 private:
  struct Linear {
    ad::Var<T> w, b;
  };
  struct Stream {
    Linear mod, qkv, proj, mlp_in, mlp_out;
  };
  struct DoubleBlock {
    Stream img, txt;
  };
  struct SingleBlock {
    Linear mod, fused_in, out;
  };

  Linear make_linear(const std::string& name, int in, int out, bool zero, Rng& rng);
  ad::Var<T> make_param(const std::string& name, ad::Matrix<T> value);
  ad::Var<T> attend(const ad::Var<T>& q, const ad::Var<T>& k, const ad::Var<T>& v, int batch,
                    const EvalContext& ctx, double t, int layer, BlockKind kind) const;

  ModelConfig config_;
  std::vector<NamedParam<T>> params_;
  Linear img_in_, time_in_, time_out_, final_mod_, final_out_;
  ad::Var<T> txt_embed_, txt_pos_;
  std::vector<DoubleBlock> doubles_;
  std::vector<SingleBlock> singles_;
  ad::Matrix<T> visual_pos_;  // N x D, fixed 2-D sinusoidal
};

using ToyMmdit = Mmdit<float>;

/// Sinusoidal embedding of t * 1000 with `dim` features (cos half, sin half).
std::vector<double> timestep_embedding(double t, int dim);

}  // namespace rfedit
