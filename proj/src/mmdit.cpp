#include "rfedit/mmdit.hpp"

#include <cmath>
#include <numbers>

#include "rfedit/error.hpp"

namespace rfedit {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw InvalidArgument(std::string("ModelConfig: ") + name + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(channels, "channels");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(vocab_size, "vocab_size");
  positive(max_text_tokens, "max_text_tokens");
  positive(time_embed_dim, "time_embed_dim");
  positive(mlp_ratio, "mlp_ratio");
  if (num_double_blocks < 1)
    throw InvalidArgument("ModelConfig: at least one double block is required");
  if (num_single_blocks < 0) throw InvalidArgument("ModelConfig: negative single block count");
  if (image_size % patch_size != 0)
    throw InvalidArgument("ModelConfig: image_size not divisible by patch_size");
  if (hidden_dim % num_heads != 0)
    throw InvalidArgument("ModelConfig: hidden_dim not divisible by num_heads");
  if (hidden_dim % 4 != 0) throw InvalidArgument("ModelConfig: hidden_dim must be a multiple of 4");
  if (time_embed_dim % 2 != 0) throw InvalidArgument("ModelConfig: odd time_embed_dim");
}

template <class T>
ad::Matrix<T> patchify(const LatentGrid& image, int p) {
  const GridShape s = image.shape();
  if (p < 1 || s.height % p != 0 || s.width % p != 0)
    throw ShapeError("patchify: image " + s.str() + " not divisible by patch " + std::to_string(p));
  const int gh = s.height / p, gw = s.width / p;
  ad::Matrix<T> out(gh * gw, s.channels * p * p);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      for (int c = 0; c < s.channels; ++c)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            out(gy * gw + gx, (c * p + py) * p + px) =
                static_cast<T>(image.at(c, gy * p + py, gx * p + px));
  return out;
}

template <class T>
LatentGrid unpatchify(const ad::Matrix<T>& tokens, GridShape s, int p) {
  if (p < 1 || s.height % p != 0 || s.width % p != 0)
    throw ShapeError("unpatchify: shape " + s.str() + " not divisible by patch " + std::to_string(p));
  const int gh = s.height / p, gw = s.width / p;
  if (tokens.rows() != gh * gw || tokens.cols() != s.channels * p * p)
    throw ShapeError("unpatchify: token matrix does not match shape " + s.str());
  LatentGrid out(s);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      for (int c = 0; c < s.channels; ++c)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            out.at(c, gy * p + py, gx * p + px) =
                static_cast<double>(tokens(gy * gw + gx, (c * p + py) * p + px));
  return out;
}

std::vector<double> timestep_embedding(double t, int dim) {
  const int half = dim / 2;
  std::vector<double> out(dim, 0.0);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = t * 1000.0 * freq;
    out[i] = std::cos(arg);
    out[half + i] = std::sin(arg);
  }
  return out;
}

namespace {

// 1-D sinusoidal table for positions [0, n) with `dim` features (sin half, cos half).
std::vector<double> sincos_1d(int pos, int dim) {
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int i = 0; i < half; ++i) {
    const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / half);
    out[i] = std::sin(pos * omega);
    out[half + i] = std::cos(pos * omega);
  }
  return out;
}

template <class T>
ad::Matrix<T> sincos_2d(int grid, int dim) {
  ad::Matrix<T> out(grid * grid, dim);
  const int half = dim / 2;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      const auto ey = sincos_1d(gy, half);
      const auto ex = sincos_1d(gx, half);
      for (int i = 0; i < half; ++i) {
        out(gy * grid + gx, i) = static_cast<T>(ey[i]);
        out(gy * grid + gx, half + i) = static_cast<T>(ex[i]);
      }
    }
  return out;
}

template <class T>
Features to_features(const ad::Matrix<T>& m, Eigen::Index row, Eigen::Index count) {
  return m.middleRows(row, count).template cast<double>();
}

}  // namespace

template <class T>
ad::Var<T> Mmdit<T>::make_param(const std::string& name, ad::Matrix<T> value) {
  auto v = ad::parameter<T>(std::move(value));
  params_.push_back({name, v});
  return v;
}

template <class T>
typename Mmdit<T>::Linear Mmdit<T>::make_linear(const std::string& name, int in, int out,
                                                bool zero, Rng& rng) {
  ad::Matrix<T> w = ad::Matrix<T>::Zero(in, out);
  if (!zero) {
    const double std = std::sqrt(2.0 / (in + out));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(std * rng.normal());
  }
  Linear l;
  l.w = make_param(name + ".weight", std::move(w));
  l.b = make_param(name + ".bias", ad::Matrix<T>::Zero(1, out));
  return l;
}

template <class T>
Mmdit<T>::Mmdit(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int D = config_.hidden_dim;
  const int hidden = D * config_.mlp_ratio;
  img_in_ = make_linear("img_in", config_.patch_dim(), D, false, rng);
  {
    ad::Matrix<T> e(config_.vocab_size, D);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<T>(0.02 * rng.normal());
    txt_embed_ = make_param("txt_embed", std::move(e));
    ad::Matrix<T> p(config_.max_text_tokens, D);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<T>(0.02 * rng.normal());
    txt_pos_ = make_param("txt_pos", std::move(p));
  }
  time_in_ = make_linear("time_in", config_.time_embed_dim, D, false, rng);
  time_out_ = make_linear("time_out", D, D, false, rng);
  for (int i = 0; i < config_.num_double_blocks; ++i) {
    const std::string base = "double." + std::to_string(i) + ".";
    DoubleBlock blk;
    for (auto [stream, tag] : {std::pair{&blk.img, "img"}, std::pair{&blk.txt, "txt"}}) {
      const std::string n = base + tag + ".";
      stream->mod = make_linear(n + "mod", D, 6 * D, true, rng);
      stream->qkv = make_linear(n + "qkv", D, 3 * D, false, rng);
      stream->proj = make_linear(n + "proj", D, D, false, rng);
      stream->mlp_in = make_linear(n + "mlp_in", D, hidden, false, rng);
      stream->mlp_out = make_linear(n + "mlp_out", hidden, D, false, rng);
    }
    doubles_.push_back(std::move(blk));
  }
  for (int i = 0; i < config_.num_single_blocks; ++i) {
    const std::string n = "single." + std::to_string(i) + ".";
    SingleBlock blk;
    blk.mod = make_linear(n + "mod", D, 3 * D, true, rng);
    blk.fused_in = make_linear(n + "fused_in", D, 3 * D + hidden, false, rng);
    blk.out = make_linear(n + "out", D + hidden, D, false, rng);
    singles_.push_back(std::move(blk));
  }
  final_mod_ = make_linear("final.mod", D, 2 * D, true, rng);
  final_out_ = make_linear("final.out", D, config_.patch_dim(), true, rng);
  visual_pos_ = sincos_2d<T>(config_.grid(), D);
}

template <class T>
std::size_t Mmdit<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var->value.size());
  return n;
}

template <class T>
void Mmdit<T>::zero_grad() {
  for (auto& p : params_) p.var->zero_grad();
}

template <class T>
void Mmdit<T>::load_values(const std::map<std::string, ad::Matrix<float>>& values) {
  if (values.size() != params_.size())
    throw FormatError("parameter count mismatch: expected " + std::to_string(params_.size()) +
                      ", got " + std::to_string(values.size()));
  for (auto& p : params_) {
    auto it = values.find(p.name);
    if (it == values.end()) throw FormatError("missing parameter " + p.name);
    if (it->second.rows() != p.var->value.rows() || it->second.cols() != p.var->value.cols())
      throw FormatError("shape mismatch for parameter " + p.name);
    p.var->value = it->second.template cast<T>();
  }
}

template <class T>
std::map<std::string, ad::Matrix<float>> Mmdit<T>::values() const {
  std::map<std::string, ad::Matrix<float>> out;
  for (const auto& p : params_) out.emplace(p.name, p.var->value.template cast<float>());
  return out;
}

template <class T>
template <class U>
Mmdit<U> Mmdit<T>::cast() const {
  Mmdit<U> out(config_, 0);
  const auto& dst = out.params();
  for (std::size_t i = 0; i < params_.size(); ++i)
    dst[i].var->value = params_[i].var->value.template cast<U>();
  return out;
}

template <class T>
ad::Var<T> Mmdit<T>::attend(const ad::Var<T>& q, const ad::Var<T>& k, const ad::Var<T>& v,
                            int batch, const EvalContext& ctx, double t, int layer,
                            BlockKind kind) const {
  const int L = config_.max_text_tokens;
  const int N = config_.visual_tokens();
  const int S = L + N;
  if (!ctx.controller) return ad::attention(q, k, v, batch, S, config_.num_heads);
  if (batch != 1) throw InvalidArgument("attention controllers require batch size 1");
  if (ad::grad_enabled())
    throw InvalidArgument("attention controllers require gradient recording to be off");

  AttentionSite site;
  site.phase = ctx.phase;
  site.step_index = ctx.step_index;
  site.t = t;
  site.interval_start = ctx.interval_start;
  site.canonical = ctx.canonical;
  site.layer_index = layer;
  site.kind = kind;
  site.num_heads = config_.num_heads;
  site.text_tokens = L;
  site.visual_tokens = N;

  const Features q_text = to_features(q->value, 0, L);
  const Features k_text = to_features(k->value, 0, L);
  const Features v_text = to_features(v->value, 0, L);
  AttentionTensors tensors{q_text, k_text, v_text, to_features(q->value, L, N),
                           to_features(k->value, L, N), to_features(v->value, L, N)};
  const int heads = config_.num_heads;
  AttentionProbe probe([q, k, heads] {
    return attention_probabilities(q->value.template cast<double>(),
                                   k->value.template cast<double>(), heads);
  });
  ctx.controller->on_attention(site, tensors, probe);
  probe.expire();

  auto check = [&](const Features& f, const char* which) {
    if (f.rows() != N || f.cols() != config_.hidden_dim)
      throw ShapeError("controller returned mis-shaped visual " + std::string(which) + " at " +
                       site.str());
  };
  check(tensors.q_visual, "Q");
  check(tensors.k_visual, "K");
  check(tensors.v_visual, "V");

  auto rebuild = [&](const ad::Var<T>& src, const Features& visual) {
    ad::Matrix<T> m = src->value;
    m.middleRows(L, N) = visual.template cast<T>();
    return ad::constant<T>(std::move(m));
  };
  return ad::attention(rebuild(q, tensors.q_visual), rebuild(k, tensors.k_visual),
                       rebuild(v, tensors.v_visual), 1, S, heads);
}

template <class T>
ad::Var<T> Mmdit<T>::forward_tokens(const ad::Matrix<T>& image_tokens,
                                    const std::vector<double>& times,
                                    const std::vector<TokenIds>& texts,
                                    const EvalContext& ctx) const {
  const int B = static_cast<int>(times.size());
  const int L = config_.max_text_tokens;
  const int N = config_.visual_tokens();
  const int S = L + N;
  const int D = config_.hidden_dim;
  const int hidden = D * config_.mlp_ratio;
  if (B < 1 || static_cast<int>(texts.size()) != B)
    throw ShapeError("forward: times and texts must have the same positive length");
  if (image_tokens.rows() != static_cast<Eigen::Index>(B) * N ||
      image_tokens.cols() != config_.patch_dim())
    throw ShapeError("forward: image tokens do not match the model configuration");

  std::vector<int> ids, positions;
  ids.reserve(static_cast<std::size_t>(B) * L);
  for (const auto& text : texts) {
    if (text.width() != L)
      throw ShapeError("forward: text width " + std::to_string(text.width()) + " != " +
                       std::to_string(L));
    for (int id : text.ids) {
      if (id < 0 || id >= config_.vocab_size)
        throw InvalidArgument("forward: token id " + std::to_string(id) + " outside vocabulary");
      ids.push_back(id);
    }
    for (int i = 0; i < L; ++i) positions.push_back(i);
  }

  ad::Matrix<T> temb(B, config_.time_embed_dim);
  ad::Matrix<T> pos(static_cast<Eigen::Index>(B) * N, D);
  for (int b = 0; b < B; ++b) {
    const auto e = timestep_embedding(times[b], config_.time_embed_dim);
    for (int i = 0; i < config_.time_embed_dim; ++i) temb(b, i) = static_cast<T>(e[i]);
    pos.middleRows(static_cast<Eigen::Index>(b) * N, N) = visual_pos_;
  }

  auto lin = [](const ad::Var<T>& x, const Linear& l) { return ad::linear(x, l.w, l.b); };
  auto chunk = [D](const ad::Var<T>& m, int i) { return ad::slice_cols(m, i * D, D); };

  ad::Var<T> img = ad::add(lin(ad::constant<T>(image_tokens), img_in_), ad::constant<T>(pos));
  ad::Var<T> txt =
      ad::add(ad::embedding(txt_embed_, std::span<const int>(ids)),
              ad::embedding(txt_pos_, std::span<const int>(positions)));
  const ad::Var<T> cond =
      ad::silu(lin(ad::silu(lin(ad::constant<T>(std::move(temb)), time_in_)), time_out_));

  const double t_site = times.front();
  for (int li = 0; li < static_cast<int>(doubles_.size()); ++li) {
    const DoubleBlock& blk = doubles_[li];
    const auto mi = lin(cond, blk.img.mod);
    const auto mt = lin(cond, blk.txt.mod);
    const auto qkv_i = lin(ad::modulate(ad::layer_norm(img), chunk(mi, 0), chunk(mi, 1), N), blk.img.qkv);
    const auto qkv_t = lin(ad::modulate(ad::layer_norm(txt), chunk(mt, 0), chunk(mt, 1), L), blk.txt.qkv);
    const auto q = ad::join_streams(chunk(qkv_t, 0), chunk(qkv_i, 0), B);
    const auto k = ad::join_streams(chunk(qkv_t, 1), chunk(qkv_i, 1), B);
    const auto v = ad::join_streams(chunk(qkv_t, 2), chunk(qkv_i, 2), B);
    const auto att = attend(q, k, v, B, ctx, t_site, li, BlockKind::double_block);
    const auto att_t = ad::take_rows(att, B, S, 0, L);
    const auto att_i = ad::take_rows(att, B, S, L, N);

    img = ad::gated_residual(img, lin(att_i, blk.img.proj), chunk(mi, 2), N);
    img = ad::gated_residual(
        img,
        lin(ad::gelu(lin(ad::modulate(ad::layer_norm(img), chunk(mi, 3), chunk(mi, 4), N),
                         blk.img.mlp_in)),
            blk.img.mlp_out),
        chunk(mi, 5), N);
    txt = ad::gated_residual(txt, lin(att_t, blk.txt.proj), chunk(mt, 2), L);
    txt = ad::gated_residual(
        txt,
        lin(ad::gelu(lin(ad::modulate(ad::layer_norm(txt), chunk(mt, 3), chunk(mt, 4), L),
                         blk.txt.mlp_in)),
            blk.txt.mlp_out),
        chunk(mt, 5), L);
  }

  ad::Var<T> x = ad::join_streams(txt, img, B);
  for (int li = 0; li < static_cast<int>(singles_.size()); ++li) {
    const SingleBlock& blk = singles_[li];
    const auto m = lin(cond, blk.mod);
    const auto f = lin(ad::modulate(ad::layer_norm(x), chunk(m, 0), chunk(m, 1), S), blk.fused_in);
    const auto att = attend(chunk(f, 0), chunk(f, 1), chunk(f, 2), B, ctx, t_site, li,
                            BlockKind::single_block);
    const auto mlp = ad::gelu(ad::slice_cols(f, 3 * D, hidden));
    x = ad::gated_residual(x, lin(ad::concat_cols(att, mlp), blk.out), chunk(m, 2), S);
  }

  const auto out_img = ad::take_rows(x, B, S, L, N);
  const auto fm = lin(cond, final_mod_);
  return lin(ad::modulate(ad::layer_norm(out_img), chunk(fm, 0), chunk(fm, 1), N), final_out_);
}

template <class T>
ad::Var<T> Mmdit<T>::loss(const ad::Matrix<T>& noisy_tokens, const std::vector<double>& times,
                          const std::vector<TokenIds>& texts,
                          const ad::Matrix<T>& target_tokens) const {
  return ad::mse(forward_tokens(noisy_tokens, times, texts), target_tokens);
}

template <class T>
LatentGrid Mmdit<T>::evaluate(const LatentGrid& state, double t, const TokenIds& condition,
                              const EvalContext& ctx) const {
  if (state.shape() != config_.image_shape())
    throw ShapeError("model input " + state.shape().str() + " does not match configured " +
                     config_.image_shape().str());
  ad::NoGradGuard no_grad;
  const auto tokens = patchify<T>(state, config_.patch_size);
  const auto out = forward_tokens(tokens, {t}, {condition}, ctx);
  return unpatchify<T>(out->value, state.shape(), config_.patch_size);
}

template ad::Matrix<float> patchify<float>(const LatentGrid&, int);
template ad::Matrix<double> patchify<double>(const LatentGrid&, int);
template LatentGrid unpatchify<float>(const ad::Matrix<float>&, GridShape, int);
template LatentGrid unpatchify<double>(const ad::Matrix<double>&, GridShape, int);
template class Mmdit<float>;
template class Mmdit<double>;
template Mmdit<double> Mmdit<float>::cast<double>() const;
template Mmdit<float> Mmdit<double>::cast<float>() const;
template Mmdit<float> Mmdit<float>::cast<float>() const;

}  // namespace rfedit
