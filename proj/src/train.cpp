#include "rfedit/train.hpp"

#include <cmath>
#include <numbers>

#include "rfedit/error.hpp"

namespace rfedit {

FlowBatch make_flow_batch(const std::vector<ShapesSample>& data, const std::vector<int>& indices,
                          const ModelConfig& config, Rng& rng) {
  const int N = config.visual_tokens();
  const int P = config.patch_dim();
  FlowBatch b;
  b.noisy.resize(static_cast<Eigen::Index>(indices.size()) * N, P);
  b.target.resize(b.noisy.rows(), P);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const ShapesSample& s = data.at(indices[i]);
    const double t = rng.uniform();
    LatentGrid z0(s.image.shape());
    for (double& v : z0.values()) v = rng.normal();
    const LatentGrid zt = interpolate(z0, s.image, t);
    const auto row = static_cast<Eigen::Index>(i) * N;
    b.noisy.middleRows(row, N) = patchify<float>(zt, config.patch_size);
    b.target.middleRows(row, N) = patchify<float>(s.image - z0, config.patch_size);
    b.times.push_back(t);
    b.texts.push_back(tokenize(s.caption, config.max_text_tokens));
  }
  return b;
}

double evaluate_loss(const ToyMmdit& model, const FlowBatch& batch) {
  ad::NoGradGuard guard;
  return model.loss(batch.noisy, batch.times, batch.texts, batch.target)->value(0, 0);
}

namespace {

struct AdamState {
  ad::Matrix<float> m, v;
};

}  // namespace

TrainResult train_toy(ToyMmdit& model, const std::vector<ShapesSample>& data,
                      const TrainConfig& cfg, const std::function<void(int, double)>& on_step) {
  if (data.empty()) throw InvalidArgument("train_toy: empty dataset");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw InvalidArgument("train_toy: bad step/batch");
  Rng rng(cfg.seed);
  Rng eval_rng(derive_seed(cfg.seed, 99));
  std::vector<int> eval_idx;
  for (int i = 0; i < cfg.eval_batch; ++i)
    eval_idx.push_back(static_cast<int>(eval_rng.below(data.size())));
  const FlowBatch eval = make_flow_batch(data, eval_idx, model.config(), eval_rng);

  TrainResult result;
  result.eval_loss_initial = evaluate_loss(model, eval);

  const auto& params = model.params();
  std::vector<AdamState> state(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    state[i].m = ad::Matrix<float>::Zero(params[i].var->value.rows(), params[i].var->value.cols());
    state[i].v = state[i].m;
  }

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> idx(cfg.batch_size);
    for (int& i : idx) i = static_cast<int>(rng.below(data.size()));
    const FlowBatch batch = make_flow_batch(data, idx, model.config(), rng);

    model.zero_grad();
    const auto loss = model.loss(batch.noisy, batch.times, batch.texts, batch.target);
    const double value = loss->value(0, 0);
    if (!std::isfinite(value))
      throw NonFiniteError("training diverged at step " + std::to_string(step), step);
    ad::backward(loss);

    double norm2 = 0.0;
    for (const auto& p : params)
      if (p.var->grad.size()) norm2 += p.var->grad.template cast<double>().squaredNorm();
    const double clip = (cfg.grad_clip > 0 && std::sqrt(norm2) > cfg.grad_clip)
                            ? cfg.grad_clip / std::sqrt(norm2)
                            : 1.0;

    double lr = cfg.learning_rate;
    if (step < cfg.warmup_steps) {
      lr *= static_cast<double>(step + 1) / cfg.warmup_steps;
    } else if (cfg.steps > cfg.warmup_steps) {
      const double progress =
          static_cast<double>(step - cfg.warmup_steps) / (cfg.steps - cfg.warmup_steps);
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      lr *= cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cosine;
    }
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, step + 1);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, step + 1);
    const float b1 = static_cast<float>(cfg.adam_beta1), b2 = static_cast<float>(cfg.adam_beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i].var;
      if (p.grad.size() == 0) continue;
      const ad::Matrix<float> g = p.grad * static_cast<float>(clip);
      state[i].m = b1 * state[i].m + (1.0f - b1) * g;
      state[i].v = b2 * state[i].v + (1.0f - b2) * g.cwiseProduct(g);
      const auto mhat = state[i].m.array() / static_cast<float>(bc1);
      const auto vhat = state[i].v.array() / static_cast<float>(bc2);
      p.value.array() -= static_cast<float>(lr) * mhat / (vhat.sqrt() + static_cast<float>(cfg.adam_eps));
    }
    result.curve.push_back({step, value});
    if (on_step) on_step(step, value);
  }
  model.zero_grad();
  result.eval_loss_final = evaluate_loss(model, eval);
  return result;
}

}  // namespace rfedit
