#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rfedit/dataset.hpp"
#include "rfedit/mmdit.hpp"

namespace rfedit {

struct TrainConfig {
  int steps = 3000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int warmup_steps = 100;
  double final_lr_fraction = 0.1;  ///< cosine decay floor
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1234;
  int eval_batch = 64;  ///< fixed (t, noise, sample) batch for the reported losses
};

struct LossPoint {
  int step;
  double loss;
};

struct TrainResult {
  std::vector<LossPoint> curve;  ///< training-batch loss per step
  double eval_loss_initial = 0.0;
  double eval_loss_final = 0.0;
};

/// One mini-batch of flow-matching pairs in token space.
struct FlowBatch {
  ad::Matrix<float> noisy;   ///< Z_t tokens
  ad::Matrix<float> target;  ///< Z_1 - Z_0 tokens
  std::vector<double> times;
  std::vector<TokenIds> texts;
};

/// z0 ~ N(0, I), z1 = dataset image, t ~ U[0, 1].
FlowBatch make_flow_batch(const std::vector<ShapesSample>& data, const std::vector<int>& indices,
                          const ModelConfig& config, Rng& rng);

double evaluate_loss(const ToyMmdit& model, const FlowBatch& batch);

/// Adam on the flow-matching loss. Throws NonFiniteError carrying the step
/// index if the loss diverges.
TrainResult train_toy(ToyMmdit& model, const std::vector<ShapesSample>& data,
                      const TrainConfig& config,
                      const std::function<void(int, double)>& on_step = {});

}  // namespace rfedit
