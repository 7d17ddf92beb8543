#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rfedit {

enum class Phase { inversion, sampling };
enum class BlockKind { double_block, single_block };

const char* to_string(Phase p);
const char* to_string(BlockKind k);

/// Row-major double matrix used for attention features handed to controllers
/// (tokens x hidden; head h occupies columns [h*head_dim, (h+1)*head_dim)).
using Features = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Identifies one joint-attention call inside one velocity evaluation.
struct AttentionSite {
  Phase phase = Phase::sampling;
  int step_index = -1;   ///< solver interval index, sampling numbering
  double t = 0.0;        ///< time at which the velocity is evaluated
  double interval_start = 0.0;  ///< lower end of the solver interval; the cache alignment key
  bool canonical = true; ///< false for auxiliary evaluations of multi-stage solvers
  int layer_index = 0;   ///< index within its block kind
  BlockKind kind = BlockKind::double_block;
  int num_heads = 1;
  int text_tokens = 0;   ///< joint sequence is [text tokens; visual tokens]
  int visual_tokens = 0;

  std::string str() const;
};

/// Per-head joint attention probabilities, heads x tokens x tokens.
class AttentionProbs {
 public:
  AttentionProbs(int heads, int tokens);

  int heads() const { return heads_; }
  int tokens() const { return tokens_; }
  double& at(int h, int i, int j) { return data_[(static_cast<std::size_t>(h) * tokens_ + i) * tokens_ + j]; }
  double at(int h, int i, int j) const { return data_[(static_cast<std::size_t>(h) * tokens_ + i) * tokens_ + j]; }

 private:
  int heads_;
  int tokens_;
  std::vector<double> data_;
};

/// softmax(q k^T / sqrt(head_dim)) per head. `key_mask`, when non-empty,
/// excludes keys whose flag is false.
AttentionProbs attention_probabilities(const Features& q, const Features& k, int heads,
                                       std::span<const bool> key_mask = {});

/// Lazy accessor for the attention map of the site being reported. Valid only
/// while the controller callback runs; afterwards every copy throws.
class AttentionProbe {
 public:
  explicit AttentionProbe(std::function<AttentionProbs()> compute);

  const AttentionProbs& probabilities() const;
  bool live() const;
  void expire();

 private:
  struct State {
    std::function<AttentionProbs()> compute;
    std::unique_ptr<AttentionProbs> cached;
    bool live = true;
  };
  std::shared_ptr<State> state_;
};

/// Attention features at a site. Text segments are read-only; visual
/// segments may be replaced with tensors of identical shape.
struct AttentionTensors {
  const Features& q_text;
  const Features& k_text;
  const Features& v_text;
  Features q_visual;
  Features k_visual;
  Features v_visual;
};

class AttentionController {
 public:
  virtual ~AttentionController() = default;
  virtual void on_attention(const AttentionSite& site, AttentionTensors& tensors,
                            const AttentionProbe& probe) = 0;
};

/// Does nothing; useful for hook-transparency checks.
class NoopController final : public AttentionController {
 public:
  void on_attention(const AttentionSite&, AttentionTensors&, const AttentionProbe&) override {}
};

/// Passes the callback to several controllers in order.
class ControllerChain final : public AttentionController {
 public:
  explicit ControllerChain(std::vector<AttentionController*> controllers)
      : controllers_(std::move(controllers)) {}
  void on_attention(const AttentionSite& site, AttentionTensors& tensors,
                    const AttentionProbe& probe) override;

 private:
  std::vector<AttentionController*> controllers_;
};

/// What a velocity evaluation knows about the solver loop calling it.
struct EvalContext {
  Phase phase = Phase::sampling;
  int step_index = -1;
  bool canonical = true;
  AttentionController* controller = nullptr;
  double interval_start = 0.0;
};

}  // namespace rfedit
