#include "rfedit/attention.hpp"

#include <cmath>
#include <limits>

#include "rfedit/error.hpp"

namespace rfedit {

const char* to_string(Phase p) { return p == Phase::inversion ? "inversion" : "sampling"; }
const char* to_string(BlockKind k) { return k == BlockKind::double_block ? "double" : "single"; }

std::string AttentionSite::str() const {
  return std::string(to_string(phase)) + " step " + std::to_string(step_index) + " " +
         to_string(kind) + " block " + std::to_string(layer_index);
}

AttentionProbs::AttentionProbs(int heads, int tokens)
    : heads_(heads), tokens_(tokens), data_(static_cast<std::size_t>(heads) * tokens * tokens, 0.0) {}

AttentionProbs attention_probabilities(const Features& q, const Features& k, int heads,
                                       std::span<const bool> key_mask) {
  if (q.rows() != k.rows() || q.cols() != k.cols())
    throw ShapeError("attention_probabilities: q and k differ in shape");
  if (heads < 1 || q.cols() % heads != 0)
    throw ShapeError("attention_probabilities: hidden size not divisible by heads");
  const int tokens = static_cast<int>(q.rows());
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != tokens)
    throw ShapeError("attention_probabilities: key mask length mismatch");
  const int dh = static_cast<int>(q.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionProbs out(heads, tokens);
  std::vector<double> row(tokens);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    for (int i = 0; i < tokens; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < tokens; ++j) {
        if (!key_mask.empty() && !key_mask[j]) {
          row[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        row[j] = qh.row(i).dot(kh.row(j)) * scale;
        mx = std::max(mx, row[j]);
      }
      if (!std::isfinite(mx)) throw InvalidArgument("attention_probabilities: every key masked");
      double sum = 0.0;
      for (int j = 0; j < tokens; ++j) {
        row[j] = std::isfinite(row[j]) ? std::exp(row[j] - mx) : 0.0;
        sum += row[j];
      }
      for (int j = 0; j < tokens; ++j) out.at(h, i, j) = row[j] / sum;
    }
  }
  return out;
}

AttentionProbe::AttentionProbe(std::function<AttentionProbs()> compute)
    : state_(std::make_shared<State>()) {
  state_->compute = std::move(compute);
}

const AttentionProbs& AttentionProbe::probabilities() const {
  if (!state_->live)
    throw Error("attention probabilities requested outside a forward pass");
  if (!state_->cached) state_->cached = std::make_unique<AttentionProbs>(state_->compute());
  return *state_->cached;
}

bool AttentionProbe::live() const { return state_->live; }

void AttentionProbe::expire() {
  state_->live = false;
  state_->cached.reset();
  state_->compute = nullptr;
}

void ControllerChain::on_attention(const AttentionSite& site, AttentionTensors& tensors,
                                   const AttentionProbe& probe) {
  for (auto* c : controllers_)
    if (c) c->on_attention(site, tensors, probe);
}

}  // namespace rfedit
