#pragma once

// Minimal reverse-mode differentiation over row-major matrices. Only the
// operations the toy MM-DiT needs are provided. Instantiated for float
// (training, inference) and double (gradient checks).

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace rfedit::ad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  ///< empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix<T>& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  void zero_grad() { grad.resize(0, 0); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// Graph recording is on by default and thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
Var<T> constant(Matrix<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <class T>
Var<T> parameter(Matrix<T> value) {
  auto n = constant<T>(std::move(value));
  n->requires_grad = true;
  return n;
}

/// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
template <class T>
void backward(const Var<T>& root);

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x * w + bias (bias is 1 x out, broadcast over rows).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
/// a + row, row broadcast over rows of a.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <class T>
Var<T> silu(const Var<T>& a);
/// tanh approximation.
template <class T>
Var<T> gelu(const Var<T>& a);
/// Per-row standardization without affine parameters.
template <class T>
Var<T> layer_norm(const Var<T>& a, double eps = 1e-6);
/// x * (1 + scale[g]) + shift[g] where g = row / group_rows.
template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale, int group_rows);
/// x + y * gate[g] where g = row / group_rows.
template <class T>
Var<T> gated_residual(const Var<T>& x, const Var<T>& y, const Var<T>& gate, int group_rows);
template <class T>
Var<T> slice_cols(const Var<T>& a, int start, int count);
template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b);
/// Interleaves per-sample row blocks: [a_0; b_0; a_1; b_1; ...].
template <class T>
Var<T> join_streams(const Var<T>& a, const Var<T>& b, int batch);
/// Inverse of join_streams for one side: rows [start, start+count) of each
/// sample's block of `seq` rows.
template <class T>
Var<T> take_rows(const Var<T>& joint, int batch, int seq, int start, int count);
/// Multi-head softmax attention over per-sample sequences of `seq` rows.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int batch, int seq, int heads);
/// Rows of `table` selected by ids.
template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids);
/// Mean squared difference against a constant target; 1x1.
template <class T>
Var<T> mse(const Var<T>& pred, const Matrix<T>& target);

}  // namespace rfedit::ad
