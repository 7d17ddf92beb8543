#include "rfedit/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "rfedit/error.hpp"

namespace rfedit::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

template <class T, class Fn>
Var<T> make_node(Matrix<T>&& value, std::initializer_list<Var<T>> parents, Fn&& fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (!g_grad_enabled) return n;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return n;
  n->requires_grad = true;
  n->parents.assign(parents.begin(), parents.end());
  n->backward_fn = std::forward<Fn>(fn);
  return n;
}

template <class T>
void push(const Var<T>& p, const Matrix<T>& g) {
  if (p->requires_grad) p->accumulate(g);
}

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

template <class T>
void backward(const Var<T>& root) {
  require(root->value.rows() == 1 && root->value.cols() == 1, "backward: root must be 1x1");
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->accumulate(Matrix<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  // Release intermediate gradients; leaves keep theirs.
  for (Node<T>* n : order)
    if (!n->parents.empty()) n->zero_grad();
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a->value.cols() == b->value.rows(), "matmul: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a->value * b->value;
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    if (A->requires_grad) {
      Matrix<T> g;
      g.noalias() = self.grad * B->value.transpose();
      A->accumulate(g);
    }
    if (B->requires_grad) {
      Matrix<T> g;
      g.noalias() = A->value.transpose() * self.grad;
      B->accumulate(g);
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  require(x->value.cols() == w->value.rows(), "linear: input width differs from weight rows");
  require(bias->value.rows() == 1 && bias->value.cols() == w->value.cols(), "linear: bias shape");
  Matrix<T> out;
  out.noalias() = x->value * w->value;
  out.rowwise() += bias->value.row(0);
  return make_node<T>(std::move(out), {x, w, bias}, [](Node<T>& self) {
    const auto& X = self.parents[0];
    const auto& W = self.parents[1];
    const auto& Bv = self.parents[2];
    if (X->requires_grad) {
      Matrix<T> g;
      g.noalias() = self.grad * W->value.transpose();
      X->accumulate(g);
    }
    if (W->requires_grad) {
      Matrix<T> g;
      g.noalias() = X->value.transpose() * self.grad;
      W->accumulate(g);
    }
    if (Bv->requires_grad) Bv->accumulate(self.grad.colwise().sum());
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "add: shape mismatch");
  Matrix<T> out = a->value + b->value;
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    push(self.parents[0], self.grad);
    push(self.parents[1], self.grad);
  });
}

template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require(row->value.rows() == 1 && row->value.cols() == a->value.cols(), "add_row: shape");
  Matrix<T> out = a->value;
  out.rowwise() += row->value.row(0);
  return make_node<T>(std::move(out), {a, row}, [](Node<T>& self) {
    push(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  Matrix<T> sig = (T(1) + (-a->value.array()).exp()).inverse().matrix();
  Matrix<T> out = (a->value.array() * sig.array()).matrix();
  return make_node<T>(std::move(out), {a}, [sig = std::move(sig)](Node<T>& self) {
    const auto& x = self.parents[0]->value.array();
    Matrix<T> g =
        (self.grad.array() * sig.array() * (T(1) + x * (T(1) - sig.array()))).matrix();
    self.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> gelu(const Var<T>& a) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  const T k = static_cast<T>(0.044715);
  const auto x = a->value.array();
  Matrix<T> th = (c * (x + k * x.cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * x * (T(1) + th.array())).matrix();
  return make_node<T>(std::move(out), {a}, [th = std::move(th), c, k](Node<T>& self) {
    const auto x = self.parents[0]->value.array();
    const auto t = th.array();
    auto d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
    Matrix<T> g = (self.grad.array() * d).matrix();
    self.parents[0]->accumulate(g);
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& a, double eps) {
  const auto& x = a->value;
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Matrix<T> xhat(rows, cols);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).mean();
    const auto centered = x.row(r).array() - mean;
    const T var = centered.square().mean();
    inv_std(r) = T(1) / std::sqrt(var + static_cast<T>(eps));
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix<T> out = xhat;
  return make_node<T>(std::move(out), {a},
                      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                        const Eigen::Index rows = xhat.rows();
                        Matrix<T> g(rows, xhat.cols());
                        for (Eigen::Index r = 0; r < rows; ++r) {
                          const auto gr = self.grad.row(r).array();
                          const T mg = gr.mean();
                          const T mgx = (gr * xhat.row(r).array()).mean();
                          g.row(r) =
                              ((gr - mg - xhat.row(r).array() * mgx) * inv_std(r)).matrix();
                        }
                        self.parents[0]->accumulate(g);
                      });
}

template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale, int group_rows) {
  const Eigen::Index rows = x->value.rows(), cols = x->value.cols();
  require(group_rows > 0 && rows % group_rows == 0, "modulate: rows not divisible by group");
  const Eigen::Index groups = rows / group_rows;
  require(shift->value.rows() == groups && scale->value.rows() == groups &&
              shift->value.cols() == cols && scale->value.cols() == cols,
          "modulate: shift/scale shape");
  Matrix<T> out(rows, cols);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const auto s1 = (scale->value.row(g).array() + T(1));
    for (Eigen::Index r = g * group_rows; r < (g + 1) * group_rows; ++r)
      out.row(r) = (x->value.row(r).array() * s1 + shift->value.row(g).array()).matrix();
  }
  return make_node<T>(std::move(out), {x, shift, scale}, [group_rows](Node<T>& self) {
    const auto& X = self.parents[0];
    const auto& Sh = self.parents[1];
    const auto& Sc = self.parents[2];
    const Eigen::Index groups = Sh->value.rows();
    Matrix<T> gx(X->value.rows(), X->value.cols());
    Matrix<T> gsh = Matrix<T>::Zero(groups, X->value.cols());
    Matrix<T> gsc = Matrix<T>::Zero(groups, X->value.cols());
    for (Eigen::Index g = 0; g < groups; ++g) {
      const auto s1 = (Sc->value.row(g).array() + T(1));
      for (Eigen::Index r = g * group_rows; r < (g + 1) * group_rows; ++r) {
        gx.row(r) = (self.grad.row(r).array() * s1).matrix();
        gsh.row(g) += self.grad.row(r);
        gsc.row(g) += (self.grad.row(r).array() * X->value.row(r).array()).matrix();
      }
    }
    push(X, gx);
    push(Sh, gsh);
    push(Sc, gsc);
  });
}

template <class T>
Var<T> gated_residual(const Var<T>& x, const Var<T>& y, const Var<T>& gate, int group_rows) {
  const Eigen::Index rows = x->value.rows(), cols = x->value.cols();
  require(y->value.rows() == rows && y->value.cols() == cols, "gated_residual: x/y shape");
  require(group_rows > 0 && rows % group_rows == 0, "gated_residual: group");
  const Eigen::Index groups = rows / group_rows;
  require(gate->value.rows() == groups && gate->value.cols() == cols, "gated_residual: gate");
  Matrix<T> out(rows, cols);
  for (Eigen::Index g = 0; g < groups; ++g)
    for (Eigen::Index r = g * group_rows; r < (g + 1) * group_rows; ++r)
      out.row(r) =
          (x->value.row(r).array() + y->value.row(r).array() * gate->value.row(g).array())
              .matrix();
  return make_node<T>(std::move(out), {x, y, gate}, [group_rows](Node<T>& self) {
    const auto& Y = self.parents[1];
    const auto& G = self.parents[2];
    push(self.parents[0], self.grad);
    const Eigen::Index groups = G->value.rows();
    Matrix<T> gy(Y->value.rows(), Y->value.cols());
    Matrix<T> gg = Matrix<T>::Zero(groups, Y->value.cols());
    for (Eigen::Index g = 0; g < groups; ++g)
      for (Eigen::Index r = g * group_rows; r < (g + 1) * group_rows; ++r) {
        gy.row(r) = (self.grad.row(r).array() * G->value.row(g).array()).matrix();
        gg.row(g) += (self.grad.row(r).array() * Y->value.row(r).array()).matrix();
      }
    push(Y, gy);
    push(G, gg);
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= a->value.cols(), "slice_cols: range");
  Matrix<T> out = a->value.middleCols(start, count);
  return make_node<T>(std::move(out), {a}, [start, count](Node<T>& self) {
    const auto& A = self.parents[0];
    Matrix<T> g = Matrix<T>::Zero(A->value.rows(), A->value.cols());
    g.middleCols(start, count) = self.grad;
    A->accumulate(g);
  });
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  require(a->value.rows() == b->value.rows(), "concat_cols: row mismatch");
  const Eigen::Index ca = a->value.cols(), cb = b->value.cols();
  Matrix<T> out(a->value.rows(), ca + cb);
  out.leftCols(ca) = a->value;
  out.rightCols(cb) = b->value;
  return make_node<T>(std::move(out), {a, b}, [ca, cb](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad.leftCols(ca));
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.rightCols(cb));
  });
}

template <class T>
Var<T> join_streams(const Var<T>& a, const Var<T>& b, int batch) {
  require(batch > 0 && a->value.rows() % batch == 0 && b->value.rows() % batch == 0,
          "join_streams: rows not divisible by batch");
  require(a->value.cols() == b->value.cols(), "join_streams: width mismatch");
  const Eigen::Index la = a->value.rows() / batch, lb = b->value.rows() / batch;
  const Eigen::Index seq = la + lb;
  Matrix<T> out(batch * seq, a->value.cols());
  for (int s = 0; s < batch; ++s) {
    out.middleRows(s * seq, la) = a->value.middleRows(s * la, la);
    out.middleRows(s * seq + la, lb) = b->value.middleRows(s * lb, lb);
  }
  return make_node<T>(std::move(out), {a, b}, [batch, la, lb, seq](Node<T>& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    if (A->requires_grad) {
      Matrix<T> g(batch * la, self.grad.cols());
      for (int s = 0; s < batch; ++s) g.middleRows(s * la, la) = self.grad.middleRows(s * seq, la);
      A->accumulate(g);
    }
    if (B->requires_grad) {
      Matrix<T> g(batch * lb, self.grad.cols());
      for (int s = 0; s < batch; ++s)
        g.middleRows(s * lb, lb) = self.grad.middleRows(s * seq + la, lb);
      B->accumulate(g);
    }
  });
}

template <class T>
Var<T> take_rows(const Var<T>& joint, int batch, int seq, int start, int count) {
  require(joint->value.rows() == static_cast<Eigen::Index>(batch) * seq, "take_rows: rows");
  require(start >= 0 && count >= 0 && start + count <= seq, "take_rows: range");
  Matrix<T> out(batch * count, joint->value.cols());
  for (int s = 0; s < batch; ++s)
    out.middleRows(s * count, count) = joint->value.middleRows(s * seq + start, count);
  return make_node<T>(std::move(out), {joint}, [batch, seq, start, count](Node<T>& self) {
    const auto& J = self.parents[0];
    Matrix<T> g = Matrix<T>::Zero(J->value.rows(), J->value.cols());
    for (int s = 0; s < batch; ++s)
      g.middleRows(s * seq + start, count) = self.grad.middleRows(s * count, count);
    J->accumulate(g);
  });
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int batch, int seq,
                 int heads) {
  const Eigen::Index rows = q->value.rows(), width = q->value.cols();
  require(rows == static_cast<Eigen::Index>(batch) * seq, "attention: rows != batch * seq");
  require(k->value.rows() == rows && v->value.rows() == rows && k->value.cols() == width &&
              v->value.cols() == width,
          "attention: q/k/v shape mismatch");
  require(heads > 0 && width % heads == 0, "attention: width not divisible by heads");
  const int dh = static_cast<int>(width / heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Matrix<T>> probs(static_cast<std::size_t>(batch) * heads);
  Matrix<T> out(rows, width);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto Q = q->value.block(b * seq, h * dh, seq, dh);
      const auto K = k->value.block(b * seq, h * dh, seq, dh);
      const auto V = v->value.block(b * seq, h * dh, seq, dh);
      Matrix<T> P;
      P.noalias() = Q * K.transpose();
      P *= scale;
      for (int i = 0; i < seq; ++i) {
        auto row = P.row(i).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      out.block(b * seq, h * dh, seq, dh).noalias() = P * V;
      probs[static_cast<std::size_t>(b) * heads + h] = std::move(P);
    }
  }
  return make_node<T>(
      std::move(out), {q, k, v},
      [probs = std::move(probs), batch, seq, heads, dh, scale](Node<T>& self) {
        const auto& Qn = self.parents[0];
        const auto& Kn = self.parents[1];
        const auto& Vn = self.parents[2];
        const Eigen::Index rows = self.grad.rows(), width = self.grad.cols();
        Matrix<T> gq = Matrix<T>::Zero(rows, width);
        Matrix<T> gk = Matrix<T>::Zero(rows, width);
        Matrix<T> gv = Matrix<T>::Zero(rows, width);
        for (int b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const Matrix<T>& P = probs[static_cast<std::size_t>(b) * heads + h];
            const auto G = self.grad.block(b * seq, h * dh, seq, dh);
            const auto Q = Qn->value.block(b * seq, h * dh, seq, dh);
            const auto K = Kn->value.block(b * seq, h * dh, seq, dh);
            const auto V = Vn->value.block(b * seq, h * dh, seq, dh);
            gv.block(b * seq, h * dh, seq, dh).noalias() = P.transpose() * G;
            Matrix<T> dP;
            dP.noalias() = G * V.transpose();
            const auto rowdot = (dP.array() * P.array()).rowwise().sum();
            Matrix<T> dS = (P.array() * (dP.array().colwise() - rowdot)).matrix();
            dS *= scale;
            gq.block(b * seq, h * dh, seq, dh).noalias() = dS * K;
            gk.block(b * seq, h * dh, seq, dh).noalias() = dS.transpose() * Q;
          }
        }
        push(Qn, gq);
        push(Kn, gk);
        push(Vn, gv);
      });
}

template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  const Eigen::Index vocab = table->value.rows();
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < vocab, "embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return make_node<T>(std::move(out), {table}, [saved = std::move(saved)](Node<T>& self) {
    const auto& Tb = self.parents[0];
    Matrix<T> g = Matrix<T>::Zero(Tb->value.rows(), Tb->value.cols());
    for (std::size_t i = 0; i < saved.size(); ++i)
      g.row(saved[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    Tb->accumulate(g);
  });
}

template <class T>
Var<T> mse(const Var<T>& pred, const Matrix<T>& target) {
  require(pred->value.rows() == target.rows() && pred->value.cols() == target.cols(),
          "mse: shape mismatch");
  Matrix<T> diff = pred->value - target;
  Matrix<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<T>(diff.size());
  return make_node<T>(std::move(out), {pred}, [diff = std::move(diff)](Node<T>& self) {
    const T s = self.grad(0, 0) * T(2) / static_cast<T>(diff.size());
    self.parents[0]->accumulate(diff * s);
  });
}

#define RFEDIT_INSTANTIATE(T)                                                                   \
  template void backward<T>(const Var<T>&);                                                     \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                       \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> silu<T>(const Var<T>&);                                                       \
  template Var<T> gelu<T>(const Var<T>&);                                                       \
  template Var<T> layer_norm<T>(const Var<T>&, double);                                         \
  template Var<T> modulate<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);                \
  template Var<T> gated_residual<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);          \
  template Var<T> slice_cols<T>(const Var<T>&, int, int);                                       \
  template Var<T> concat_cols<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> join_streams<T>(const Var<T>&, const Var<T>&, int);                           \
  template Var<T> take_rows<T>(const Var<T>&, int, int, int, int);                              \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int);     \
  template Var<T> embedding<T>(const Var<T>&, std::span<const int>);                            \
  template Var<T> mse<T>(const Var<T>&, const Matrix<T>&);

RFEDIT_INSTANTIATE(float)
RFEDIT_INSTANTIATE(double)

#undef RFEDIT_INSTANTIATE

}  // namespace rfedit::ad
