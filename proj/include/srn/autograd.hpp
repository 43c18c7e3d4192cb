#pragma once

// Minimal reverse-mode automatic differentiation over srn::Tensor.
//
// A Var is a shared handle to a graph node. Ops build the graph eagerly and
// record a backward closure only when some input requires a gradient and
// grad mode is enabled, so inference under NoGradGuard allocates no graph.

#include <functional>
#include <memory>
#include <vector>

#include "srn/tensor.hpp"

namespace srn::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  T item() const { return node_->value[0]; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.zero();
  }
  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Wire a result node. `fn` is dropped when no parent requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn);

/// Backpropagate from a scalar root (seed 1) or with an explicit seed.
/// Gradients accumulate into every reachable node that requires them.
template <typename T>
void backward(const Var<T>& root);
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

// ---- elementwise ---------------------------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);

// ---- reductions ----------------------------------------------------------
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

// ---- shape ---------------------------------------------------------------
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
/// (C, H, W) -> (C, size, size) from the spatial center.
template <typename T> Var<T> center_crop(const Var<T>& a, int size);
/// Concatenate along the last axis; leading axes must agree.
template <typename T> Var<T> concat_last(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_last(const Var<T>& a, int start, int len);
/// Concatenate along axis 0.
template <typename T> Var<T> concat_batch(const std::vector<Var<T>>& parts);
/// Rows of axis 0 picked by index (repeats allowed; gradients scatter-add).
template <typename T> Var<T> index_select(const Var<T>& a, const std::vector<int>& index);

// ---- linear algebra ------------------------------------------------------
/// x: (N, in), w: (out, in), b: (out) or undefined -> (N, out)
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// (B, M, K) x (B, K, N) -> (B, M, N)
template <typename T> Var<T> bmm(const Var<T>& a, const Var<T>& b);
/// (B, M, K) x (B, N, K)^T -> (B, M, N)
template <typename T> Var<T> bmm_nt(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> softmax_lastdim(const Var<T>& a);
/// out[b] = pool (Q x P) * x[b] (P x C): fixed position pooling, x: (B, P, C).
template <typename T> Var<T> pool_positions(const Var<T>& x, const Tensor<T>& pool);

// ---- convolution ---------------------------------------------------------
struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};
/// x: (Cin, H, W), w: (Cout, Cin, k, k), b: (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dOptions opt = {});
/// Per-channel valid correlation; x: (C, H, W), k: (C, h, w).
template <typename T> Var<T> depthwise_xcorr(const Var<T>& x, const Var<T>& k);

// ---- broadcasting / gathering -------------------------------------------
/// f: (C, H, W) times m: (H, W) broadcast across channels.
template <typename T> Var<T> mul_channel_broadcast(const Var<T>& f, const Var<T>& m);
/// x: (N, D) times s: (N) broadcast along rows.
template <typename T> Var<T> mul_rows(const Var<T>& x, const Var<T>& s);
/// x: (C, H, W) -> (n, C) at flat spatial indices.
template <typename T> Var<T> gather_positions(const Var<T>& x, const std::vector<int>& flat_index);
/// sum_l softmax(logits)_l * levels[l]; all levels share a shape.
template <typename T>
Var<T> softmax_weighted_sum(const std::vector<Var<T>>& levels, const Var<T>& logits);

// ---- losses --------------------------------------------------------------
/// Mean two-class cross-entropy; logits: (n, 2), labels in {0, 1}.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels);
/// Mean (1 - IoU) over rows of (l, t, r, b) distances measured from a common
/// anchor point; pred and target both (n, 4), all entries positive.
template <typename T> Var<T> iou_loss_ltrb(const Var<T>& pred, const Tensor<T>& target);
/// Mean squared error; r: any shape with n elements, y: n targets.
template <typename T> Var<T> mse(const Var<T>& r, const std::vector<T>& y);

// ---- helpers -------------------------------------------------------------
template <typename T>
void transpose2d(const T* src, int rows, int cols, T* dst);

}  // namespace srn::ag
