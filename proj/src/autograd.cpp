#include "srn/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "srn/simd/kernels.hpp"

namespace srn::ag {
namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  SRN_CHECK(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
            std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Var<T>& a, int rank, const char* op) {
  SRN_CHECK(a.value().rank() == rank, ErrorCode::kShapeMismatch,
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.shared());
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void transpose2d(const T* src, int rows, int cols, T* dst) {
  constexpr int kBlock = 32;
  for (int r0 = 0; r0 < rows; r0 += kBlock)
    for (int c0 = 0; c0 < cols; c0 += kBlock) {
      const int r1 = std::min(rows, r0 + kBlock), c1 = std::min(cols, c0 + kBlock);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) dst[static_cast<long>(c) * rows + r] = src[static_cast<long>(r) * cols + c];
    }
}

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!root.requires_grad()) return;
  require_shape(seed, root.shape(), "backward seed");
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = root.node()->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
void backward(const Var<T>& root) {
  backward(root, Tensor<T>(root.shape(), T(1)));
}

// ---- elementwise ---------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& o) {
    for (Node<T>* p : {pa, pb})
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a, b}, [pa, pb](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  Node<T>* pa = a.node();
  return make_result<T>(std::move(out), {a}, [pa, s](Node<T>& o) {
    auto& g = pa->ensure_grad();
    simd::kernels<T>().axpy(static_cast<int>(g.size()), s, o.grad.data(), g.data());
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v += s;
  Node<T>* pa = a.node();
  return make_result<T>(std::move(out), {a}, [pa](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  Node<T>* pa = a.node();
  return make_result<T>(std::move(out), {a}, [pa](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (pa->value[i] > T(0)) g[i] += o.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
  return make_result<T>(out, {a}, [pa = a.node()](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const T y = o.value[i];
      g[i] += o.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return make_result<T>(std::move(out), {a}, [pa = a.node()](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.value[i];
  });
}

// ---- reductions ----------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
  double s = 0;
  for (T v : a.value().values()) s += v;
  return make_result<T>(Tensor<T>({1}, static_cast<T>(s)), {a}, [pa = a.node()](Node<T>& o) {
    auto& g = pa->ensure_grad();
    const T go = o.grad[0];
    for (auto& v : g.values()) v += go;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const size_t n = a.value().size();
  SRN_CHECK(n > 0, ErrorCode::kEmptyInput, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

// ---- shape ---------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [pa = a.node()](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Var<T> center_crop(const Var<T>& a, int size) {
  require_rank(a, 3, "center_crop");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  SRN_CHECK(size <= h && size <= w && (h - size) % 2 == 0 && (w - size) % 2 == 0,
            ErrorCode::kShapeMismatch, "center_crop: cannot crop " + shape_str(a.shape()) + " to " +
                                           std::to_string(size));
  const int oy = (h - size) / 2, ox = (w - size) / 2;
  Tensor<T> out({c, size, size});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(ch, y, x) = a.value().at(ch, y + oy, x + ox);
  return make_result<T>(std::move(out), {a}, [pa = a.node(), c, size, oy, ox](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) g.at(ch, y + oy, x + ox) += o.grad.at(ch, y, x);
  });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  SRN_CHECK(sa.size() == sb.size() && std::equal(sa.begin(), sa.end() - 1, sb.begin()),
            ErrorCode::kShapeMismatch, "concat_last: " + shape_str(sa) + " vs " + shape_str(sb));
  const int ca = sa.back(), cb = sb.back();
  const size_t rows = a.value().size() / ca;
  Shape so = sa;
  so.back() = ca + cb;
  Tensor<T> out(so);
  for (size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.value().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node(), rows, ca, cb](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (size_t r = 0; r < rows; ++r)
        for (int i = 0; i < ca; ++i) g[r * ca + i] += o.grad[r * (ca + cb) + i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (size_t r = 0; r < rows; ++r)
        for (int i = 0; i < cb; ++i) g[r * cb + i] += o.grad[r * (ca + cb) + ca + i];
    }
  });
}

template <typename T>
Var<T> slice_last(const Var<T>& a, int start, int len) {
  const Shape& sa = a.shape();
  const int c = sa.back();
  SRN_CHECK(start >= 0 && len > 0 && start + len <= c, ErrorCode::kShapeMismatch, "slice_last out of range");
  const size_t rows = a.value().size() / c;
  Shape so = sa;
  so.back() = len;
  Tensor<T> out(so);
  for (size_t r = 0; r < rows; ++r) std::copy_n(a.value().data() + r * c + start, len, out.data() + r * len);
  return make_result<T>(std::move(out), {a}, [pa = a.node(), rows, c, start, len](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t r = 0; r < rows; ++r)
      for (int i = 0; i < len; ++i) g[r * c + start + i] += o.grad[r * len + i];
  });
}

template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
  SRN_CHECK(!parts.empty(), ErrorCode::kEmptyInput, "concat_batch of nothing");
  Shape so = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    SRN_CHECK(s.size() == so.size() && std::equal(s.begin() + 1, s.end(), so.begin() + 1),
              ErrorCode::kShapeMismatch, "concat_batch: inconsistent trailing shape");
    total += s[0];
  }
  so[0] = total;
  Tensor<T> out(so);
  std::vector<Node<T>*> nodes;
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().size();
    nodes.push_back(p.node());
  }
  return make_result<T>(std::move(out), parts, [nodes](Node<T>& o) {
    size_t off = 0;
    for (Node<T>* p : nodes) {
      const size_t n = p->value.size();
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (size_t i = 0; i < n; ++i) g[i] += o.grad[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
Var<T> index_select(const Var<T>& a, const std::vector<int>& index) {
  const int rows = a.dim(0);
  const size_t stride = a.value().size() / rows;
  Shape so = a.shape();
  so[0] = static_cast<int>(index.size());
  Tensor<T> out(so);
  for (size_t i = 0; i < index.size(); ++i) {
    SRN_CHECK(index[i] >= 0 && index[i] < rows, ErrorCode::kInvalidArgument, "index_select out of range");
    std::copy_n(a.value().data() + index[i] * stride, stride, out.data() + i * stride);
  }
  return make_result<T>(std::move(out), {a}, [pa = a.node(), index, stride](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < index.size(); ++i)
      for (size_t k = 0; k < stride; ++k) g[index[i] * stride + k] += o.grad[i * stride + k];
  });
}

// ---- linear algebra ------------------------------------------------------

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear weight");
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  SRN_CHECK(w.dim(1) == in, ErrorCode::kShapeMismatch,
            "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const auto& k = simd::kernels<T>();
  std::vector<T> wt(static_cast<size_t>(in) * out_dim);
  transpose2d(w.value().data(), out_dim, in, wt.data());
  Tensor<T> out({n, out_dim});
  k.gemm(n, out_dim, in, x.value().data(), in, wt.data(), out_dim, out.data(), out_dim, false);
  if (b.defined()) {
    SRN_CHECK(b.value().size() == static_cast<size_t>(out_dim), ErrorCode::kShapeMismatch, "linear bias");
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < out_dim; ++c) out.at(r, c) += b.value()[c];
  }
  std::vector<Var<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  Node<T>* pb = b.defined() ? b.node() : nullptr;
  return make_result<T>(std::move(out), parents, [px = x.node(), pw = w.node(), pb, n, in, out_dim](Node<T>& o) {
    const auto& k = simd::kernels<T>();
    if (px->requires_grad)
      k.gemm(n, in, out_dim, o.grad.data(), out_dim, pw->value.data(), in, px->ensure_grad().data(), in, true);
    if (pw->requires_grad) {
      std::vector<T> gt(static_cast<size_t>(n) * out_dim);
      transpose2d(o.grad.data(), n, out_dim, gt.data());
      k.gemm(out_dim, in, n, gt.data(), n, px->value.data(), in, pw->ensure_grad().data(), in, true);
    }
    if (pb && pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < out_dim; ++c) g[c] += o.grad.at(r, c);
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  SRN_CHECK(b.dim(0) == kk, ErrorCode::kShapeMismatch, "matmul inner dims");
  Tensor<T> out({m, n});
  simd::kernels<T>().gemm(m, n, kk, a.value().data(), kk, b.value().data(), n, out.data(), n, false);
  return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node(), m, kk, n](Node<T>& o) {
    const auto& k = simd::kernels<T>();
    if (pa->requires_grad) {
      std::vector<T> bt(static_cast<size_t>(kk) * n);
      transpose2d(pb->value.data(), kk, n, bt.data());
      k.gemm(m, kk, n, o.grad.data(), n, bt.data(), kk, pa->ensure_grad().data(), kk, true);
    }
    if (pb->requires_grad) {
      std::vector<T> at(static_cast<size_t>(kk) * m);
      transpose2d(pa->value.data(), m, kk, at.data());
      k.gemm(kk, n, m, at.data(), m, o.grad.data(), n, pb->ensure_grad().data(), n, true);
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const int bs = a.dim(0), m = a.dim(1), kk = a.dim(2), n = b.dim(2);
  SRN_CHECK(b.dim(0) == bs && b.dim(1) == kk, ErrorCode::kShapeMismatch,
            "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({bs, m, n});
  const auto& k = simd::kernels<T>();
  const size_t sa = static_cast<size_t>(m) * kk, sb = static_cast<size_t>(kk) * n, so = static_cast<size_t>(m) * n;
  for (int i = 0; i < bs; ++i)
    k.gemm(m, n, kk, a.value().data() + i * sa, kk, b.value().data() + i * sb, n, out.data() + i * so, n, false);
  return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node(), bs, m, kk, n, sa, sb, so](Node<T>& o) {
    const auto& k = simd::kernels<T>();
    std::vector<T> tmp(std::max(sa, sb));
    for (int i = 0; i < bs; ++i) {
      if (pa->requires_grad) {
        transpose2d(pb->value.data() + i * sb, kk, n, tmp.data());
        k.gemm(m, kk, n, o.grad.data() + i * so, n, tmp.data(), kk, pa->ensure_grad().data() + i * sa, kk, true);
      }
      if (pb->requires_grad) {
        transpose2d(pa->value.data() + i * sa, m, kk, tmp.data());
        k.gemm(kk, n, m, tmp.data(), m, o.grad.data() + i * so, n, pb->ensure_grad().data() + i * sb, n, true);
      }
    }
  });
}

template <typename T>
Var<T> bmm_nt(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  const int bs = a.dim(0), m = a.dim(1), kk = a.dim(2), n = b.dim(1);
  SRN_CHECK(b.dim(0) == bs && b.dim(2) == kk, ErrorCode::kShapeMismatch,
            "bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out({bs, m, n});
  const auto& k = simd::kernels<T>();
  const size_t sa = static_cast<size_t>(m) * kk, sb = static_cast<size_t>(n) * kk, so = static_cast<size_t>(m) * n;
  std::vector<T> bt(sb);
  for (int i = 0; i < bs; ++i) {
    transpose2d(b.value().data() + i * sb, n, kk, bt.data());
    k.gemm(m, n, kk, a.value().data() + i * sa, kk, bt.data(), n, out.data() + i * so, n, false);
  }
  return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node(), bs, m, kk, n, sa, sb, so](Node<T>& o) {
    const auto& k = simd::kernels<T>();
    std::vector<T> gt(so);
    for (int i = 0; i < bs; ++i) {
      // dA = dC * B ; dB = dC^T * A
      if (pa->requires_grad)
        k.gemm(m, kk, n, o.grad.data() + i * so, n, pb->value.data() + i * sb, kk, pa->ensure_grad().data() + i * sa,
               kk, true);
      if (pb->requires_grad) {
        transpose2d(o.grad.data() + i * so, m, n, gt.data());
        k.gemm(n, kk, m, gt.data(), m, pa->value.data() + i * sa, kk, pb->ensure_grad().data() + i * sb, kk, true);
      }
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
  const int c = a.shape().back();
  const size_t rows = a.value().size() / c;
  Tensor<T> out = a.value();
  for (size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * c;
    T mx = *std::max_element(row, row + c);
    T s = 0;
    for (int i = 0; i < c; ++i) s += (row[i] = std::exp(row[i] - mx));
    for (int i = 0; i < c; ++i) row[i] /= s;
  }
  return make_result<T>(out, {a}, [pa = a.node(), rows, c](Node<T>& o) {
    auto& g = pa->ensure_grad();
    for (size_t r = 0; r < rows; ++r) {
      const T* y = o.value.data() + r * c;
      const T* gy = o.grad.data() + r * c;
      T d = 0;
      for (int i = 0; i < c; ++i) d += y[i] * gy[i];
      for (int i = 0; i < c; ++i) g[r * c + i] += y[i] * (gy[i] - d);
    }
  });
}

template <typename T>
Var<T> pool_positions(const Var<T>& x, const Tensor<T>& pool) {
  require_rank(x, 3, "pool_positions");
  const int bs = x.dim(0), p = x.dim(1), c = x.dim(2), q = pool.dim(0);
  SRN_CHECK(pool.rank() == 2 && pool.dim(1) == p, ErrorCode::kShapeMismatch, "pool_positions matrix");
  Tensor<T> out({bs, q, c});
  const auto& k = simd::kernels<T>();
  for (int i = 0; i < bs; ++i)
    k.gemm(q, c, p, pool.data(), p, x.value().data() + static_cast<size_t>(i) * p * c, c,
           out.data() + static_cast<size_t>(i) * q * c, c, false);
  Tensor<T> pool_t({p, q});
  transpose2d(pool.data(), q, p, pool_t.data());
  return make_result<T>(std::move(out), {x}, [px = x.node(), pool_t, bs, p, c, q](Node<T>& o) {
    const auto& k = simd::kernels<T>();
    auto& g = px->ensure_grad();
    for (int i = 0; i < bs; ++i)
      k.gemm(p, c, q, pool_t.data(), q, o.grad.data() + static_cast<size_t>(i) * q * c, c,
             g.data() + static_cast<size_t>(i) * p * c, c, true);
  });
}

// ---- convolution ---------------------------------------------------------

namespace {

template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, const Conv2dOptions& o, int oh, int ow, T* cols) {
  const long n = static_cast<long>(oh) * ow;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + ((static_cast<long>(c) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * o.stride - o.pad + ky * o.dilation;
          T* drow = dst + static_cast<long>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* srow = x + (static_cast<long>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * o.stride - o.pad + kx * o.dilation;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, int cin, int h, int w, int k, const Conv2dOptions& o, int oh, int ow, T* x) {
  const long n = static_cast<long>(oh) * ow;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + ((static_cast<long>(c) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * o.stride - o.pad + ky * o.dilation;
          if (iy < 0 || iy >= h) continue;
          T* xrow = x + (static_cast<long>(c) * h + iy) * w;
          const T* srow = src + static_cast<long>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * o.stride - o.pad + kx * o.dilation;
            if (ix >= 0 && ix < w) xrow[ix] += srow[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dOptions opt) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d weight");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  SRN_CHECK(w.dim(1) == cin && w.dim(3) == k, ErrorCode::kShapeMismatch,
            "conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const int extent = (k - 1) * opt.dilation + 1;
  const int oh = (h + 2 * opt.pad - extent) / opt.stride + 1;
  const int ow = (wd + 2 * opt.pad - extent) / opt.stride + 1;
  SRN_CHECK(oh > 0 && ow > 0, ErrorCode::kShapeMismatch, "conv2d: input too small " + shape_str(x.shape()));
  const int kk = cin * k * k;
  const int n = oh * ow;
  const bool pointwise = k == 1 && opt.stride == 1 && opt.pad == 0;
  std::shared_ptr<std::vector<T>> cols;
  const T* colp = x.value().data();
  if (!pointwise) {
    cols = std::make_shared<std::vector<T>>(static_cast<size_t>(kk) * n);
    im2col(x.value().data(), cin, h, wd, k, opt, oh, ow, cols->data());
    colp = cols->data();
  }
  Tensor<T> out({cout, oh, ow});
  simd::kernels<T>().gemm(cout, n, kk, w.value().data(), kk, colp, n, out.data(), n, false);
  if (b.defined())
    for (int c = 0; c < cout; ++c) {
      T* row = out.data() + static_cast<size_t>(c) * n;
      const T bv = b.value()[c];
      for (int i = 0; i < n; ++i) row[i] += bv;
    }
  std::vector<Var<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  Node<T>* pb = b.defined() ? b.node() : nullptr;
  return make_result<T>(
      std::move(out), parents,
      [px = x.node(), pw = w.node(), pb, cols, cin, h, wd, k, opt, oh, ow, cout, kk, n, pointwise](Node<T>& o) {
        const auto& kern = simd::kernels<T>();
        if (pw->requires_grad) {
          const T* colv = pointwise ? px->value.data() : cols->data();
          std::vector<T> colt(static_cast<size_t>(kk) * n);
          transpose2d(colv, kk, n, colt.data());
          kern.gemm(cout, kk, n, o.grad.data(), n, colt.data(), kk, pw->ensure_grad().data(), kk, true);
        }
        if (pb && pb->requires_grad) {
          auto& g = pb->ensure_grad();
          for (int c = 0; c < cout; ++c) {
            const T* row = o.grad.data() + static_cast<size_t>(c) * n;
            T s = 0;
            for (int i = 0; i < n; ++i) s += row[i];
            g[c] += s;
          }
        }
        if (px->requires_grad) {
          std::vector<T> wt(static_cast<size_t>(kk) * cout);
          transpose2d(pw->value.data(), cout, kk, wt.data());
          if (pointwise) {
            kern.gemm(kk, n, cout, wt.data(), cout, o.grad.data(), n, px->ensure_grad().data(), n, true);
          } else {
            std::vector<T> dcols(static_cast<size_t>(kk) * n);
            kern.gemm(kk, n, cout, wt.data(), cout, o.grad.data(), n, dcols.data(), n, false);
            col2im(dcols.data(), cin, h, wd, k, opt, oh, ow, px->ensure_grad().data());
          }
        }
      });
}

template <typename T>
Var<T> depthwise_xcorr(const Var<T>& x, const Var<T>& kernel) {
  require_rank(x, 3, "depthwise_xcorr");
  require_rank(kernel, 3, "depthwise_xcorr kernel");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int kh = kernel.dim(1), kw = kernel.dim(2);
  SRN_CHECK(kernel.dim(0) == c, ErrorCode::kShapeMismatch,
            "depthwise_xcorr: channels " + shape_str(x.shape()) + " vs " + shape_str(kernel.shape()));
  SRN_CHECK(kh <= h && kw <= w, ErrorCode::kShapeMismatch, "depthwise_xcorr: kernel larger than input");
  const int oh = h - kh + 1, ow = w - kw + 1;
  Tensor<T> out({c, oh, ow});
  const auto& kern = simd::kernels<T>();
  for (int ch = 0; ch < c; ++ch)
    kern.xcorr2d(x.value().data() + static_cast<size_t>(ch) * h * w, h, w,
                 kernel.value().data() + static_cast<size_t>(ch) * kh * kw, kh, kw,
                 out.data() + static_cast<size_t>(ch) * oh * ow, false);
  return make_result<T>(std::move(out), {x, kernel}, [px = x.node(), pk = kernel.node(), c, h, w, kh, kw, oh, ow](Node<T>& o) {
    const auto& kern = simd::kernels<T>();
    if (pk->requires_grad) {
      // dK = xcorr(x, dY)
      auto& g = pk->ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        kern.xcorr2d(px->value.data() + static_cast<size_t>(ch) * h * w, h, w,
                     o.grad.data() + static_cast<size_t>(ch) * oh * ow, oh, ow,
                     g.data() + static_cast<size_t>(ch) * kh * kw, true);
    }
    if (px->requires_grad) {
      // dX = xcorr(pad(dY), flip(K))
      auto& g = px->ensure_grad();
      const int ph = oh + 2 * (kh - 1), pw = ow + 2 * (kw - 1);
      std::vector<T> padded(static_cast<size_t>(ph) * pw);
      std::vector<T> flipped(static_cast<size_t>(kh) * kw);
      for (int ch = 0; ch < c; ++ch) {
        std::fill(padded.begin(), padded.end(), T(0));
        const T* gy = o.grad.data() + static_cast<size_t>(ch) * oh * ow;
        for (int y = 0; y < oh; ++y)
          std::copy_n(gy + y * ow, ow, padded.data() + (y + kh - 1) * pw + (kw - 1));
        const T* kv = pk->value.data() + static_cast<size_t>(ch) * kh * kw;
        for (int i = 0; i < kh * kw; ++i) flipped[i] = kv[kh * kw - 1 - i];
        kern.xcorr2d(padded.data(), ph, pw, flipped.data(), kh, kw, g.data() + static_cast<size_t>(ch) * h * w, true);
      }
    }
  });
}

// ---- broadcasting / gathering -------------------------------------------

template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& f, const Var<T>& m) {
  require_rank(f, 3, "mul_channel_broadcast");
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  SRN_CHECK(m.value().size() == static_cast<size_t>(h) * w, ErrorCode::kShapeMismatch,
            "mul_channel_broadcast: map " + shape_str(m.shape()) + " vs features " + shape_str(f.shape()));
  const size_t hw = static_cast<size_t>(h) * w;
  Tensor<T> out = f.value();
  for (int ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < hw; ++i) out[ch * hw + i] *= m.value()[i];
  return make_result<T>(std::move(out), {f, m}, [pf = f.node(), pm = m.node(), c, hw](Node<T>& o) {
    if (pf->requires_grad) {
      auto& g = pf->ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (size_t i = 0; i < hw; ++i) g[ch * hw + i] += o.grad[ch * hw + i] * pm->value[i];
    }
    if (pm->requires_grad) {
      auto& g = pm->ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (size_t i = 0; i < hw; ++i) g[i] += o.grad[ch * hw + i] * pf->value[ch * hw + i];
    }
  });
}

template <typename T>
Var<T> mul_rows(const Var<T>& x, const Var<T>& s) {
  require_rank(x, 2, "mul_rows");
  const int n = x.dim(0), d = x.dim(1);
  SRN_CHECK(s.value().size() == static_cast<size_t>(n), ErrorCode::kShapeMismatch, "mul_rows scale size");
  Tensor<T> out = x.value();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) out.at(r, c) *= s.value()[r];
  return make_result<T>(std::move(out), {x, s}, [px = x.node(), ps = s.node(), n, d](Node<T>& o) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) g.at(r, c) += o.grad.at(r, c) * ps->value[r];
    }
    if (ps->requires_grad) {
      auto& g = ps->ensure_grad();
      for (int r = 0; r < n; ++r) {
        T acc = 0;
        for (int c = 0; c < d; ++c) acc += o.grad.at(r, c) * px->value.at(r, c);
        g[r] += acc;
      }
    }
  });
}

template <typename T>
Var<T> gather_positions(const Var<T>& x, const std::vector<int>& flat_index) {
  require_rank(x, 3, "gather_positions");
  const int c = x.dim(0);
  const int hw = x.dim(1) * x.dim(2);
  const int n = static_cast<int>(flat_index.size());
  Tensor<T> out({n, c});
  for (int i = 0; i < n; ++i) {
    SRN_CHECK(flat_index[i] >= 0 && flat_index[i] < hw, ErrorCode::kInvalidArgument, "gather index out of range");
    for (int ch = 0; ch < c; ++ch) out.at(i, ch) = x.value()[static_cast<size_t>(ch) * hw + flat_index[i]];
  }
  return make_result<T>(std::move(out), {x}, [px = x.node(), flat_index, c, hw, n](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) g[static_cast<size_t>(ch) * hw + flat_index[i]] += o.grad.at(i, ch);
  });
}

template <typename T>
Var<T> softmax_weighted_sum(const std::vector<Var<T>>& levels, const Var<T>& logits) {
  const int nl = static_cast<int>(levels.size());
  SRN_CHECK(nl > 0 && logits.value().size() == static_cast<size_t>(nl), ErrorCode::kShapeMismatch,
            "softmax_weighted_sum: level count vs weights");
  for (const auto& l : levels) require_same(l, levels[0], "softmax_weighted_sum");
  std::vector<T> wts(nl);
  T mx = *std::max_element(logits.value().data(), logits.value().data() + nl);
  T s = 0;
  for (int i = 0; i < nl; ++i) s += (wts[i] = std::exp(logits.value()[i] - mx));
  for (auto& v : wts) v /= s;
  Tensor<T> out(levels[0].shape());
  const auto& kern = simd::kernels<T>();
  for (int i = 0; i < nl; ++i)
    kern.axpy(static_cast<int>(out.size()), wts[i], levels[i].value().data(), out.data());
  std::vector<Var<T>> parents = levels;
  parents.push_back(logits);
  std::vector<Node<T>*> nodes;
  for (const auto& l : levels) nodes.push_back(l.node());
  return make_result<T>(std::move(out), parents, [nodes, pl = logits.node(), wts, nl](Node<T>& o) {
    const auto& kern = simd::kernels<T>();
    const int n = static_cast<int>(o.grad.size());
    std::vector<T> dots(nl);
    for (int i = 0; i < nl; ++i) {
      if (nodes[i]->requires_grad) kern.axpy(n, wts[i], o.grad.data(), nodes[i]->ensure_grad().data());
      dots[i] = kern.dot(n, o.grad.data(), nodes[i]->value.data());
    }
    if (pl->requires_grad) {
      auto& g = pl->ensure_grad();
      T avg = 0;
      for (int i = 0; i < nl; ++i) avg += wts[i] * dots[i];
      for (int i = 0; i < nl; ++i) g[i] += wts[i] * (dots[i] - avg);
    }
  });
}

// ---- losses --------------------------------------------------------------

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1);
  SRN_CHECK(static_cast<size_t>(n) == labels.size() && n > 0, ErrorCode::kShapeMismatch, "cross_entropy labels");
  Tensor<T> prob({n, c});
  double loss = 0;
  for (int r = 0; r < n; ++r) {
    const T* row = logits.value().data() + static_cast<size_t>(r) * c;
    T mx = *std::max_element(row, row + c);
    T s = 0;
    for (int i = 0; i < c; ++i) s += std::exp(row[i] - mx);
    const T lse = mx + std::log(s);
    for (int i = 0; i < c; ++i) prob.at(r, i) = std::exp(row[i] - lse);
    SRN_CHECK(labels[r] >= 0 && labels[r] < c, ErrorCode::kInvalidArgument, "cross_entropy label out of range");
    loss += lse - row[labels[r]];
  }
  return make_result<T>(Tensor<T>({1}, static_cast<T>(loss / n)), {logits},
                        [pl = logits.node(), prob, labels, n, c](Node<T>& o) {
                          auto& g = pl->ensure_grad();
                          const T s = o.grad[0] / static_cast<T>(n);
                          for (int r = 0; r < n; ++r)
                            for (int i = 0; i < c; ++i)
                              g.at(r, i) += s * (prob.at(r, i) - (labels[r] == i ? T(1) : T(0)));
                        });
}

template <typename T>
Var<T> iou_loss_ltrb(const Var<T>& pred, const Tensor<T>& target) {
  require_rank(pred, 2, "iou_loss_ltrb");
  require_shape(target, pred.shape(), "iou_loss_ltrb target");
  const int n = pred.dim(0);
  SRN_CHECK(pred.dim(1) == 4 && n > 0, ErrorCode::kShapeMismatch, "iou_loss_ltrb expects (n, 4)");
  const auto& p = pred.value();
  double loss = 0;
  for (int r = 0; r < n; ++r) {
    const T l = p.at(r, 0), t = p.at(r, 1), rr = p.at(r, 2), b = p.at(r, 3);
    const T gl = target.at(r, 0), gt = target.at(r, 1), gr = target.at(r, 2), gb = target.at(r, 3);
    const T iw = std::min(l, gl) + std::min(rr, gr);
    const T ih = std::min(t, gt) + std::min(b, gb);
    const T inter = std::max(iw, T(0)) * std::max(ih, T(0));
    const T uni = (l + rr) * (t + b) + (gl + gr) * (gt + gb) - inter;
    loss += 1.0 - static_cast<double>(inter / uni);
  }
  return make_result<T>(Tensor<T>({1}, static_cast<T>(loss / n)), {pred}, [pp = pred.node(), target, n](Node<T>& o) {
    auto& g = pp->ensure_grad();
    const auto& p = pp->value;
    const T s = o.grad[0] / static_cast<T>(n);
    for (int r = 0; r < n; ++r) {
      const T d[4] = {p.at(r, 0), p.at(r, 1), p.at(r, 2), p.at(r, 3)};
      const T gd[4] = {target.at(r, 0), target.at(r, 1), target.at(r, 2), target.at(r, 3)};
      const T iw = std::min(d[0], gd[0]) + std::min(d[2], gd[2]);
      const T ih = std::min(d[1], gd[1]) + std::min(d[3], gd[3]);
      const bool overlap = iw > T(0) && ih > T(0);
      const T inter = overlap ? iw * ih : T(0);
      const T pw = d[0] + d[2], ph = d[1] + d[3];
      const T uni = pw * ph + (gd[0] + gd[2]) * (gd[1] + gd[3]) - inter;
      // L = 1 - I/U ; dL/dx = -(dI*U - I*dU)/U^2 with dU = dA_pred - dI
      for (int k = 0; k < 4; ++k) {
        const bool horizontal = (k % 2) == 0;
        const T darea = horizontal ? ph : pw;
        T dinter = 0;
        if (overlap && d[k] < gd[k]) dinter = horizontal ? ih : iw;
        const T dunion = darea - dinter;
        const T dl = -(dinter * uni - inter * dunion) / (uni * uni);
        g.at(r, k) += s * dl;
      }
    }
  });
}

template <typename T>
Var<T> mse(const Var<T>& r, const std::vector<T>& y) {
  const size_t n = r.value().size();
  SRN_CHECK(n == y.size() && n > 0, ErrorCode::kShapeMismatch, "mse: score/label count mismatch");
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(r.value()[i]) - y[i];
    loss += d * d;
  }
  return make_result<T>(Tensor<T>({1}, static_cast<T>(loss / n)), {r}, [pr = r.node(), y, n](Node<T>& o) {
    auto& g = pr->ensure_grad();
    const T s = T(2) * o.grad[0] / static_cast<T>(n);
    for (size_t i = 0; i < n; ++i) g[i] += s * (pr->value[i] - y[i]);
  });
}

#define SRN_INSTANTIATE(T)                                                                          \
  template Var<T> make_result<T>(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>);   \
  template void backward<T>(const Var<T>&);                                                        \
  template void backward<T>(const Var<T>&, const Tensor<T>&);                                      \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale<T>(const Var<T>&, T);                                                      \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                                 \
  template Var<T> relu<T>(const Var<T>&);                                                          \
  template Var<T> sigmoid<T>(const Var<T>&);                                                       \
  template Var<T> exp<T>(const Var<T>&);                                                           \
  template Var<T> sum<T>(const Var<T>&);                                                           \
  template Var<T> mean<T>(const Var<T>&);                                                          \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                \
  template Var<T> center_crop<T>(const Var<T>&, int);                                              \
  template Var<T> concat_last<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> slice_last<T>(const Var<T>&, int, int);                                          \
  template Var<T> concat_batch<T>(const std::vector<Var<T>>&);                                     \
  template Var<T> index_select<T>(const Var<T>&, const std::vector<int>&);                         \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> bmm<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> bmm_nt<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> softmax_lastdim<T>(const Var<T>&);                                               \
  template Var<T> pool_positions<T>(const Var<T>&, const Tensor<T>&);                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dOptions);           \
  template Var<T> depthwise_xcorr<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> mul_channel_broadcast<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> mul_rows<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> gather_positions<T>(const Var<T>&, const std::vector<int>&);                     \
  template Var<T> softmax_weighted_sum<T>(const std::vector<Var<T>>&, const Var<T>&);              \
  template Var<T> cross_entropy<T>(const Var<T>&, const std::vector<int>&);                        \
  template Var<T> iou_loss_ltrb<T>(const Var<T>&, const Tensor<T>&);                               \
  template Var<T> mse<T>(const Var<T>&, const std::vector<T>&);                                    \
  template void transpose2d<T>(const T*, int, int, T*);

SRN_INSTANTIATE(float)
SRN_INSTANTIATE(double)

}  // namespace srn::ag

namespace srn {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace srn
