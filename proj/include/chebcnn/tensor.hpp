#pragma once

// Minimal N-dimensional tensor with reverse-mode automatic differentiation.
// Tensors are reference-semantics handles onto a shared buffer; every forward
// operation that touches a grad-requiring input records a tape node whose
// closure scatters the output gradient back to the inputs. The scalar type is
// a template parameter: the learning stack runs in single precision, tests run
// a double-precision shadow of the same kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "chebcnn/errors.hpp"
#include "chebcnn/parallel.hpp"
#include "chebcnn/rng.hpp"

namespace chebcnn::ten {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

// Thread-local tape switch; validation passes run under NoGradGuard.
namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct TensorImpl;

// One recorded operation: inputs, the owning output, and the gradient rule.
template <typename T>
struct TapeNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  TensorImpl<T>* output = nullptr;  // non-owning; output impl owns this node
  std::function<void(const std::vector<T>& dout)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // sized lazily on first accumulation
  std::shared_ptr<TapeNode<T>> node;
  bool backward_ran = false;
};

namespace detail {

template <typename T>
void ensure_grad(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
}

template <typename T>
void check_finite(const std::vector<T>& data, const char* op) {
  for (const T& v : data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + ": non-finite value in forward output");
    }
  }
}

}  // namespace detail

template <typename T>
class TensorT {
 public:
  TensorT() : impl_(std::make_shared<TensorImpl<T>>()) {}

  static TensorT zeros(Shape shape) { return filled(std::move(shape), T(0)); }
  static TensorT ones(Shape shape) { return filled(std::move(shape), T(1)); }

  static TensorT filled(Shape shape, T value) {
    TensorT t;
    t.impl_->data.assign(shape_numel(shape), value);
    t.impl_->shape = std::move(shape);
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("from_data: shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    TensorT t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }

  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& mutable_data() { return impl_->data; }

  T value_at(std::size_t flat) const { return impl_->data[flat]; }

  bool requires_grad() const { return impl_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (impl_->grad.empty())
      throw InvalidInputError("grad: no gradient has been accumulated");
    return impl_->grad;
  }
  void zero_grad() {
    impl_->grad.assign(impl_->data.size(), T(0));
    impl_->backward_ran = false;
  }

  // Deep copy of values; result is a leaf detached from any tape.
  TensorT clone() const {
    TensorT t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  // Reverse-mode pass from a scalar loss. Visits each tape node exactly once
  // in reverse topological order and accumulates into leaf gradients.
  void backward() const {
    if (numel() != 1)
      throw InvalidInputError("backward: loss must be scalar, got shape " +
                              shape_str(impl_->shape));
    if (impl_->backward_ran)
      throw AccumulationError(
          "backward: tape already traversed for this loss; zero gradients and "
          "rebuild the graph before calling again");
    impl_->backward_ran = true;

    std::vector<TapeNode<T>*> order;
    topo_collect(order);

    detail::ensure_grad(*impl_);
    impl_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TapeNode<T>* node = *it;
      detail::ensure_grad(*node->output);
      node->backward(node->output->grad);
    }
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

 private:
  void topo_collect(std::vector<TapeNode<T>*>& order) const {
    std::unordered_set<const TapeNode<T>*> seen;
    std::vector<std::pair<TapeNode<T>*, std::size_t>> stack;
    if (!impl_->node) return;
    if (!seen.insert(impl_->node.get()).second) return;
    stack.emplace_back(impl_->node.get(), 0);
    while (!stack.empty()) {
      auto& [node, next_child] = stack.back();
      if (next_child < node->inputs.size()) {
        TapeNode<T>* child = node->inputs[next_child]->node.get();
        ++next_child;
        if (child && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;

namespace detail {

// Builds the output tensor, runs the finite check, and registers the tape
// node when gradients are live.
template <typename T>
TensorT<T> make_result(const char* op, Shape shape, std::vector<T> data,
                       std::vector<TensorT<T>> inputs,
                       std::function<void(const std::vector<T>&)> backward) {
  check_finite(data, op);
  TensorT<T> out = TensorT<T>::from_data(std::move(shape), std::move(data));
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    out.set_requires_grad(true);
    auto node = std::make_shared<TapeNode<T>>();
    node->op = op;
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->output = out.impl().get();
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
  }
  return out;
}

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Equal shapes, or one operand a 1-element scalar.

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar) detail::check_same_shape("add", a, b);
  const std::size_t n = std::max(a.numel(), b.numel());
  std::vector<T> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = ad[a_scalar ? 0 : i] + bd[b_scalar ? 0 : i];
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "add", a_scalar ? b.shape() : a.shape(), std::move(out), {a, b},
      [ai, bi, a_scalar, b_scalar, n](const std::vector<T>& dout) {
        if (ai->requires_grad) {
          detail::ensure_grad(*ai);
          if (a_scalar)
            for (std::size_t i = 0; i < n; ++i) ai->grad[0] += dout[i];
          else
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += dout[i];
        }
        if (bi->requires_grad) {
          detail::ensure_grad(*bi);
          if (b_scalar)
            for (std::size_t i = 0; i < n; ++i) bi->grad[0] += dout[i];
          else
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] += dout[i];
        }
      });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar) detail::check_same_shape("sub", a, b);
  const std::size_t n = std::max(a.numel(), b.numel());
  std::vector<T> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = ad[a_scalar ? 0 : i] - bd[b_scalar ? 0 : i];
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "sub", a_scalar ? b.shape() : a.shape(), std::move(out), {a, b},
      [ai, bi, a_scalar, b_scalar, n](const std::vector<T>& dout) {
        if (ai->requires_grad) {
          detail::ensure_grad(*ai);
          if (a_scalar)
            for (std::size_t i = 0; i < n; ++i) ai->grad[0] += dout[i];
          else
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += dout[i];
        }
        if (bi->requires_grad) {
          detail::ensure_grad(*bi);
          if (b_scalar)
            for (std::size_t i = 0; i < n; ++i) bi->grad[0] -= dout[i];
          else
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] -= dout[i];
        }
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar) detail::check_same_shape("mul", a, b);
  const std::size_t n = std::max(a.numel(), b.numel());
  std::vector<T> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = ad[a_scalar ? 0 : i] * bd[b_scalar ? 0 : i];
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "mul", a_scalar ? b.shape() : a.shape(), std::move(out), {a, b},
      [ai, bi, a_scalar, b_scalar, n](const std::vector<T>& dout) {
        if (ai->requires_grad) {
          detail::ensure_grad(*ai);
          for (std::size_t i = 0; i < n; ++i) {
            const T db = bi->data[b_scalar ? 0 : i];
            ai->grad[a_scalar ? 0 : i] += dout[i] * db;
          }
        }
        if (bi->requires_grad) {
          detail::ensure_grad(*bi);
          for (std::size_t i = 0; i < n; ++i) {
            const T da = ai->data[a_scalar ? 0 : i];
            bi->grad[b_scalar ? 0 : i] += dout[i] * da;
          }
        }
      });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
  std::vector<T> out(a.numel());
  const auto& ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  auto ai = a.impl();
  return detail::make_result<T>(
      "scale", a.shape(), std::move(out), {a},
      [ai, s](const std::vector<T>& dout) {
        if (!ai->requires_grad) return;
        detail::ensure_grad(*ai);
        for (std::size_t i = 0; i < dout.size(); ++i) ai->grad[i] += dout[i] * s;
      });
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
  }
  std::vector<T> out = a.data();
  auto ai = a.impl();
  return detail::make_result<T>(
      "reshape", std::move(new_shape), std::move(out), {a},
      [ai](const std::vector<T>& dout) {
        if (!ai->requires_grad) return;
        detail::ensure_grad(*ai);
        for (std::size_t i = 0; i < dout.size(); ++i) ai->grad[i] += dout[i];
      });
}

// Collapses all trailing axes: [N, ...] -> [N, prod(...)].
template <typename T>
TensorT<T> flatten(const TensorT<T>& a) {
  if (a.shape().size() < 2)
    throw DimensionError("flatten: needs rank >= 2, got " + shape_str(a.shape()));
  const std::size_t n = a.shape()[0];
  return reshape(a, {n, a.numel() / n});
}

// ---------------------------------------------------------------------------
// Dense algebra.

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(m * n, T(0));
  const auto& ad = a.data();
  const auto& bd = b.data();
  parallel_for(m, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ad[i * k + p];
        const T* brow = &bd[p * n];
        T* orow = &out[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "matmul", {m, n}, std::move(out), {a, b},
      [ai, bi, m, k, n](const std::vector<T>& dout) {
        if (ai->requires_grad) {  // dA = dOut B^T
          detail::ensure_grad(*ai);
          parallel_for(m, [&](std::size_t r0, std::size_t r1) {
            for (std::size_t i = r0; i < r1; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                T acc = T(0);
                const T* drow = &dout[i * n];
                const T* brow = &bi->data[p * n];
                for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
                ai->grad[i * k + p] += acc;
              }
            }
          });
        }
        if (bi->requires_grad) {  // dB = A^T dOut
          detail::ensure_grad(*bi);
          parallel_for(k, [&](std::size_t p0, std::size_t p1) {
            for (std::size_t p = p0; p < p1; ++p) {
              for (std::size_t i = 0; i < m; ++i) {
                const T av = ai->data[i * k + p];
                const T* drow = &dout[i * n];
                T* grow = &bi->grad[p * n];
                for (std::size_t j = 0; j < n; ++j) grow[j] += av * drow[j];
              }
            }
          });
        }
      });
}

// y = x W + b with x [N, in], W [in, out], b [out].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 ||
      x.shape()[1] != w.shape()[0]) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) +
                         " x " + shape_str(w.shape()));
  }
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_w = w.shape()[1];
  if (b.shape() != Shape{out_w})
    throw DimensionError("linear: bias shape " + shape_str(b.shape()) +
                         " does not match output width " + std::to_string(out_w));
  std::vector<T> out(n * out_w);
  const auto& xd = x.data();
  const auto& wd = w.data();
  const auto& bd = b.data();
  parallel_for(n, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* orow = &out[i * out_w];
      for (std::size_t j = 0; j < out_w; ++j) orow[j] = bd[j];
      for (std::size_t p = 0; p < in; ++p) {
        const T xv = xd[i * in + p];
        const T* wrow = &wd[p * out_w];
        for (std::size_t j = 0; j < out_w; ++j) orow[j] += xv * wrow[j];
      }
    }
  });
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.impl();
  return detail::make_result<T>(
      "linear", {n, out_w}, std::move(out), {x, w, b},
      [xi, wi, bi, n, in, out_w](const std::vector<T>& dout) {
        if (xi->requires_grad) {
          detail::ensure_grad(*xi);
          parallel_for(n, [&](std::size_t r0, std::size_t r1) {
            for (std::size_t i = r0; i < r1; ++i) {
              for (std::size_t p = 0; p < in; ++p) {
                T acc = T(0);
                const T* drow = &dout[i * out_w];
                const T* wrow = &wi->data[p * out_w];
                for (std::size_t j = 0; j < out_w; ++j) acc += drow[j] * wrow[j];
                xi->grad[i * in + p] += acc;
              }
            }
          });
        }
        if (wi->requires_grad) {
          detail::ensure_grad(*wi);
          parallel_for(in, [&](std::size_t p0, std::size_t p1) {
            for (std::size_t p = p0; p < p1; ++p) {
              for (std::size_t i = 0; i < n; ++i) {
                const T xv = xi->data[i * in + p];
                const T* drow = &dout[i * out_w];
                T* grow = &wi->grad[p * out_w];
                for (std::size_t j = 0; j < out_w; ++j) grow[j] += xv * drow[j];
              }
            }
          });
        }
        if (bi->requires_grad) {
          detail::ensure_grad(*bi);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_w; ++j)
              bi->grad[j] += dout[i * out_w + j];
        }
      });
}

// ---------------------------------------------------------------------------
// 2D convolution, NCHW, stride 1, zero "same" padding, odd square kernels.
// Cross-correlation convention (no kernel flip).

namespace detail {

// out[n,o] accumulated fully inside one task, so chunking never reorders
// per-element arithmetic.
template <typename T>
void conv2d_forward_kernel(const T* in, const T* w, const T* bias, T* out,
                           std::size_t N, std::size_t C, std::size_t H,
                           std::size_t W, std::size_t O, std::size_t k) {
  const std::size_t pad = k / 2;
  const std::size_t in_plane = H * W;
  parallel_for(N * O, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const std::size_t n = t / O, o = t % O;
      T* oplane = out + (n * O + o) * in_plane;
      const T b = bias ? bias[o] : T(0);
      for (std::size_t i = 0; i < in_plane; ++i) oplane[i] = b;
      for (std::size_t c = 0; c < C; ++c) {
        const T* iplane = in + (n * C + c) * in_plane;
        const T* wk = w + (o * C + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
            const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
            const std::size_t y1 = dy > 0 ? H - dy : H;
            const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
            const std::size_t x1 = dx > 0 ? W - dx : W;
            for (std::size_t y = y0; y < y1; ++y) {
              const T* irow = iplane + (y + dy) * W + dx;
              T* orow = oplane + y * W;
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv2d_backward_input(const T* dout, const T* w, T* din, std::size_t N,
                           std::size_t C, std::size_t H, std::size_t W,
                           std::size_t O, std::size_t k) {
  const std::size_t pad = k / 2;
  const std::size_t plane = H * W;
  parallel_for(N * C, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const std::size_t n = t / C, c = t % C;
      T* dplane = din + (n * C + c) * plane;
      for (std::size_t o = 0; o < O; ++o) {
        const T* oplane = dout + (n * O + o) * plane;
        const T* wk = w + (o * C + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            // din[y, x] += wv * dout[y - dy, x - dx]
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
            const std::size_t y0 = dy > 0 ? static_cast<std::size_t>(dy) : 0;
            const std::size_t y1 = dy < 0 ? H + dy : H;
            const std::size_t x0 = dx > 0 ? static_cast<std::size_t>(dx) : 0;
            const std::size_t x1 = dx < 0 ? W + dx : W;
            for (std::size_t y = y0; y < y1; ++y) {
              const T* srow = oplane + (y - dy) * W - dx;
              T* drow = dplane + y * W;
              for (std::size_t x = x0; x < x1; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv2d_backward_weights(const T* dout, const T* in, T* dw, std::size_t N,
                             std::size_t C, std::size_t H, std::size_t W,
                             std::size_t O, std::size_t k) {
  const std::size_t pad = k / 2;
  const std::size_t plane = H * W;
  parallel_for(O, [&](std::size_t o0, std::size_t o1) {
    for (std::size_t o = o0; o < o1; ++o) {
      for (std::size_t n = 0; n < N; ++n) {
        const T* oplane = dout + (n * O + o) * plane;
        for (std::size_t c = 0; c < C; ++c) {
          const T* iplane = in + (n * C + c) * plane;
          T* wk = dw + (o * C + c) * k * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
              const std::size_t y1 = dy > 0 ? H - dy : H;
              const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
              const std::size_t x1 = dx > 0 ? W - dx : W;
              T acc = T(0);
              for (std::size_t y = y0; y < y1; ++y) {
                const T* irow = iplane + (y + dy) * W + dx;
                const T* orow = oplane + y * W;
                for (std::size_t x = x0; x < x1; ++x) acc += orow[x] * irow[x];
              }
              wk[ky * k + kx] += acc;
            }
          }
        }
      }
    }
  });
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias) {
  if (input.shape().size() != 4 || weight.shape().size() != 4) {
    throw DimensionError("conv2d: need NCHW input and OIKK weights, got " +
                         shape_str(input.shape()) + " and " +
                         shape_str(weight.shape()));
  }
  const std::size_t N = input.shape()[0], C = input.shape()[1],
                    H = input.shape()[2], W = input.shape()[3];
  const std::size_t O = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != C) {
    throw DimensionError("conv2d: input channels " + shape_str(input.shape()) +
                         " do not match weight channels " +
                         shape_str(weight.shape()));
  }
  if (weight.shape()[3] != k || k % 2 == 0)
    throw DimensionError("conv2d: kernel must be odd and square, got " +
                         shape_str(weight.shape()));
  const bool has_bias = bias.numel() > 0;
  if (has_bias && bias.shape() != Shape{O})
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(O) + " filters");

  std::vector<T> out(N * O * H * W);
  detail::conv2d_forward_kernel(input.data().data(), weight.data().data(),
                                has_bias ? bias.data().data() : nullptr,
                                out.data(), N, C, H, W, O, k);
  auto xi = input.impl();
  auto wi = weight.impl();
  auto bi = bias.impl();
  std::vector<TensorT<T>> inputs = {input, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result<T>(
      "conv2d", {N, O, H, W}, std::move(out), std::move(inputs),
      [xi, wi, bi, has_bias, N, C, H, W, O, k](const std::vector<T>& dout) {
        if (xi->requires_grad) {
          detail::ensure_grad(*xi);
          detail::conv2d_backward_input(dout.data(), wi->data.data(),
                                        xi->grad.data(), N, C, H, W, O, k);
        }
        if (wi->requires_grad) {
          detail::ensure_grad(*wi);
          detail::conv2d_backward_weights(dout.data(), xi->data.data(),
                                          wi->grad.data(), N, C, H, W, O, k);
        }
        if (has_bias && bi->requires_grad) {
          detail::ensure_grad(*bi);
          const std::size_t plane = H * W;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < O; ++o) {
              const T* oplane = &dout[(n * O + o) * plane];
              T acc = T(0);
              for (std::size_t i = 0; i < plane; ++i) acc += oplane[i];
              bi->grad[o] += acc;
            }
        }
      });
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight) {
  return conv2d(input, weight, TensorT<T>());
}

// ---------------------------------------------------------------------------
// Nonlinearities and pooling.

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  auto xi = x.impl();
  return detail::make_result<T>(
      "relu", x.shape(), std::move(out), {x},
      [xi](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          if (xi->data[i] > T(0)) xi->grad[i] += dout[i];
      });
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::tanh(xd[i]);
  std::vector<T> saved = out;  // d tanh = 1 - tanh^2
  auto xi = x.impl();
  return detail::make_result<T>(
      "tanh", x.shape(), std::move(out), {x},
      [xi, saved = std::move(saved)](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          xi->grad[i] += dout[i] * (T(1) - saved[i] * saved[i]);
      });
}

template <typename T>
TensorT<T> maxpool2x2(const TensorT<T>& x) {
  if (x.shape().size() != 4)
    throw DimensionError("maxpool2x2: need NCHW input, got " + shape_str(x.shape()));
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                    W = x.shape()[3];
  if (H % 2 != 0 || W % 2 != 0)
    throw DimensionError("maxpool2x2: spatial extents must be even, got " +
                         shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<T> out(N * C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  const auto& xd = x.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = &xd[nc * H * W];
    T* oplane = &out[nc * Ho * Wo];
    std::size_t* aplane = &argmax[nc * Ho * Wo];
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t x2 = 0; x2 < Wo; ++x2) {
        const std::size_t base = (2 * y) * W + 2 * x2;
        std::size_t best = base;
        T bv = plane[base];
        const std::size_t cand[3] = {base + 1, base + W, base + W + 1};
        for (std::size_t c : cand)
          if (plane[c] > bv) { bv = plane[c]; best = c; }
        oplane[y * Wo + x2] = bv;
        aplane[y * Wo + x2] = nc * H * W + best;
      }
    }
  }
  auto xi = x.impl();
  return detail::make_result<T>(
      "maxpool2x2", {N, C, Ho, Wo}, std::move(out), {x},
      [xi, argmax = std::move(argmax)](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          xi->grad[argmax[i]] += dout[i];
      });
}

// Per-channel standardization over (N, H, W) with learned affine. Training
// mode uses batch statistics and updates the running buffers in place;
// evaluation mode reads the running buffers.
template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& x, const TensorT<T>& gamma,
                       const TensorT<T>& beta, std::vector<T>& running_mean,
                       std::vector<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.shape().size() != 4)
    throw DimensionError("batchnorm2d: need NCHW input, got " + shape_str(x.shape()));
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                    W = x.shape()[3];
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} ||
      running_mean.size() != C || running_var.size() != C) {
    throw DimensionError("batchnorm2d: affine/stat extents do not match " +
                         std::to_string(C) + " channels");
  }
  const std::size_t plane = H * W;
  const std::size_t m = N * plane;  // population count per channel
  const auto& xd = x.data();
  std::vector<T> mean(C), inv_std(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = &xd[(n * C + c) * plane];
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const T mu = acc / static_cast<T>(m);
      T var = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = &xd[(n * C + c) * plane];
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  std::vector<T> xhat(xd.size());
  std::vector<T> out(xd.size());
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = &xd[(n * C + c) * plane];
      T* ph = &xhat[(n * C + c) * plane];
      T* po = &out[(n * C + c) * plane];
      const T mu = mean[c], is = inv_std[c], g = gd[c], b = bd[c];
      for (std::size_t i = 0; i < plane; ++i) {
        ph[i] = (p[i] - mu) * is;
        po[i] = g * ph[i] + b;
      }
    }
  }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return detail::make_result<T>(
      "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), training,
       N, C, plane, m](const std::vector<T>& dout) {
        std::vector<T> sum_d(C, T(0)), sum_dx(C, T(0));
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const T* pd = &dout[(n * C + c) * plane];
            const T* ph = &xhat[(n * C + c) * plane];
            T sd = T(0), sdx = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
              sd += pd[i];
              sdx += pd[i] * ph[i];
            }
            sum_d[c] += sd;
            sum_dx[c] += sdx;
          }
        if (gi->requires_grad) {
          detail::ensure_grad(*gi);
          for (std::size_t c = 0; c < C; ++c) gi->grad[c] += sum_dx[c];
        }
        if (bi->requires_grad) {
          detail::ensure_grad(*bi);
          for (std::size_t c = 0; c < C; ++c) bi->grad[c] += sum_d[c];
        }
        if (xi->requires_grad) {
          detail::ensure_grad(*xi);
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const T* pd = &dout[(n * C + c) * plane];
              const T* ph = &xhat[(n * C + c) * plane];
              T* pg = &xi->grad[(n * C + c) * plane];
              const T g_is = gi->data[c] * inv_std[c];
              if (training) {
                const T mean_d = sum_d[c] * inv_m;
                const T mean_dx = sum_dx[c] * inv_m;
                for (std::size_t i = 0; i < plane; ++i)
                  pg[i] += g_is * (pd[i] - mean_d - ph[i] * mean_dx);
              } else {
                for (std::size_t i = 0; i < plane; ++i) pg[i] += g_is * pd[i];
              }
            }
        }
      });
}

// Inverted dropout: kept activations are scaled by 1/(1-p) so the expected
// value matches the input; evaluation mode is the identity.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double p, bool training, Rng* rng) {
  if (p < 0.0 || p >= 1.0)
    throw InvalidInputError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (!rng) throw InvalidInputError("dropout: training mode needs an rng stream");
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& mv : mask) mv = rng->uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  auto xi = x.impl();
  return detail::make_result<T>(
      "dropout", x.shape(), std::move(out), {x},
      [xi, mask = std::move(mask)](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          xi->grad[i] += dout[i] * mask[i];
      });
}

// Row-wise softmax of an [N, C] tensor.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
  if (x.shape().size() != 2)
    throw DimensionError("softmax_rows: need [N, C] input, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = &xd[i * c];
    T* orow = &out[i * c];
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= denom;
  }
  std::vector<T> saved = out;
  auto xi = x.impl();
  return detail::make_result<T>(
      "softmax_rows", x.shape(), std::move(out), {x},
      [xi, saved = std::move(saved), n, c](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < n; ++i) {
          const T* p = &saved[i * c];
          const T* d = &dout[i * c];
          T dot = T(0);
          for (std::size_t j = 0; j < c; ++j) dot += d[j] * p[j];
          T* g = &xi->grad[i * c];
          for (std::size_t j = 0; j < c; ++j) g[j] += p[j] * (d[j] - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// Reduction and selection primitives used by the losses.

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T acc = T(0);
  for (const T& v : x.data()) acc += v;
  auto xi = x.impl();
  return detail::make_result<T>(
      "sum", {1}, {acc}, {x},
      [xi](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (auto& g : xi->grad) g += dout[0];
      });
}

// out[i] = x[i, labels[i]] for an [N, C] tensor.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int>& labels) {
  if (x.shape().size() != 2)
    throw DimensionError("gather_rows: need [N, C] input, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (labels.size() != n)
    throw DimensionError("gather_rows: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw InvalidInputError("gather_rows: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(c) + ")");
  }
  std::vector<T> out(n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = xd[i * c + static_cast<std::size_t>(labels[i])];
  auto xi = x.impl();
  return detail::make_result<T>(
      "gather_rows", {n}, std::move(out), {x},
      [xi, labels, c](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          xi->grad[i * c + static_cast<std::size_t>(labels[i])] += dout[i];
      });
}

// max(x, floor); the gradient passes only where x > floor.
template <typename T>
TensorT<T> clamp_min(const TensorT<T>& x, T floor) {
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xd[i], floor);
  auto xi = x.impl();
  return detail::make_result<T>(
      "clamp_min", x.shape(), std::move(out), {x},
      [xi, floor](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          if (xi->data[i] > floor) xi->grad[i] += dout[i];
      });
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xd[i]);
  auto xi = x.impl();
  return detail::make_result<T>(
      "log", x.shape(), std::move(out), {x},
      [xi](const std::vector<T>& dout) {
        if (!xi->requires_grad) return;
        detail::ensure_grad(*xi);
        for (std::size_t i = 0; i < dout.size(); ++i)
          xi->grad[i] += dout[i] / xi->data[i];
      });
}

// Row-wise argmax of an [N, C] tensor; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const TensorT<T>& x) {
  if (x.shape().size() != 2)
    throw DimensionError("argmax_rows: need [N, C] input, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  std::vector<int> out(n, 0);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = &xd[i * c];
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace chebcnn::ten
