#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "declab/errors.hpp"
#include "declab/rng.hpp"

namespace declab {

// Dense row-major tensor with shared storage and reverse-mode gradients.
// Templated on the scalar type: training runs in float, gradient checks in
// double. Values are immutable while a tape referencing them is alive;
// gradients accumulate into a lazily allocated buffer on the same storage.
template <typename S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return TensorT(std::move(shape), S(0), requires_grad);
  }

  static TensorT full(std::vector<int> shape, S value, bool requires_grad = false) {
    return TensorT(std::move(shape), value, requires_grad);
  }

  static TensorT from(std::vector<int> shape, std::vector<S> values, bool requires_grad = false) {
    TensorT t(std::move(shape), S(0), requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t.size())
      throw ShapeError("tensor data length does not match shape product");
    t.impl_->value = std::move(values);
    return t;
  }

  static TensorT scalar(S value) { return full({1}, value); }

  static TensorT randn(std::vector<int> shape, S stddev, Rng& rng, bool requires_grad = false) {
    TensorT t(std::move(shape), S(0), requires_grad);
    for (auto& v : t.impl_->value) v = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->value.size()); }

  S* data() { return impl_->value.data(); }
  const S* data() const { return impl_->value.data(); }
  std::vector<S>& values() { return impl_->value; }
  const std::vector<S>& values() const { return impl_->value; }

  S item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor");
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  // True when this tensor is a gradient leaf or was produced from one.
  bool on_grad_path() const { return impl_ && impl_->grad_path; }

  // Gradient buffer, allocated zeroed on first touch.
  S* grad() {
    ensure_grad();
    return impl_->grad.data();
  }
  const std::vector<S>& grad_values() {
    ensure_grad();
    return impl_->grad;
  }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  void ensure_grad() {
    if (!impl_->grad.empty()) return;
    impl_->grad.assign(impl_->value.size(), S(0));
  }

  bool same_storage(const TensorT& o) const { return impl_ == o.impl_; }

 private:
  friend class TapeT_friend;
  struct Impl {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;
    bool requires_grad = false;
    bool grad_path = false;
  };

  TensorT(std::vector<int> shape, S fill, bool requires_grad) {
    std::int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw ShapeError("tensor extents must be positive");
      n *= e;
    }
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->value.assign(static_cast<size_t>(n), fill);
    impl_->requires_grad = requires_grad;
    impl_->grad_path = requires_grad;
  }

  template <typename T>
  friend void mark_grad_path(TensorT<T>& t);

  std::shared_ptr<Impl> impl_;
};

template <typename S>
void mark_grad_path(TensorT<S>& t) {
  t.impl_->grad_path = true;
}

// Ordered record of primitive applications. Recording order is the
// topological order of the forward pass; backward replays it in reverse,
// visiting each node exactly once.
template <typename S>
class TapeT {
 public:
  void record(std::function<void()> back_fn) { nodes_.push_back(std::move(back_fn)); }
  std::size_t size() const { return nodes_.size(); }

  void backward(TensorT<S>& loss) {
    if (loss.size() != 1) throw ContractError("backward requires a scalar loss");
    loss.ensure_grad();
    loss.grad()[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// Free-function form of the tape sweep.
template <typename S>
void backward(TensorT<S>& loss, TapeT<S>& tape) {
  tape.backward(loss);
}

namespace detail {

template <typename S>
void check_finite(const TensorT<S>& t, const char* op) {
  for (S v : t.values()) {
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// True when the op must be recorded: a tape is active and some input can
// receive gradient.
template <typename S, typename... Ts>
bool track(TapeT<S>* tape, const Ts&... inputs) {
  if (!tape) return false;
  return (inputs.on_grad_path() || ...);
}

template <typename S>
std::int64_t numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
  detail::check_finite(out, "add");
  if (detail::track(tape, a, b)) {
    mark_grad_path(out);
    TensorT<S> ca = a, cb = b, co = out;
    tape->record([ca, cb, co]() mutable {
      const S* g = co.grad();
      if (ca.on_grad_path()) {
        S* ga = ca.grad();
        for (std::int64_t i = 0; i < ca.size(); ++i) ga[i] += g[i];
      }
      if (cb.on_grad_path()) {
        S* gb = cb.grad();
        for (std::int64_t i = 0; i < cb.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> sub(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  detail::check_finite(out, "sub");
  if (detail::track(tape, a, b)) {
    mark_grad_path(out);
    TensorT<S> ca = a, cb = b, co = out;
    tape->record([ca, cb, co]() mutable {
      const S* g = co.grad();
      if (ca.on_grad_path()) {
        S* ga = ca.grad();
        for (std::int64_t i = 0; i < ca.size(); ++i) ga[i] += g[i];
      }
      if (cb.on_grad_path()) {
        S* gb = cb.grad();
        for (std::int64_t i = 0; i < cb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> mul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::check_finite(out, "mul");
  if (detail::track(tape, a, b)) {
    mark_grad_path(out);
    TensorT<S> ca = a, cb = b, co = out;
    tape->record([ca, cb, co]() mutable {
      const S* g = co.grad();
      if (ca.on_grad_path()) {
        S* ga = ca.grad();
        for (std::int64_t i = 0; i < ca.size(); ++i) ga[i] += g[i] * cb.data()[i];
      }
      if (cb.on_grad_path()) {
        S* gb = cb.grad();
        for (std::int64_t i = 0; i < cb.size(); ++i) gb[i] += g[i] * ca.data()[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> scale(TapeT<S>* tape, const TensorT<S>& a, S factor) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * factor;
  detail::check_finite(out, "scale");
  if (detail::track(tape, a)) {
    mark_grad_path(out);
    TensorT<S> ca = a, co = out;
    tape->record([ca, co, factor]() mutable {
      const S* g = co.grad();
      S* ga = ca.grad();
      for (std::int64_t i = 0; i < ca.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

// Adds a length-D bias vector to every row of a [R x D] matrix. The only
// broadcasting the engine supports.
template <typename S>
TensorT<S> add_bias(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_bias: expected [RxD] input and [D] bias");
  int rows = x.dim(0), cols = x.dim(1);
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.data()[r * cols + c] = x.data()[r * cols + c] + bias.data()[c];
  detail::check_finite(out, "add_bias");
  if (detail::track(tape, x, bias)) {
    mark_grad_path(out);
    TensorT<S> cx = x, cb = bias, co = out;
    tape->record([cx, cb, co, rows, cols]() mutable {
      const S* g = co.grad();
      if (cx.on_grad_path()) {
        S* gx = cx.grad();
        for (std::int64_t i = 0; i < cx.size(); ++i) gx[i] += g[i];
      }
      if (cb.on_grad_path()) {
        S* gb = cb.grad();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul / transpose
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n]; ikj order so the inner loop is contiguous.
template <typename S>
void matmul_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::int64_t>(i) * k;
    S* crow = c + static_cast<std::int64_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      S av = arow[t];
      if (av == S(0)) continue;
      const S* brow = b + static_cast<std::int64_t>(t) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T where B is [n x k].
template <typename S>
void matmul_bt_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::int64_t>(i) * k;
    S* crow = c + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = b + static_cast<std::int64_t>(j) * k;
      S acc = S(0);
      for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
      crow[j] += acc;
    }
  }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n].
template <typename S>
void matmul_at_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::int64_t>(i) * k;
    const S* brow = b + static_cast<std::int64_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      S av = arow[t];
      if (av == S(0)) continue;
      S* crow = c + static_cast<std::int64_t>(t) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree " + detail::shape_str(a.shape()) +
                     " vs " + detail::shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<S> out = TensorT<S>::zeros({m, n});
  detail::matmul_acc(a.data(), b.data(), out.data(), m, k, n);
  detail::check_finite(out, "matmul");
  if (detail::track(tape, a, b)) {
    mark_grad_path(out);
    TensorT<S> ca = a, cb = b, co = out;
    tape->record([ca, cb, co, m, k, n]() mutable {
      const S* g = co.grad();
      if (ca.on_grad_path()) detail::matmul_bt_acc(g, cb.data(), ca.grad(), m, n, k);
      if (cb.on_grad_path()) detail::matmul_at_acc(ca.data(), g, cb.grad(), m, k, n);
    });
  }
  return out;
}

template <typename S>
TensorT<S> transpose(TapeT<S>* tape, const TensorT<S>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor");
  int m = a.dim(0), n = a.dim(1);
  TensorT<S> out = TensorT<S>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (detail::track(tape, a)) {
    mark_grad_path(out);
    TensorT<S> ca = a, co = out;
    tape->record([ca, co, m, n]() mutable {
      const S* g = co.grad();
      S* ga = ca.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// Gathers rows of a [V x D] table: out[i] = table[ids[i]].
template <typename S>
TensorT<S> embedding_rows(TapeT<S>* tape, const TensorT<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_rows: table must be rank-2");
  int v = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ContractError("embedding_rows: empty id list");
  for (int id : ids)
    if (id < 0 || id >= v) throw ContractError("embedding_rows: id out of range");
  int rows = static_cast<int>(ids.size());
  TensorT<S> out = TensorT<S>::zeros({rows, d});
  for (int r = 0; r < rows; ++r)
    std::copy_n(table.data() + static_cast<std::int64_t>(ids[static_cast<size_t>(r)]) * d, d,
                out.data() + static_cast<std::int64_t>(r) * d);
  if (detail::track(tape, table)) {
    mark_grad_path(out);
    TensorT<S> ct = table, co = out;
    std::vector<int> cids = ids;
    tape->record([ct, co, cids, d]() mutable {
      const S* g = co.grad();
      S* gt = ct.grad();
      for (size_t r = 0; r < cids.size(); ++r) {
        S* dst = gt + static_cast<std::int64_t>(cids[r]) * d;
        const S* src = g + static_cast<std::int64_t>(r) * d;
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
inline S gelu_scalar(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  S inner = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <typename S>
inline S gelu_grad_scalar(S x) {
  const S c = S(0.7978845608028654);
  S inner = c * (x + S(0.044715) * x * x * x);
  S t = std::tanh(inner);
  S dinner = c * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * dinner;
}

// In-place softmax of a contiguous lane with max subtraction.
template <typename S>
inline void softmax_lane(const S* in, S* out, int n) {
  S mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  S sum = S(0);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  S inv = S(1) / sum;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

}  // namespace detail

// GELU with the tanh approximation.
template <typename S>
TensorT<S> gelu(TapeT<S>* tape, const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out.data()[i] = detail::gelu_scalar(x.data()[i]);
  detail::check_finite(out, "gelu");
  if (detail::track(tape, x)) {
    mark_grad_path(out);
    TensorT<S> cx = x, co = out;
    tape->record([cx, co]() mutable {
      const S* g = co.grad();
      S* gx = cx.grad();
      for (std::int64_t i = 0; i < cx.size(); ++i)
        gx[i] += g[i] * detail::gelu_grad_scalar(cx.data()[i]);
    });
  }
  return out;
}

// Softmax along `axis`, computed with max subtraction.
template <typename S>
TensorT<S> softmax(TapeT<S>* tape, const TensorT<S>& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  int n = x.dim(axis);
  std::int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);

  TensorT<S> out = TensorT<S>::zeros(x.shape());
  std::vector<S> lane_in(static_cast<size_t>(n)), lane_out(static_cast<size_t>(n));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in_i = 0; in_i < inner; ++in_i) {
      std::int64_t base = o * n * inner + in_i;
      for (int i = 0; i < n; ++i) lane_in[static_cast<size_t>(i)] = x.data()[base + i * inner];
      detail::softmax_lane(lane_in.data(), lane_out.data(), n);
      for (int i = 0; i < n; ++i) out.data()[base + i * inner] = lane_out[static_cast<size_t>(i)];
    }
  }
  detail::check_finite(out, "softmax");
  if (detail::track(tape, x)) {
    mark_grad_path(out);
    TensorT<S> cx = x, co = out;
    tape->record([cx, co, n, inner, outer]() mutable {
      const S* g = co.grad();
      const S* p = co.data();
      S* gx = cx.grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in_i = 0; in_i < inner; ++in_i) {
          std::int64_t base = o * n * inner + in_i;
          S dot = S(0);
          for (int i = 0; i < n; ++i) dot += g[base + i * inner] * p[base + i * inner];
          for (int i = 0; i < n; ++i)
            gx[base + i * inner] += p[base + i * inner] * (g[base + i * inner] - dot);
        }
      }
    });
  }
  return out;
}

// Row-wise log-softmax of a [R x V] matrix.
template <typename S>
TensorT<S> log_softmax_rows(TapeT<S>* tape, const TensorT<S>& x) {
  if (x.rank() != 2) throw ShapeError("log_softmax_rows: expected rank-2 input");
  int rows = x.dim(0), n = x.dim(1);
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (int r = 0; r < rows; ++r) {
    const S* in = x.data() + static_cast<std::int64_t>(r) * n;
    S* o = out.data() + static_cast<std::int64_t>(r) * n;
    S mx = in[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    S sum = S(0);
    for (int i = 0; i < n; ++i) sum += std::exp(in[i] - mx);
    S lse = mx + std::log(sum);
    for (int i = 0; i < n; ++i) o[i] = in[i] - lse;
  }
  detail::check_finite(out, "log_softmax_rows");
  if (detail::track(tape, x)) {
    mark_grad_path(out);
    TensorT<S> cx = x, co = out;
    tape->record([cx, co, rows, n]() mutable {
      const S* g = co.grad();
      const S* lsm = co.data();
      S* gx = cx.grad();
      for (int r = 0; r < rows; ++r) {
        std::int64_t base = static_cast<std::int64_t>(r) * n;
        S gsum = S(0);
        for (int i = 0; i < n; ++i) gsum += g[base + i];
        for (int i = 0; i < n; ++i)
          gx[base + i] += g[base + i] - std::exp(lsm[base + i]) * gsum;
      }
    });
  }
  return out;
}

// Layer normalization over the last axis of a [R x D] matrix, then affine.
template <typename S>
TensorT<S> layer_norm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S epsilon = S(1e-5)) {
  if (x.rank() != 2) throw ShapeError("layer_norm: expected rank-2 input");
  int rows = x.dim(0), d = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw ShapeError("layer_norm: gain/bias must match the last axis");
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(x.size()));
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const S* in = x.data() + static_cast<std::int64_t>(r) * d;
    S mean = S(0);
    for (int c = 0; c < d; ++c) mean += in[c];
    mean /= S(d);
    S var = S(0);
    for (int c = 0; c < d; ++c) {
      S dv = in[c] - mean;
      var += dv * dv;
    }
    var /= S(d);
    S istd = S(1) / std::sqrt(var + epsilon);
    (*inv_std)[static_cast<size_t>(r)] = istd;
    S* xh = xhat->data() + static_cast<std::int64_t>(r) * d;
    S* o = out.data() + static_cast<std::int64_t>(r) * d;
    for (int c = 0; c < d; ++c) {
      xh[c] = (in[c] - mean) * istd;
      o[c] = xh[c] * gain.data()[c] + bias.data()[c];
    }
  }
  detail::check_finite(out, "layer_norm");
  if (detail::track(tape, x, gain, bias)) {
    mark_grad_path(out);
    TensorT<S> cx = x, cg = gain, cb = bias, co = out;
    tape->record([cx, cg, cb, co, xhat, inv_std, rows, d]() mutable {
      const S* g = co.grad();
      for (int r = 0; r < rows; ++r) {
        std::int64_t base = static_cast<std::int64_t>(r) * d;
        const S* xh = xhat->data() + base;
        if (cg.on_grad_path()) {
          S* gg = cg.grad();
          for (int c = 0; c < d; ++c) gg[c] += g[base + c] * xh[c];
        }
        if (cb.on_grad_path()) {
          S* gb = cb.grad();
          for (int c = 0; c < d; ++c) gb[c] += g[base + c];
        }
        if (cx.on_grad_path()) {
          S istd = (*inv_std)[static_cast<size_t>(r)];
          S sum_dxh = S(0), sum_dxh_xh = S(0);
          for (int c = 0; c < d; ++c) {
            S dxh = g[base + c] * cg.data()[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
          }
          S* gx = cx.grad();
          for (int c = 0; c < d; ++c) {
            S dxh = g[base + c] * cg.data()[c];
            gx[base + c] += istd * (dxh - sum_dxh / S(d) - xh[c] * sum_dxh_xh / S(d));
          }
        }
      }
    });
  }
  return out;
}

// Inverted dropout with a caller-provided stream; identity when rate == 0.
template <typename S>
TensorT<S> dropout(TapeT<S>* tape, const TensorT<S>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  auto mask = std::make_shared<std::vector<S>>(static_cast<size_t>(x.size()));
  S keep_inv = S(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < x.size(); ++i) {
    S m = rng.uniform() >= rate ? keep_inv : S(0);
    (*mask)[static_cast<size_t>(i)] = m;
    out.data()[i] = x.data()[i] * m;
  }
  if (detail::track(tape, x)) {
    mark_grad_path(out);
    TensorT<S> cx = x, co = out;
    tape->record([cx, co, mask]() mutable {
      const S* g = co.grad();
      S* gx = cx.grad();
      for (std::int64_t i = 0; i < cx.size(); ++i) gx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    });
  }
  return out;
}

// Sum of all elements, as a scalar tensor.
template <typename S>
TensorT<S> sum_all(TapeT<S>* tape, const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros({1});
  S acc = S(0);
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  out.data()[0] = acc;
  detail::check_finite(out, "sum_all");
  if (detail::track(tape, x)) {
    mark_grad_path(out);
    TensorT<S> cx = x, co = out;
    tape->record([cx, co]() mutable {
      S g = co.grad()[0];
      S* gx = cx.grad();
      for (std::int64_t i = 0; i < cx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fused attention
// ---------------------------------------------------------------------------

using Segments = std::vector<std::pair<int, int>>;  // [row_begin, row_end) per example

// Causal multi-head self-attention over packed rows. Row t of a segment
// attends to rows [0..t] of the same segment; later rows are excluded from
// the softmax entirely, so earlier outputs are bit-exact invariant to them.
template <typename S>
TensorT<S> causal_self_attention(TapeT<S>* tape, const TensorT<S>& q, const TensorT<S>& k,
                                 const TensorT<S>& v, const Segments& segments, int heads) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("causal_self_attention: q/k/v must share a rank-2 shape");
  int d = q.dim(1);
  if (heads <= 0 || d % heads != 0)
    throw ShapeError("causal_self_attention: head count must divide model dim");
  int dh = d / heads;
  S inv_sqrt = S(1) / std::sqrt(S(dh));

  TensorT<S> out = TensorT<S>::zeros(q.shape());
  // Lower-triangular attention probabilities, packed per segment and head.
  auto probs = std::make_shared<std::vector<S>>();
  std::int64_t total = 0;
  for (auto [b, e] : segments) {
    std::int64_t t = e - b;
    total += t * (t + 1) / 2;
  }
  probs->resize(static_cast<size_t>(total) * heads);

  std::int64_t pbase = 0;
  std::vector<S> row(static_cast<size_t>(1));
  for (auto [b, e] : segments) {
    int t_len = e - b;
    for (int h = 0; h < heads; ++h) {
      int hc = h * dh;
      for (int t = 0; t < t_len; ++t) {
        const S* qrow = q.data() + static_cast<std::int64_t>(b + t) * d + hc;
        // scores over keys 0..t
        if (static_cast<int>(row.size()) < t + 1) row.resize(static_cast<size_t>(t + 1));
        for (int j = 0; j <= t; ++j) {
          const S* krow = k.data() + static_cast<std::int64_t>(b + j) * d + hc;
          S acc = S(0);
          for (int c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
          row[static_cast<size_t>(j)] = acc * inv_sqrt;
        }
        S* p = probs->data() + pbase + static_cast<std::int64_t>(h) * (static_cast<std::int64_t>(t_len) * (t_len + 1) / 2) +
               static_cast<std::int64_t>(t) * (t + 1) / 2;
        detail::softmax_lane(row.data(), p, t + 1);
        S* orow = out.data() + static_cast<std::int64_t>(b + t) * d + hc;
        for (int j = 0; j <= t; ++j) {
          const S* vrow = v.data() + static_cast<std::int64_t>(b + j) * d + hc;
          S pj = p[j];
          for (int c = 0; c < dh; ++c) orow[c] += pj * vrow[c];
        }
      }
    }
    pbase += static_cast<std::int64_t>(heads) * t_len * (t_len + 1) / 2;
  }
  detail::check_finite(out, "causal_self_attention");

  if (detail::track(tape, q, k, v)) {
    mark_grad_path(out);
    TensorT<S> cq = q, ck = k, cv = v, co = out;
    Segments segs = segments;
    tape->record([cq, ck, cv, co, segs, probs, heads, d, dh, inv_sqrt]() mutable {
      const S* g = co.grad();
      S* gq = cq.grad();
      S* gk = ck.grad();
      S* gv = cv.grad();
      std::int64_t pbase = 0;
      std::vector<S> dp, ds;
      for (auto [b, e] : segs) {
        int t_len = e - b;
        std::int64_t tri = static_cast<std::int64_t>(t_len) * (t_len + 1) / 2;
        for (int h = 0; h < heads; ++h) {
          int hc = h * dh;
          for (int t = 0; t < t_len; ++t) {
            const S* p = probs->data() + pbase + static_cast<std::int64_t>(h) * tri +
                         static_cast<std::int64_t>(t) * (t + 1) / 2;
            const S* grow = g + static_cast<std::int64_t>(b + t) * d + hc;
            if (static_cast<int>(dp.size()) < t + 1) {
              dp.resize(static_cast<size_t>(t + 1));
              ds.resize(static_cast<size_t>(t + 1));
            }
            // dP = dO . V^T ; dV += P^T dO
            for (int j = 0; j <= t; ++j) {
              const S* vrow = cv.data() + static_cast<std::int64_t>(b + j) * d + hc;
              S acc = S(0);
              for (int c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
              dp[static_cast<size_t>(j)] = acc;
              S* gvrow = gv + static_cast<std::int64_t>(b + j) * d + hc;
              S pj = p[j];
              for (int c = 0; c < dh; ++c) gvrow[c] += pj * grow[c];
            }
            // dS = P * (dP - sum(dP*P))
            S dot = S(0);
            for (int j = 0; j <= t; ++j) dot += dp[static_cast<size_t>(j)] * p[j];
            for (int j = 0; j <= t; ++j)
              ds[static_cast<size_t>(j)] = p[j] * (dp[static_cast<size_t>(j)] - dot) * inv_sqrt;
            // dQ += dS . K ; dK += dS^T . Q
            S* gqrow = gq + static_cast<std::int64_t>(b + t) * d + hc;
            const S* qrow = cq.data() + static_cast<std::int64_t>(b + t) * d + hc;
            for (int j = 0; j <= t; ++j) {
              const S* krow = ck.data() + static_cast<std::int64_t>(b + j) * d + hc;
              S* gkrow = gk + static_cast<std::int64_t>(b + j) * d + hc;
              S dsj = ds[static_cast<size_t>(j)];
              for (int c = 0; c < dh; ++c) {
                gqrow[c] += dsj * krow[c];
                gkrow[c] += dsj * qrow[c];
              }
            }
          }
        }
        pbase += static_cast<std::int64_t>(heads) * tri;
      }
    });
  }
  return out;
}

// Concatenates rank-2 tensors along rows. Gradient scatters back per part.
template <typename S>
TensorT<S> concat_rows(TapeT<S>* tape, const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty part list");
  int d = parts[0].dim(1);
  int rows = 0;
  for (const TensorT<S>& p : parts) {
    if (p.rank() != 2 || p.dim(1) != d)
      throw ShapeError("concat_rows: parts must be rank-2 with equal width");
    rows += p.dim(0);
  }
  TensorT<S> out = TensorT<S>::zeros({rows, d});
  std::int64_t offset = 0;
  for (const TensorT<S>& p : parts) {
    std::copy_n(p.data(), p.size(), out.data() + offset);
    offset += p.size();
  }
  bool need = tape && std::any_of(parts.begin(), parts.end(),
                                  [](const TensorT<S>& t) { return t.on_grad_path(); });
  if (need) {
    mark_grad_path(out);
    std::vector<TensorT<S>> cp = parts;
    TensorT<S> co = out;
    tape->record([cp, co]() mutable {
      const S* g = co.grad();
      std::int64_t offset = 0;
      for (TensorT<S>& p : cp) {
        if (p.on_grad_path()) {
          S* gp = p.grad();
          for (std::int64_t i = 0; i < p.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.size();
      }
    });
  }
  return out;
}

// Multi-head cross-attention: packed query rows attend to the packed
// key/value rows of their own segment (one encoded image per segment).
template <typename S>
TensorT<S> cross_attention(TapeT<S>* tape, const TensorT<S>& q, const TensorT<S>& k,
                           const TensorT<S>& v, const Segments& q_segments,
                           const Segments& kv_segments, int heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeError("cross_attention: operands must be rank-2");
  if (k.shape() != v.shape() || k.dim(1) != q.dim(1))
    throw ShapeError("cross_attention: key/value widths must match queries");
  if (q_segments.size() != kv_segments.size())
    throw ShapeError("cross_attention: one key/value segment per query segment");
  int d = q.dim(1);
  if (heads <= 0 || d % heads != 0)
    throw ShapeError("cross_attention: head count must divide model dim");
  int dh = d / heads;
  S inv_sqrt = S(1) / std::sqrt(S(dh));

  TensorT<S> out = TensorT<S>::zeros(q.shape());
  auto probs = std::make_shared<std::vector<S>>();
  std::int64_t total = 0;
  for (size_t s = 0; s < q_segments.size(); ++s) {
    total += static_cast<std::int64_t>(q_segments[s].second - q_segments[s].first) *
             (kv_segments[s].second - kv_segments[s].first);
  }
  probs->resize(static_cast<size_t>(total) * heads);

  std::vector<S> scores;
  std::int64_t pbase = 0;
  for (size_t s = 0; s < q_segments.size(); ++s) {
    auto [b, e] = q_segments[s];
    auto [kb, ke] = kv_segments[s];
    int t_len = e - b, n = ke - kb;
    if (static_cast<int>(scores.size()) < n) scores.resize(static_cast<size_t>(n));
    for (int h = 0; h < heads; ++h) {
      int hc = h * dh;
      for (int t = 0; t < t_len; ++t) {
        const S* qrow = q.data() + static_cast<std::int64_t>(b + t) * d + hc;
        for (int j = 0; j < n; ++j) {
          const S* krow = k.data() + static_cast<std::int64_t>(kb + j) * d + hc;
          S acc = S(0);
          for (int c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
          scores[static_cast<size_t>(j)] = acc * inv_sqrt;
        }
        S* p = probs->data() + pbase + (static_cast<std::int64_t>(h) * t_len + t) * n;
        detail::softmax_lane(scores.data(), p, n);
        S* orow = out.data() + static_cast<std::int64_t>(b + t) * d + hc;
        for (int j = 0; j < n; ++j) {
          const S* vrow = v.data() + static_cast<std::int64_t>(kb + j) * d + hc;
          S pj = p[j];
          for (int c = 0; c < dh; ++c) orow[c] += pj * vrow[c];
        }
      }
    }
    pbase += static_cast<std::int64_t>(heads) * t_len * n;
  }
  detail::check_finite(out, "cross_attention");

  if (detail::track(tape, q, k, v)) {
    mark_grad_path(out);
    TensorT<S> cq = q, ck = k, cv = v, co = out;
    Segments qsegs = q_segments, ksegs = kv_segments;
    tape->record([cq, ck, cv, co, qsegs, ksegs, probs, heads, d, dh, inv_sqrt]() mutable {
      const S* g = co.grad();
      S* gq = cq.on_grad_path() ? cq.grad() : nullptr;
      S* gk = ck.on_grad_path() ? ck.grad() : nullptr;
      S* gv = cv.on_grad_path() ? cv.grad() : nullptr;
      std::int64_t pbase = 0;
      std::vector<S> dp, ds;
      for (size_t s = 0; s < qsegs.size(); ++s) {
        auto [b, e] = qsegs[s];
        auto [kb, ke] = ksegs[s];
        int t_len = e - b, n = ke - kb;
        if (static_cast<int>(dp.size()) < n) {
          dp.resize(static_cast<size_t>(n));
          ds.resize(static_cast<size_t>(n));
        }
        for (int h = 0; h < heads; ++h) {
          int hc = h * dh;
          for (int t = 0; t < t_len; ++t) {
            const S* p = probs->data() + pbase + (static_cast<std::int64_t>(h) * t_len + t) * n;
            const S* grow = g + static_cast<std::int64_t>(b + t) * d + hc;
            for (int j = 0; j < n; ++j) {
              const S* vrow = cv.data() + static_cast<std::int64_t>(kb + j) * d + hc;
              S acc = S(0);
              for (int c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
              dp[static_cast<size_t>(j)] = acc;
              if (gv) {
                S* gvrow = gv + static_cast<std::int64_t>(kb + j) * d + hc;
                S pj = p[j];
                for (int c = 0; c < dh; ++c) gvrow[c] += pj * grow[c];
              }
            }
            S dot = S(0);
            for (int j = 0; j < n; ++j) dot += dp[static_cast<size_t>(j)] * p[j];
            for (int j = 0; j < n; ++j)
              ds[static_cast<size_t>(j)] = p[j] * (dp[static_cast<size_t>(j)] - dot) * inv_sqrt;
            const S* qrow = cq.data() + static_cast<std::int64_t>(b + t) * d + hc;
            S* gqrow = gq ? gq + static_cast<std::int64_t>(b + t) * d + hc : nullptr;
            for (int j = 0; j < n; ++j) {
              const S* krow = ck.data() + static_cast<std::int64_t>(kb + j) * d + hc;
              S dsj = ds[static_cast<size_t>(j)];
              if (gqrow)
                for (int c = 0; c < dh; ++c) gqrow[c] += dsj * krow[c];
              if (gk) {
                S* gkrow = gk + static_cast<std::int64_t>(kb + j) * d + hc;
                for (int c = 0; c < dh; ++c) gkrow[c] += dsj * qrow[c];
              }
            }
          }
        }
        pbase += static_cast<std::int64_t>(heads) * t_len * n;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Label-smoothed softmax cross-entropy, averaged over rows where
// include_mask is nonzero. Target distribution q = (1-eps)*onehot + eps/V.
template <typename S>
TensorT<S> smoothed_cross_entropy(TapeT<S>* tape, const TensorT<S>& logits,
                                  const std::vector<int>& targets,
                                  const std::vector<std::uint8_t>& include_mask, double eps) {
  if (logits.rank() != 2) throw ShapeError("smoothed_cross_entropy: logits must be [R x V]");
  int rows = logits.dim(0), vsize = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(include_mask.size()) != rows)
    throw ShapeError("smoothed_cross_entropy: targets/mask must have one entry per row");
  if (eps < 0.0 || eps >= 1.0) throw ContractError("smoothed_cross_entropy: eps in [0,1)");
  std::int64_t included = 0;
  for (auto m : include_mask) included += m ? 1 : 0;
  if (included == 0) throw ContractError("smoothed_cross_entropy: all positions masked");

  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(logits.size()));
  S e = static_cast<S>(eps);
  S unif = e / S(vsize);
  S loss = S(0);
  for (int r = 0; r < rows; ++r) {
    if (!include_mask[static_cast<size_t>(r)]) continue;
    int tgt = targets[static_cast<size_t>(r)];
    if (tgt < 0 || tgt >= vsize) throw ContractError("smoothed_cross_entropy: target out of range");
    const S* in = logits.data() + static_cast<std::int64_t>(r) * vsize;
    S mx = in[0];
    for (int i = 1; i < vsize; ++i) mx = std::max(mx, in[i]);
    S sum = S(0);
    for (int i = 0; i < vsize; ++i) sum += std::exp(in[i] - mx);
    S lse = mx + std::log(sum);
    S* p = probs->data() + static_cast<std::int64_t>(r) * vsize;
    S row_loss = S(0);
    for (int i = 0; i < vsize; ++i) {
      S lsm = in[i] - lse;
      p[i] = std::exp(lsm);
      row_loss -= unif * lsm;
    }
    row_loss -= (S(1) - e) * (in[tgt] - lse);
    loss += row_loss;
  }
  TensorT<S> out = TensorT<S>::scalar(loss / S(included));
  detail::check_finite(out, "smoothed_cross_entropy");

  if (detail::track(tape, logits)) {
    mark_grad_path(out);
    TensorT<S> cl = logits, co = out;
    std::vector<int> ctg = targets;
    std::vector<std::uint8_t> cm = include_mask;
    tape->record([cl, co, ctg, cm, probs, rows, vsize, e, unif, included]() mutable {
      S g = co.grad()[0] / S(included);
      S* gl = cl.grad();
      for (int r = 0; r < rows; ++r) {
        if (!cm[static_cast<size_t>(r)]) continue;
        const S* p = probs->data() + static_cast<std::int64_t>(r) * vsize;
        S* grow = gl + static_cast<std::int64_t>(r) * vsize;
        int tgt = ctg[static_cast<size_t>(r)];
        for (int i = 0; i < vsize; ++i) grow[i] += g * (p[i] - unif);
        grow[tgt] -= g * (S(1) - e);
      }
    });
  }
  return out;
}

}  // namespace declab
