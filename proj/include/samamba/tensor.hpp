#pragma once

// Dense row-major tensors with a define-by-run reverse-mode tape.
//
// A Tensor<T> is a shared handle to an immutable value buffer plus an
// optional gradient buffer. Operations executed while a Tape<T> is active
// (see TapeScope) record a backward closure whenever any input requires a
// gradient. Tape::backward replays those closures in reverse recording order,
// which is a valid reverse topological order because an op can only consume
// tensors that already exist.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace samamba {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StaleTapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Trailing-dimension broadcast; extent-1 axes expand.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("incompatible shapes for broadcast: " + to_string(a) + " vs " +
                       to_string(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

enum class OpKind : std::uint8_t {
  kAdd, kSub, kMul, kDiv, kNeg, kAddScalar, kMulScalar, kPowScalar,
  kExp, kLog, kSqrt, kSigmoid, kSilu, kRelu, kSoftplus, kLogSigmoid, kSoftmax,
  kSum, kMean, kSumAxes, kMaxAxes,
  kReshape, kPermute, kConcat, kSlice, kIndexSelect, kFlip,
  kMatmul, kConv2d, kConvTranspose2d, kUpsampleBilinear,
  kLayerNorm, kBatchNorm, kSelectiveScan, kCosineGate,
  kCount
};

inline const char* op_name(OpKind k) {
  static constexpr const char* names[] = {
      "add", "sub", "mul", "div", "neg", "add_scalar", "mul_scalar", "pow_scalar",
      "exp", "log", "sqrt", "sigmoid", "silu", "relu", "softplus", "log_sigmoid", "softmax",
      "sum", "mean", "sum_axes", "max_axes",
      "reshape", "permute", "concat", "slice", "index_select", "flip",
      "matmul", "conv2d", "conv_transpose2d", "upsample_bilinear",
      "layer_norm", "batch_norm", "selective_scan", "cosine_gate"};
  static_assert(sizeof(names) / sizeof(names[0]) == static_cast<std::size_t>(OpKind::kCount));
  return names[static_cast<std::size_t>(k)];
}

inline std::optional<OpKind> op_from_name(const std::string& s) {
  for (std::size_t i = 0; i < static_cast<std::size_t>(OpKind::kCount); ++i)
    if (s == op_name(static_cast<OpKind>(i))) return static_cast<OpKind>(i);
  return std::nullopt;
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Process-wide switches used by the verification harness.
struct EngineFlags {
  bool check_finite = false;
  std::optional<OpKind> sign_flip;  // mutation fixture: negate one op's backward
};

inline EngineFlags& flags() {
  static EngineFlags f;
  return f;
}

/// Multiply-accumulate counter; ops add their analytic MAC count when enabled.
struct MacCounter {
  bool enabled = false;
  std::uint64_t macs = 0;
};

inline MacCounter& mac_counter() {
  thread_local MacCounter c;
  return c;
}

inline void count_macs(std::uint64_t n) {
  auto& c = mac_counter();
  if (c.enabled) c.macs += n;
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (numel(shape) != data.size())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(numel(shape), T(0)), requires_grad);
  }
  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(numel(shape), value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// In-place access; only for leaves (parameters, freshly built inputs).
  std::span<T> mutable_data() { return impl_->data; }
  const T* ptr() const { return impl_->data.data(); }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (impl_->data.size() != 1)
      throw ShapeError("item() on tensor of shape " + to_string(impl_->shape));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool r) { impl_->requires_grad = r; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }

  /// Copy of the values with no gradient linkage.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data, false); }

  bool same_node(const Tensor& o) const { return impl_ == o.impl_; }
  const std::shared_ptr<Impl>& impl() const { return impl_; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(impl_->shape, std::vector<U>(impl_->data.begin(), impl_->data.end()));
  }

 private:
  std::shared_ptr<Impl> impl_;
};

template <typename T>
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

  void record(OpKind kind, ImplPtr output, std::function<void()> backward) {
    if (consumed_) throw StaleTapeError("tape already consumed by backward(); re-run forward");
    entries_.push_back({kind, std::move(output), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw ShapeError("backward requires a scalar loss, got " + to_string(loss.shape()));
    const T one(1);
    backward(loss, std::span<const T>(&one, 1));
  }

  /// Vector-Jacobian product: seeds `out` with `seed` instead of a unit scalar.
  void backward(const Tensor<T>& out, std::span<const T> seed) {
    if (consumed_) throw StaleTapeError("backward() called twice without a fresh forward");
    if (seed.size() != out.size()) throw ShapeError("backward seed size does not match output " + to_string(out.shape()));
    if (entries_.empty()) throw StaleTapeError("backward() on an empty tape");
    auto& g = out.impl()->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    const auto flip = detail::flags().sign_flip;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      auto& out = *it->output;
      if (out.grad.size() != out.data.size()) continue;  // unreached
      if (flip && *flip == it->kind) {
        for (auto& v : out.grad) v = -v;
        it->backward();
        for (auto& v : out.grad) v = -v;
      } else {
        it->backward();
      }
    }
    consumed_ = true;
  }

  void clear() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  struct Entry {
    OpKind kind;
    ImplPtr output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording target for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suspends recording (inference paths, oracles).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape<T>()) { active_tape<T>() = nullptr; }
  ~NoGradScope() { active_tape<T>() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

template <typename T>
void check_finite(OpKind kind, const std::vector<T>& v) {
  if (!flags().check_finite) return;
  for (const T x : v)
    if (!std::isfinite(x))
      throw NonFiniteError(std::string("non-finite value produced by ") + op_name(kind));
}

template <typename T, typename Fn>
void invoke_backward(Fn& fn, const TensorImpl<T>& out) {
  if constexpr (std::is_invocable_v<Fn&, const std::vector<T>&, const std::vector<T>&>)
    fn(out.grad, out.data);
  else
    fn(out.grad);
}

/// True when an op over `inputs` will be recorded for backward.
template <typename T>
bool will_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!active_tape<T>()) return false;
  for (const auto* in : inputs)
    if (in->requires_grad()) return true;
  return false;
}

/// Builds an op output and registers `backward` when gradients are needed.
/// `backward(grad_out[, value_out])` must accumulate into the inputs' grads.
template <typename T, typename Fn>
Tensor<T> make_result(OpKind kind, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Fn&& backward) {
  check_finite(kind, data);
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = active_tape<T>();
  if (!tape) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  out.set_requires_grad(true);
  auto out_impl = out.impl();
  tape->record(kind, out_impl,
               [fn = std::forward<Fn>(backward), o = out_impl.get()]() mutable { invoke_backward<T>(fn, *o); });
  return out;
}

template <typename T, typename Fn>
Tensor<T> make_result_n(OpKind kind, Shape shape, std::vector<T> data,
                        const std::vector<Tensor<T>>& inputs, Fn&& backward) {
  check_finite(kind, data);
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = active_tape<T>();
  if (!tape) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.set_requires_grad(true);
  auto out_impl = out.impl();
  tape->record(kind, out_impl,
               [fn = std::forward<Fn>(backward), o = out_impl.get()]() mutable { invoke_backward<T>(fn, *o); });
  return out;
}

/// Gradient buffer of `t` if it participates in backward, else nullptr.
template <typename T>
T* grad_target(const std::shared_ptr<TensorImpl<T>>& t) {
  if (!t->requires_grad) return nullptr;
  return t->ensure_grad().data();
}

}  // namespace detail

}  // namespace samamba
