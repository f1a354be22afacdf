#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgseg {

using Real = double;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// 64-byte aligned storage. Vectorized kernels choose their loop split from
/// the buffer address, so a fixed alignment keeps results bit-identical
/// between runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

}  // namespace detail

using Buffer = std::vector<Real, detail::AlignedAllocator<Real>>;

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Buffer value;
  Buffer grad;  // empty until the first gradient arrives
  bool requires_grad = false;
  bool graph_released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return rows * cols; }
  Buffer& grad_buffer() {
    if (grad.empty()) grad.assign(size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major matrix with an optional reverse-mode tape.
///
/// Every tensor is two-dimensional; scalars are 1x1 and vectors are 1xC.
/// Copies share storage, so a Tensor behaves like a handle to an immutable
/// value plus a gradient slot.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, Real v, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<Real> data,
                     bool requires_grad = false);
  static Tensor scalar(Real v, bool requires_grad = false);

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  std::span<const Real> data() const { return node_->value; }
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  void zero_grad();

  /// In-place write access, only legal on leaves (parameters and inputs).
  std::span<Real> mutable_data();
  std::span<Real> mutable_grad();

  /// Same values, no history, no gradient.
  Tensor detach() const;

  // Internal: used by op implementations.
  static Tensor make_result(std::size_t rows, std::size_t cols, Buffer value,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Backpropagates from a scalar loss. The recorded graph is released
/// afterwards; calling backward on the same loss twice throws.
void backward(const Tensor& loss);

// ---- differentiable operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (N x C) plus a 1 x C row added to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, Real s);
Tensor add_scalar(const Tensor& a, Real s);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, Real lo, Real hi);
/// Elementwise sqrt with subgradient 0 at 0.
Tensor sqrt0(const Tensor& a);
Tensor square(const Tensor& a);

/// Row-wise concatenation: row i of the result is [a_i, b_i].
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Tiles a 1 x C tensor into n rows.
Tensor repeat_rows(const Tensor& row, std::size_t n);
/// Columnwise max over rows -> 1 x C. Ties route the gradient to the first row.
Tensor max_pool_rows(const Tensor& a);
/// Columnwise mean over rows -> 1 x C.
Tensor mean_rows(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
/// D[i][j] = ||a_i - b_j||^2.
Tensor sq_euclid_rowpairs(const Tensor& a, const Tensor& b);
/// Columns [begin, end).
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Appends zero columns up to `width`.
Tensor pad_cols(const Tensor& a, std::size_t width);
/// Divides every row by its sum. Rows must have positive sums.
Tensor row_normalize(const Tensor& a);
Tensor sum(const Tensor& a);
/// Sum of squared entries.
Tensor sum_squares(const Tensor& a);

}  // namespace fgseg
