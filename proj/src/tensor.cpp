#include "fgseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

namespace fgseg {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const detail::Node& n) { return MapC(n.value.data(), n.rows, n.cols); }

void check_finite(std::span<const Real> v, const char* where) {
  for (Real x : v) {
    if (!std::isfinite(x)) throw TensorError(std::string("non-finite value in ") + where);
  }
}

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw TensorError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
  }
}

detail::Node& parent(detail::Node& n, std::size_t i) { return *n.parents[i]; }

thread_local bool t_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<Real>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, Real v, bool requires_grad) {
  return from(rows, cols, std::vector<Real>(rows * cols, v), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<Real> data,
                    bool requires_grad) {
  if (data.size() != rows * cols) {
    throw TensorError("data length " + std::to_string(data.size()) + " does not match shape " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  check_finite(data, "tensor construction");
  auto n = std::make_shared<detail::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(data.begin(), data.end());
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(Real v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

Real Tensor::item() const {
  if (!is_scalar()) throw TensorError("item() on non-scalar tensor " + dims(*this));
  return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.clear(); }

std::span<Real> Tensor::mutable_data() {
  if (node_->backward) throw TensorError("mutable_data() on a non-leaf tensor");
  return node_->value;
}

std::span<Real> Tensor::mutable_grad() { return node_->grad_buffer(); }

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::Node>();
  n->rows = rows();
  n->cols = cols();
  n->value = node_->value;
  return Tensor(std::move(n));
}

Tensor Tensor::make_result(std::size_t rows, std::size_t cols, Buffer value,
                           std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  check_finite(value, "forward pass");
  auto n = std::make_shared<detail::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool any = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.is_scalar()) throw TensorError("backward: loss must be scalar, got " + dims(loss));
  auto root = loss.node();
  if (root->graph_released) throw TensorError("backward: graph already consumed");
  if (!root->requires_grad) throw TensorError("backward: loss is detached from all parameters");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
    }
  }
  for (detail::Node* n : order) {
    if (!n->grad.empty()) check_finite(n->grad, "backward pass");
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->graph_released = true;
      // interior gradients are not observable after release
      if (n != root.get()) n->grad.clear();
    }
  }
}

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw TensorError("matmul: inner dimensions differ " + dims(a) + " * " + dims(b));
  }
  Buffer out(a.rows() * b.cols());
  Map(out.data(), a.rows(), b.cols()).noalias() = view(*a.node()) * view(*b.node());
  return Tensor::make_result(a.rows(), b.cols(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& pb = parent(n, 1);
    MapC g(n.grad.data(), n.rows, n.cols);
    if (pa.requires_grad) {
      Map(pa.grad_buffer().data(), pa.rows, pa.cols).noalias() += g * view(pb).transpose();
    }
    if (pb.requires_grad) {
      Map(pb.grad_buffer().data(), pb.rows, pb.cols).noalias() += view(pa).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  Buffer out(a.size());
  Map(out.data(), a.cols(), a.rows()) = view(*a.node()).transpose();
  return Tensor::make_result(a.cols(), a.rows(), std::move(out), {a}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    Map(pa.grad_buffer().data(), pa.rows, pa.cols) += MapC(n.grad.data(), n.rows, n.cols).transpose();
  });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, name);
  Buffer out(a.size());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i], db[i]);
  return Tensor::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [bwd](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& pb = parent(n, 1);
    Real* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    Real* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      auto [dfa, dfb] = bwd(pa.value[i], pb.value[i]);
      if (ga) ga[i] += n.grad[i] * dfa;
      if (gb) gb[i] += n.grad[i] * dfb;
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Deriv deriv) {
  Buffer out(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i]);
  return Tensor::make_result(a.rows(), a.cols(), std::move(out), {a}, [deriv](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& ga = pa.grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i] * deriv(pa.value[i], n.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](Real x, Real y) { return x + y; },
      [](Real, Real) { return std::pair<Real, Real>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](Real x, Real y) { return x - y; },
      [](Real, Real) { return std::pair<Real, Real>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](Real x, Real y) { return x * y; },
      [](Real x, Real y) { return std::pair<Real, Real>{y, x}; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw TensorError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + dims(row));
  }
  Buffer out(a.size());
  const std::size_t c = a.cols();
  auto da = a.data();
  auto dr = row.data();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = da[i * c + j] + dr[j];
  }
  return Tensor::make_result(a.rows(), c, std::move(out), {a, row}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& pr = parent(n, 1);
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    }
    if (pr.requires_grad) {
      auto& gr = pr.grad_buffer();
      for (std::size_t i = 0; i < n.rows; ++i) {
        for (std::size_t j = 0; j < n.cols; ++j) gr[j] += n.grad[i * n.cols + j];
      }
    }
  });
}

Tensor scale(const Tensor& a, Real s) {
  return unary_elementwise(
      a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary_elementwise(
      a, [s](Real x) { return x + s; }, [](Real, Real) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](Real x) { return x > 0 ? x : 0.0; }, [](Real x, Real) { return x > 0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, Real lo, Real hi) {
  if (lo > hi) throw TensorError("clamp: lo > hi");
  return unary_elementwise(
      a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sqrt0(const Tensor& a) {
  return unary_elementwise(
      a,
      [](Real x) {
        if (x < 0) throw TensorError("sqrt0: negative input");
        return std::sqrt(x);
      },
      [](Real, Real y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary_elementwise(
      a, [](Real x) { return x * x; }, [](Real x, Real) { return 2.0 * x; });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw TensorError("concat_rows: row counts differ " + dims(a) + " vs " + dims(b));
  }
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  Buffer out(r * c);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(da.begin() + i * ca, ca, out.begin() + i * c);
    std::copy_n(db.begin() + i * cb, cb, out.begin() + i * c + ca);
  }
  return Tensor::make_result(r, c, std::move(out), {a, b}, [ca, cb](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& pb = parent(n, 1);
    const std::size_t c = ca + cb;
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < ca; ++j) g[i * ca + j] += n.grad[i * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < cb; ++j) g[i * cb + j] += n.grad[i * c + ca + j];
    }
  });
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
  if (row.rows() != 1) throw TensorError("repeat_rows: expected a single row, got " + dims(row));
  const std::size_t c = row.cols();
  Buffer out(count * c);
  for (std::size_t i = 0; i < count; ++i) std::copy(row.data().begin(), row.data().end(), out.begin() + i * c);
  return Tensor::make_result(count, c, std::move(out), {row}, [](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < n.rows; ++i)
      for (std::size_t j = 0; j < n.cols; ++j) g[j] += n.grad[i * n.cols + j];
  });
}

Tensor max_pool_rows(const Tensor& a) {
  if (a.rows() == 0) throw TensorError("max_pool_rows: empty input");
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(c);
  std::vector<std::size_t> arg(c, 0);
  auto da = a.data();
  for (std::size_t j = 0; j < c; ++j) {
    Real best = da[j];
    for (std::size_t i = 1; i < r; ++i) {
      if (da[i * c + j] > best) {
        best = da[i * c + j];
        arg[j] = i;
      }
    }
    out[j] = best;
  }
  return Tensor::make_result(1, c, std::move(out), {a}, [arg = std::move(arg)](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    for (std::size_t j = 0; j < n.cols; ++j) g[arg[j] * n.cols + j] += n.grad[j];
  });
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw TensorError("mean_rows: empty input");
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(c, 0.0);
  auto da = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += da[i * c + j];
  for (auto& v : out) v /= static_cast<Real>(r);
  return Tensor::make_result(1, c, std::move(out), {a}, [r](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    const Real inv = 1.0 / static_cast<Real>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < n.cols; ++j) g[i * n.cols + j] += n.grad[j] * inv;
  });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0) throw TensorError("softmax_rows: empty row");
  Buffer out(r * c);
  auto da = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* x = da.data() + i * c;
    Real* y = out.data() + i * c;
    const Real mx = *std::max_element(x, x + c);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return Tensor::make_result(r, c, std::move(out), {a}, [](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    const std::size_t c = n.cols;
    for (std::size_t i = 0; i < n.rows; ++i) {
      const Real* y = n.value.data() + i * c;
      const Real* gy = n.grad.data() + i * c;
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor sq_euclid_rowpairs(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw TensorError("sq_euclid_rowpairs: feature widths differ " + dims(a) + " vs " + dims(b));
  }
  const std::size_t n = a.rows(), m = b.rows();
  Buffer out(n * m);
  const MapC va = view(*a.node()), vb = view(*b.node());
  const Eigen::VectorXd na = va.rowwise().squaredNorm(), nb = vb.rowwise().squaredNorm();
  Map d(out.data(), n, m);
  d.noalias() = -2.0 * va * vb.transpose();
  // Values below the cancellation error of the Gram expansion are exact zeros
  // (coincident rows).
  constexpr Real kCancel = 64 * std::numeric_limits<Real>::epsilon();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const Real scale_ij = na[i] + nb[j];
      const Real v = d(i, j) + scale_ij;
      d(i, j) = v <= kCancel * scale_ij ? 0.0 : v;
    }
  }
  return Tensor::make_result(n, m, std::move(out), {a, b}, [](detail::Node& node) {
    auto& pa = parent(node, 0);
    auto& pb = parent(node, 1);
    MapC g(node.grad.data(), node.rows, node.cols);
    // d/da_i = 2 * sum_j g_ij (a_i - b_j); d/db_j = -2 * sum_i g_ij (a_i - b_j)
    if (pa.requires_grad) {
      Map ga(pa.grad_buffer().data(), pa.rows, pa.cols);
      Eigen::VectorXd rs = g.rowwise().sum();
      ga += 2.0 * (rs.asDiagonal() * view(pa) - g * view(pb));
    }
    if (pb.requires_grad) {
      Map gb(pb.grad_buffer().data(), pb.rows, pb.cols);
      Eigen::VectorXd cs = g.colwise().sum().transpose();
      gb += 2.0 * (cs.asDiagonal() * view(pb) - g.transpose() * view(pa));
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw TensorError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") out of bounds for " + dims(a));
  }
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  Buffer out(r * w);
  auto da = a.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(da.begin() + i * c + begin, w, out.begin() + i * w);
  return Tensor::make_result(r, w, std::move(out), {a}, [begin, c](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < n.rows; ++i)
      for (std::size_t j = 0; j < n.cols; ++j) g[i * c + begin + j] += n.grad[i * n.cols + j];
  });
}

Tensor pad_cols(const Tensor& a, std::size_t width) {
  if (width < a.cols()) {
    throw TensorError("pad_cols: width " + std::to_string(width) + " is narrower than " + dims(a));
  }
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(r * width, 0.0);
  auto da = a.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(da.begin() + i * c, c, out.begin() + i * width);
  return Tensor::make_result(r, width, std::move(out), {a}, [c](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < n.rows; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[i * n.cols + j];
  });
}

Tensor row_normalize(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(r * c);
  Buffer sums(r, 0.0);
  auto da = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) sums[i] += da[i * c + j];
    if (!(sums[i] > 0)) throw TensorError("row_normalize: row " + std::to_string(i) + " has non-positive sum");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = da[i * c + j] / sums[i];
  }
  return Tensor::make_result(r, c, std::move(out), {a}, [sums = std::move(sums)](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    const std::size_t c = n.cols;
    // y = x / s: dx_k = (g_k - sum_j g_j y_j) / s
    for (std::size_t i = 0; i < n.rows; ++i) {
      const Real* y = n.value.data() + i * c;
      const Real* gy = n.grad.data() + i * c;
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += (gy[j] - dot) / sums[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  Real s = 0;
  for (Real x : a.data()) s += x;
  return Tensor::make_result(1, 1, {s}, {a}, [](detail::Node& n) {
    auto& g = parent(n, 0).grad_buffer();
    for (auto& v : g) v += n.grad[0];
  });
}

Tensor sum_squares(const Tensor& a) {
  Real s = 0;
  for (Real x : a.data()) s += x * x;
  return Tensor::make_result(1, 1, {s}, {a}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * pa.value[i] * n.grad[0];
  });
}

}  // namespace fgseg
