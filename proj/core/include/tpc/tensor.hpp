#pragma once

// Dense row-major matrices of doubles with define-by-run reverse-mode
// differentiation. Every tensor is rank <= 2; vectors are 1 x n and scalars
// 1 x 1. A graph is recorded only through tensors that require gradients, so
// forward passes over frozen weights cost no more than plain evaluation.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tpc {

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
         bool requires_grad = false);

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Builds a matrix from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row_vector(std::vector<double> values);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;
  std::size_t size() const noexcept;
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }

  std::span<const double> values() const;
  /// Mutable access is reserved for leaves (parameters being updated between
  /// graphs); mutating an interior node would invalidate recorded graphs.
  std::span<double> mutable_values();
  double operator()(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const noexcept;
  void set_requires_grad(bool on);
  bool is_leaf() const noexcept;

  /// Gradient accumulated by backward(); all zeros if nothing reached it.
  std::vector<double> grad() const;
  bool has_grad() const noexcept;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Populates gradient buffers of every leaf reachable from `loss` that
/// requires gradients. Gradients accumulate across calls.
void backward(const Tensor& loss);

/// While alive, operations on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// ---- operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// Adds a 1 x cols row to every row of `a`.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
/// Multiplies every entry of `a` by the 1 x 1 tensor `s`.
Tensor scale_by(const Tensor& a, const Tensor& s);

Tensor sigmoid(const Tensor& a);
/// GELU, tanh approximation.
Tensor gelu(const Tensor& a);

/// Row-wise softmax. Mask entries must be 0 or -inf; masked positions come
/// out as exactly 0.
Tensor softmax_rows(const Tensor& x);
Tensor softmax_rows(const Tensor& x, const Tensor& mask);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean of squared differences over all entries; `target` is treated as a
/// constant.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

}  // namespace tpc
