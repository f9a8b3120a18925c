#include "tpc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tpc/errors.hpp"

namespace tpc {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[" << t.rows() << "x" << t.cols() << "]";
  return os.str();
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_nan(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (std::isnan(x)) throw NumericalError(std::string("NaN produced by ") + op);
  }
}

// Creates the result node. Parents and the backward closure are only kept
// when some input requires gradients.
thread_local bool g_grad_enabled = true;

Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn,
                   const char* op) {
  check_nan(value, op);
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  node->leaf = false;
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// C[M x N] (+)= A[M x K] * B[K x N]. Four rows of C share each load of B.
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = bp[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void transpose_into(const double* src, std::size_t rows, std::size_t cols,
                    std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// C[M x N] (+)= A[M x K] * B[N x K]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  thread_local std::vector<double> bt;
  transpose_into(b, n, k, bt);
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[M x N] (+)= A[K x M]^T * B[K x N]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  thread_local std::vector<double> at;
  transpose_into(a, k, m, at);
  gemm_nn(at.data(), b, c, m, k, n);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : node_(nullptr) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
               bool requires_grad) {
  if (values.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  node_ = std::make_shared<Node>();
  node_->rows = rows;
  node_->cols = cols;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->leaf = true;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value, bool requires_grad) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(1, 1, {value}, requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

std::size_t Tensor::rows() const noexcept { return node_ ? node_->rows : 0; }
std::size_t Tensor::cols() const noexcept { return node_ ? node_->cols : 0; }
std::size_t Tensor::size() const noexcept { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  if (!node_->leaf) throw ContractError("mutable_values: only leaves may be mutated");
  return node_->value;
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
  require_defined(*this, "operator()");
  if (r >= node_->rows || c >= node_->cols) throw ShapeError("index out of range");
  return node_->value[r * node_->cols + c];
}

double Tensor::item() const {
  require_defined(*this, "item");
  if (size() != 1) throw ContractError("item: tensor is not a scalar " + shape_str(*this));
  return node_->value[0];
}

bool Tensor::requires_grad() const noexcept { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  if (!node_->leaf) throw ContractError("set_requires_grad: only leaves");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const noexcept { return node_ && node_->leaf; }

std::vector<double> Tensor::grad() const {
  require_defined(*this, "grad");
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const noexcept { return node_ && !node_->grad.empty(); }

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(node_->rows, node_->cols, node_->value);
}

// ---- backward -------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_str(loss));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->leaf && n->backward_fn) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (!n->leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a) + " x " + shape_str(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result(
      m, n, std::move(out), {a.node(), b.node()},
      [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
        if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.ensure_grad().data(), k, m, n);
      },
      "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul_nt");
  require_defined(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a) + " x " +
                     shape_str(b) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result(
      m, n, std::move(out), {a.node(), b.node()},
      [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        // dA = dC * B ; dB = dC^T * A
        if (pa.requires_grad) gemm_nn(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
        if (pb.requires_grad) gemm_tn(self.grad.data(), pa.value.data(), pb.ensure_grad().data(), n, m, k);
      },
      "matmul_nt");
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto v = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_result(
      c, r, std::move(out), {a.node()},
      [r, c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
      },
      "transpose");
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node(), b.node()},
      [](Node& self) {
        for (int p = 0; p < 2; ++p) {
          Node& parent = *self.parents[p];
          if (!parent.requires_grad) continue;
          auto& g = parent.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node(), b.node()},
      [](Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (int p = 0; p < 2; ++p) {
          Node& parent = *self.parents[p];
          if (!parent.requires_grad) continue;
          auto& g = parent.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[p] * self.grad[i];
        }
      },
      "sub");
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_defined(a, "hadamard");
  require_defined(b, "hadamard");
  require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node(), b.node()},
      [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
      },
      "hadamard");
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_defined(a, "add_row");
  require_defined(row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                     shape_str(row));
  }
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  auto rv = row.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
  return make_result(
      r, c, std::move(out), {a.node(), row.node()},
      [r, c](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pr.requires_grad) {
          auto& g = pr.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
      },
      "add_row");
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= factor;
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node()},
      [factor](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
      },
      "scale");
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  require_defined(a, "scale_by");
  require_defined(s, "scale_by");
  if (s.size() != 1) throw ShapeError("scale_by: factor must be 1x1, got " + shape_str(s));
  const double f = s.item();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= f;
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node(), s.node()},
      [](Node& self) {
        Node& pa = *self.parents[0];
        Node& ps = *self.parents[1];
        const double f = ps.value[0];
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * self.grad[i];
        }
        if (ps.requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
          ps.ensure_grad()[0] += acc;
        }
      },
      "scale_by");
}

Tensor sigmoid(const Tensor& a) {
  require_defined(a, "sigmoid");
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node()},
      [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = self.value[i];
          g[i] += self.grad[i] * y * (1.0 - y);
        }
      },
      "sigmoid");
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  return make_result(
      a.rows(), a.cols(), std::move(out), {a.node()},
      [](Node& self) {
        Node& pa = *self.parents[0];
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = pa.value[i];
          const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
          const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
          g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
        }
      },
      "gelu");
}

// ---- softmax / normalization ------------------------------------------------

namespace {

Tensor softmax_impl(const Tensor& x, const Tensor* mask) {
  require_defined(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::span<const double> mv;
  if (mask != nullptr) {
    require_defined(*mask, "softmax_rows mask");
    require_same_shape(x, *mask, "softmax_rows mask");
    mv = mask->values();
    for (double m : mv) {
      if (!(m == 0.0 || (std::isinf(m) && m < 0))) {
        throw ContractError("softmax_rows: mask entries must be 0 or -inf");
      }
    }
  }
  auto xv = x.values();
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mv.empty() && mv[i * c + j] != 0.0) continue;
      mx = std::max(mx, xv[i * c + j]);
    }
    if (std::isinf(mx) && mx < 0) {
      throw ContractError("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mv.empty() && mv[i * c + j] != 0.0) continue;
      const double e = std::exp(xv[i * c + j] - mx);
      out[i * c + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  return make_result(
      r, c, std::move(out), {x.node()},
      [r, c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          const double* y = self.value.data() + i * c;
          const double* dy = self.grad.data() + i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
        }
      },
      "softmax_rows");
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, nullptr); }
Tensor softmax_rows(const Tensor& x, const Tensor& mask) { return softmax_impl(x, &mask); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(c));
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  // xhat and 1/sigma are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto inv_sigma = std::make_shared<std::vector<double>>(r);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      r, c, std::move(out), {x.node(), gain.node(), bias.node()},
      [r, c, xhat, inv_sigma](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * (*xhat)[i * c + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = self.grad[i * c + j] * pg.value[j];
              mean_d += d;
              mean_dh += d * (*xhat)[i * c + j];
            }
            mean_d *= inv_c;
            mean_dh *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = self.grad[i * c + j] * pg.value[j];
              g[i * c + j] += (*inv_sigma)[i] * (d - mean_d - (*xhat)[i * c + j] * mean_dh);
            }
          }
        }
      },
      "layer_norm");
}

// ---- structural -------------------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    r += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result(
      r, c, std::move(out), std::move(parents),
      [](Node& self) {
        std::size_t offset = 0;
        for (auto& parent : self.parents) {
          const std::size_t n = parent->value.size();
          if (parent->requires_grad) {
            auto& g = parent->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
          }
          offset += n;
        }
      },
      "concat_rows");
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_defined(a, "slice_rows");
  if (begin + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  auto av = a.values();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          av.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return make_result(
      count, c, std::move(out), {a.node()},
      [begin, c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
      },
      "slice_rows");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    c += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                  out.begin() + static_cast<std::ptrdiff_t>(i * c + offset));
    offset += pc;
  }
  return make_result(
      r, c, std::move(out), std::move(parents),
      [r, c](Node& self) {
        std::size_t offset = 0;
        for (auto& parent : self.parents) {
          const std::size_t pc = parent->cols;
          if (parent->requires_grad) {
            auto& g = parent->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += self.grad[i * c + offset + j];
          }
          offset += pc;
        }
      },
      "concat_cols");
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_defined(a, "slice_cols");
  if (begin + count > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t r = a.rows(), c = a.cols();
  auto av = a.values();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i * c + begin), count,
                out.begin() + static_cast<std::ptrdiff_t>(i * count));
  return make_result(
      r, count, std::move(out), {a.node()},
      [r, c, begin, count](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
      },
      "slice_cols");
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_defined(table, "gather_rows");
  const std::size_t c = table.cols();
  auto tv = table.values();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) throw ShapeError("gather_rows: id out of range");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result(
      ids.size(), c, std::move(out), {table.node()},
      [idx = std::move(idx), c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
      },
      "gather_rows");
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  auto av = a.values();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  return make_result(
      1, 1, {s}, {a.node()},
      [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& x : g) x += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_defined(prediction, "mse_loss");
  require_defined(target, "mse_loss");
  require_same_shape(prediction, target, "mse_loss");
  if (prediction.size() == 0) throw ShapeError("mse_loss: empty tensors");
  auto pv = prediction.values();
  auto tv = target.values();
  const std::size_t n = pv.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pv[i] - tv[i];
    acc += d * d;
  }
  std::vector<double> tgt(tv.begin(), tv.end());
  return make_result(
      1, 1, {acc / static_cast<double>(n)}, {prediction.node()},
      [tgt = std::move(tgt)](Node& self) {
        Node& pp = *self.parents[0];
        auto& g = pp.ensure_grad();
        const double f = 2.0 * self.grad[0] / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * (pp.value[i] - tgt[i]);
      },
      "mse_loss");
}

}  // namespace tpc
