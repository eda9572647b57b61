#include "gpht/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "gpht/error.hpp"

namespace gpht {

using Node = Array::Node;
using NodePtr = std::shared_ptr<Node>;

struct ArrayAccess {
  static Array wrap(NodePtr node) { return Array(std::move(node)); }
  static const NodePtr& ptr(const Array& a) { return a.node_; }
};

namespace {

thread_local bool g_grad_enabled = true;

const NodePtr& checked(const Array& a) {
  const auto& p = ArrayAccess::ptr(a);
  if (!p) throw UsageError("operation on an undefined Array");
  return p;
}

// Returns the gradient buffer of n, allocating it on first use, or nullptr
// when n does not participate in differentiation.
double* grad_of(Node& n) {
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad.data();
}

Array make_op(Shape shape, std::vector<double> values, std::initializer_list<Array> parents,
              std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->leaf = false;
  for (const auto& p : parents) {
    if (checked(p)->requires_grad && g_grad_enabled) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(checked(p));
    node->backward_fn = std::move(fn);
  }
  return ArrayAccess::wrap(std::move(node));
}

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

void require_same_shape(const char* op, const Array& a, const Array& b) {
  if (a.shape() != b.shape()) dim_error(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Array& a, std::size_t min_rank) {
  if (a.rank() < min_rank) {
    throw DimensionError(std::string(op) + ": expected rank >= " + std::to_string(min_rank) +
                         ", got " + shape_string(a.shape()));
  }
}

// c[m, n] += a[m, k] * b[k, n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// da[m, k] += dc[m, n] * b[k, n]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* dc, const double* b,
             double* da) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dci = dc + i * n;
    double* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += dci[j] * bp[j];
      dai[p] += acc;
    }
  }
}

// db[k, n] += a[m, k]^T * dc[m, n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* dc,
             double* db) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* dci = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += av * dci[j];
    }
  }
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Array -----------------------------------------------------------

Array Array::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Array Array::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Array(std::move(node));
}

Array Array::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Array::shape() const { return checked(*this)->shape; }
std::size_t Array::size() const { return checked(*this)->values.size(); }
std::span<const double> Array::values() const { return checked(*this)->values; }
std::span<double> Array::mutable_values() { return checked(*this)->values; }

double Array::item() const {
  if (size() != 1) throw UsageError("item() on array of shape " + shape_string(shape()));
  return node_->values[0];
}

bool Array::requires_grad() const { return checked(*this)->requires_grad; }

void Array::set_requires_grad(bool on) {
  auto& n = *checked(*this);
  if (!n.leaf) throw UsageError("requires_grad can only be toggled on leaf arrays");
  n.requires_grad = on;
}

bool Array::has_grad() const { return !checked(*this)->grad.empty(); }

std::span<const double> Array::grad() const {
  if (!has_grad()) throw UsageError("array has no gradient");
  return node_->grad;
}

void Array::zero_grad() { checked(*this)->grad.clear(); }

Array Array::clone() const {
  const auto& n = *checked(*this);
  return from(n.shape, n.values, n.requires_grad);
}

// ---- backward --------------------------------------------------------

void backward(const Array& loss) {
  const auto& root = checked(loss);
  if (root->values.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) return;
  if (!root->leaf && !root->backward_fn) {
    throw UsageError("backward called on a graph that was already released");
  }

  // Iterative post-order DFS; reverse of post-order is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad_of(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->leaf) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// ---- elementwise -----------------------------------------------------

Array add(const Array& a, const Array& b) {
  require_same_shape("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (auto& p : o.parents) {
      if (double* g = grad_of(*p)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

Array sub(const Array& a, const Array& b) {
  require_same_shape("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (double* g = grad_of(*o.parents[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Array mul(const Array& a, const Array& b) {
  require_same_shape("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& o) {
    Node& pa = *o.parents[0];
    Node& pb = *o.parents[1];
    if (double* g = grad_of(pa)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pb.values[i];
    }
    if (double* g = grad_of(pb)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pa.values[i];
    }
  });
}

Array scale(const Array& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_op(a.shape(), std::move(out), {a}, [factor](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

Array add_bias(const Array& a, const Array& bias) {
  require_rank("add_bias", a, 1);
  const std::size_t n = a.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) dim_error("add_bias", a.shape(), bias.shape());
  auto av = a.values(), bv = bias.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % n];
  return make_op(a.shape(), std::move(out), {a, bias}, [n](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (double* g = grad_of(*o.parents[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % n] += o.grad[i];
    }
  });
}

Array add_leading_rows(const Array& a, const Array& table) {
  require_rank("add_leading_rows", a, 2);
  const std::size_t rows = a.dim(a.rank() - 2);
  const std::size_t cols = a.shape().back();
  if (table.rank() != 2 || table.dim(1) != cols || table.dim(0) < rows) {
    dim_error("add_leading_rows", a.shape(), table.shape());
  }
  const std::size_t block = rows * cols;
  auto av = a.values(), tv = table.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + tv[i % block];
  return make_op(a.shape(), std::move(out), {a, table}, [block](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (double* g = grad_of(*o.parents[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % block] += o.grad[i];
    }
  });
}

Array affine_by_batch(const Array& a, std::span<const double> scales,
                      std::span<const double> shifts) {
  require_rank("affine_by_batch", a, 1);
  const std::size_t batch = a.dim(0);
  if (scales.size() != batch || shifts.size() != batch) {
    throw DimensionError("affine_by_batch: expected " + std::to_string(batch) +
                         " scale/shift pairs, got " + std::to_string(scales.size()) + "/" +
                         std::to_string(shifts.size()));
  }
  const std::size_t inner = a.size() / batch;
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < inner; ++i) {
      out[b * inner + i] = av[b * inner + i] * scales[b] + shifts[b];
    }
  }
  std::vector<double> s(scales.begin(), scales.end());
  return make_op(a.shape(), std::move(out), {a}, [s = std::move(s), inner](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s[i / inner];
    }
  });
}

Array gelu(const Array& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
  }
  return make_op(a.shape(), std::move(out), {a}, [](Node& o) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Node& p = *o.parents[0];
    if (double* g = grad_of(p)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double x = p.values[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        g[i] += o.grad[i] * (cdf + x * pdf);
      }
    }
  });
}

Array reshape(const Array& a, Shape shape) {
  if (shape_size(shape) != a.size()) dim_error("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op(std::move(shape), std::move(out), {a}, [](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Array sum(const Array& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_op({}, {total}, {a}, [](Node& o) {
    Node& p = *o.parents[0];
    if (double* g = grad_of(p)) {
      for (std::size_t i = 0; i < p.values.size(); ++i) g[i] += o.grad[0];
    }
  });
}

Array dropout(const Array& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  auto av = a.values();
  std::vector<double> mask(av.size());
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? inv : 0.0;
    out[i] = av[i] * mask[i];
  }
  return make_op(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * mask[i];
    }
  });
}

// ---- linear algebra --------------------------------------------------

Array matmul(const Array& a, const Array& b) {
  if (a.rank() < 2 || b.rank() < 2) dim_error("matmul", a.shape(), b.shape());
  const std::size_t k = a.shape().back();
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t n = b.shape().back();
  if (b.dim(b.rank() - 2) != k) dim_error("matmul", a.shape(), b.shape());

  Shape out_shape = a.shape();
  out_shape.back() = n;

  if (b.rank() == 2) {
    // Shared right operand: fold all leading dims of a into rows.
    const std::size_t rows = a.size() / k;
    std::vector<double> out(rows * n, 0.0);
    gemm_nn(rows, k, n, a.values().data(), b.values().data(), out.data());
    return make_op(std::move(out_shape), std::move(out), {a, b}, [rows, k, n](Node& o) {
      Node& pa = *o.parents[0];
      Node& pb = *o.parents[1];
      if (double* g = grad_of(pa)) gemm_nt(rows, k, n, o.grad.data(), pb.values.data(), g);
      if (double* g = grad_of(pb)) gemm_tn(rows, k, n, pa.values.data(), o.grad.data(), g);
    });
  }

  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    dim_error("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = a.size() / (m * k);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    gemm_nn(m, k, n, a.values().data() + t * m * k, b.values().data() + t * k * n,
            out.data() + t * m * n);
  }
  return make_op(std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n](Node& o) {
    Node& pa = *o.parents[0];
    Node& pb = *o.parents[1];
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for (std::size_t t = 0; t < batch; ++t) {
      const double* dc = o.grad.data() + t * m * n;
      if (ga) gemm_nt(m, k, n, dc, pb.values.data() + t * k * n, ga + t * m * k);
      if (gb) gemm_tn(m, k, n, pa.values.data() + t * m * k, dc, gb + t * k * n);
    }
  });
}

Array transpose_last2(const Array& a) {
  require_rank("transpose_last2", a, 2);
  const std::size_t r = a.dim(a.rank() - 2);
  const std::size_t c = a.shape().back();
  const std::size_t batch = a.size() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t t = 0; t < batch; ++t) {
    const double* src = av.data() + t * r * c;
    double* dst = out.data() + t * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
  }
  return make_op(std::move(shape), std::move(out), {a}, [batch, r, c](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t t = 0; t < batch; ++t) {
        const double* src = o.grad.data() + t * r * c;
        double* dst = g + t * r * c;
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += src[j * r + i];
        }
      }
    }
  });
}

Array split_heads(const Array& a, std::size_t heads) {
  if (a.rank() != 3 || heads == 0 || a.dim(2) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_string(a.shape()) + " into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t B = a.dim(0), L = a.dim(1), D = a.dim(2) / heads, H = heads;
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t d = 0; d < D; ++d)
          out[((b * H + h) * L + l) * D + d] = av[(b * L + l) * H * D + h * D + d];
  return make_op({B, H, L, D}, std::move(out), {a}, [B, L, H, D](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t d = 0; d < D; ++d)
              g[(b * L + l) * H * D + h * D + d] += o.grad[((b * H + h) * L + l) * D + d];
    }
  });
}

Array merge_heads(const Array& a) {
  if (a.rank() != 4) throw DimensionError("merge_heads: expected rank 4, got " + shape_string(a.shape()));
  const std::size_t B = a.dim(0), H = a.dim(1), L = a.dim(2), D = a.dim(3);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t d = 0; d < D; ++d)
          out[(b * L + l) * H * D + h * D + d] = av[((b * H + h) * L + l) * D + d];
  return make_op({B, L, H * D}, std::move(out), {a}, [B, L, H, D](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t l = 0; l < L; ++l)
            for (std::size_t d = 0; d < D; ++d)
              g[((b * H + h) * L + l) * D + d] += o.grad[(b * L + l) * H * D + h * D + d];
    }
  });
}

// ---- normalization and attention helpers -----------------------------

Array softmax_lastdim(const Array& a) {
  require_rank("softmax_lastdim", a, 1);
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    double mx = *std::max_element(x, x + n);
    if (!std::isfinite(mx)) mx = 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    const double inv = total > 0.0 ? 1.0 / total : 0.0;
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return make_op(a.shape(), std::move(out), {a}, [n, rows](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = o.values.data() + r * n;
        const double* dy = o.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
      }
    }
  });
}

Array layer_norm(const Array& a, const Array& gain, const Array& bias, double eps) {
  require_rank("layer_norm", a, 1);
  const std::size_t n = a.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != n) dim_error("layer_norm", a.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != n) dim_error("layer_norm", a.shape(), bias.shape());
  const std::size_t rows = a.size() / n;
  auto av = a.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(av.size());
  std::vector<double> xhat(av.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (x[j] - mean) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return make_op(a.shape(), std::move(out), {a, gain, bias},
                 [n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& o) {
                   Node& pa = *o.parents[0];
                   Node& pg = *o.parents[1];
                   double* ga = grad_of(pa);
                   double* gg = grad_of(pg);
                   double* gb = grad_of(*o.parents[2]);
                   std::vector<double> dxhat(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* dy = o.grad.data() + r * n;
                     const double* xh = xhat.data() + r * n;
                     for (std::size_t j = 0; j < n; ++j) {
                       if (gg) gg[j] += dy[j] * xh[j];
                       if (gb) gb[j] += dy[j];
                     }
                     if (!ga) continue;
                     double mean_d = 0.0, mean_dx = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       dxhat[j] = dy[j] * pg.values[j];
                       mean_d += dxhat[j];
                       mean_dx += dxhat[j] * xh[j];
                     }
                     mean_d /= static_cast<double>(n);
                     mean_dx /= static_cast<double>(n);
                     for (std::size_t j = 0; j < n; ++j) {
                       ga[r * n + j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                     }
                   }
                 });
}

Array causal_mask(const Array& a) {
  require_rank("causal_mask", a, 2);
  const std::size_t L = a.shape().back();
  if (a.dim(a.rank() - 2) != L) {
    throw DimensionError("causal_mask: trailing block must be square, got " +
                         shape_string(a.shape()));
  }
  const std::size_t blocks = a.size() / (L * L);
  auto av = a.values();
  std::vector<double> out(av.begin(), av.end());
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < blocks; ++t)
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = i + 1; j < L; ++j) out[(t * L + i) * L + j] = neg_inf;
  return make_op(a.shape(), std::move(out), {a}, [blocks, L](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t t = 0; t < blocks; ++t)
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j <= i; ++j) g[(t * L + i) * L + j] += o.grad[(t * L + i) * L + j];
    }
  });
}

// ---- token-level ops -------------------------------------------------

Array max_pool_within_token(const Array& tokens, std::size_t kernel) {
  require_rank("max_pool_within_token", tokens, 1);
  const std::size_t T = tokens.shape().back();
  if (kernel == 0 || T % kernel != 0) {
    throw ConfigError("pool kernel " + std::to_string(kernel) + " does not divide token length " +
                      std::to_string(T));
  }
  const std::size_t out_len = T / kernel;
  const std::size_t rows = tokens.size() / T;
  Shape shape = tokens.shape();
  shape.back() = out_len;
  auto tv = tokens.values();
  std::vector<double> out(rows * out_len);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t w = 0; w < out_len; ++w) {
      std::size_t best = r * T + w * kernel;
      for (std::size_t j = 1; j < kernel; ++j) {
        if (tv[r * T + w * kernel + j] > tv[best]) best = r * T + w * kernel + j;
      }
      out[r * out_len + w] = tv[best];
      argmax[r * out_len + w] = best;
    }
  }
  return make_op(std::move(shape), std::move(out), {tokens}, [argmax = std::move(argmax)](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[argmax[i]] += o.grad[i];
    }
  });
}

Array linear_interp_upsample(const Array& a, std::size_t target_len) {
  require_rank("linear_interp_upsample", a, 1);
  const std::size_t m = a.shape().back();
  if (target_len < m) {
    throw ConfigError("upsample target length " + std::to_string(target_len) +
                      " is shorter than input length " + std::to_string(m));
  }
  const std::size_t rows = a.size() / m;
  // Output j samples the input at fractional position j*(m-1)/(T-1), kept as
  // an exact integer ratio so m == T reproduces the input bit-for-bit.
  std::vector<std::size_t> lo(target_len), hi(target_len);
  std::vector<double> frac(target_len);
  for (std::size_t j = 0; j < target_len; ++j) {
    if (m == 1 || target_len == 1) {
      lo[j] = hi[j] = 0;
      frac[j] = 0.0;
      continue;
    }
    const std::size_t num = j * (m - 1);
    const std::size_t den = target_len - 1;
    lo[j] = num / den;
    hi[j] = std::min(lo[j] + 1, m - 1);
    frac[j] = static_cast<double>(num % den) / static_cast<double>(den);
  }
  Shape shape = a.shape();
  shape.back() = target_len;
  auto av = a.values();
  std::vector<double> out(rows * target_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = av.data() + r * m;
    for (std::size_t j = 0; j < target_len; ++j) {
      out[r * target_len + j] =
          frac[j] == 0.0 ? v[lo[j]] : (1.0 - frac[j]) * v[lo[j]] + frac[j] * v[hi[j]];
    }
  }
  return make_op(std::move(shape), std::move(out), {a},
                 [rows, m, target_len, lo = std::move(lo), hi = std::move(hi),
                  frac = std::move(frac)](Node& o) {
                   if (double* g = grad_of(*o.parents[0])) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < target_len; ++j) {
                         const double d = o.grad[r * target_len + j];
                         g[r * m + lo[j]] += (1.0 - frac[j]) * d;
                         if (frac[j] != 0.0) g[r * m + hi[j]] += frac[j] * d;
                       }
                     }
                   }
                 });
}

Array shift_tokens_right(const Array& a) {
  require_rank("shift_tokens_right", a, 2);
  const std::size_t T = a.shape().back();
  const std::size_t L = a.dim(a.rank() - 2);
  const std::size_t blocks = a.size() / (L * T);
  auto av = a.values();
  std::vector<double> out(av.size(), 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::copy(av.begin() + b * L * T, av.begin() + (b * L + L - 1) * T,
              out.begin() + b * L * T + T);
  }
  return make_op(a.shape(), std::move(out), {a}, [blocks, L, T](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i + 1 < L; ++i)
          for (std::size_t t = 0; t < T; ++t) g[(b * L + i) * T + t] += o.grad[(b * L + i + 1) * T + t];
    }
  });
}

// ---- losses ----------------------------------------------------------

Array mse(const Array& pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw DimensionError("mse: prediction " + shape_string(pred.shape()) + " vs " +
                         std::to_string(target.size()) + " target values");
  }
  auto pv = pred.values();
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  double acc = 0.0;
  std::vector<double> diff(pv.size());
  for (std::size_t i = 0; i < pv.size(); ++i) {
    diff[i] = pv[i] - target[i];
    acc += diff[i] * diff[i];
  }
  return make_op({}, {acc * inv_n}, {pred}, [diff = std::move(diff), inv_n](Node& o) {
    if (double* g = grad_of(*o.parents[0])) {
      const double s = 2.0 * inv_n * o.grad[0];
      for (std::size_t i = 0; i < diff.size(); ++i) g[i] += s * diff[i];
    }
  });
}

}  // namespace gpht
