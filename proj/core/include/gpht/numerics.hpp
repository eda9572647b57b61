#pragma once

// Differentiable N-dimensional arrays with a per-forward-pass gradient tape.
//
// An Array is a cheap handle onto a node. Leaf arrays (parameters, inputs)
// are created with the factory functions; every operation below returns a
// new node that remembers its parents only when some parent requires a
// gradient. backward() walks that graph once, accumulates into the leaves
// and then releases it, so each training step rebuilds its own tape.
//
// All storage is row-major 64-bit floating point.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gpht {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Array {
 public:
  struct Node;

  Array() = default;

  static Array zeros(Shape shape, bool requires_grad = false);
  static Array from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Array scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }

  std::span<const double> values() const;
  // Only meaningful on leaves; writing into an intermediate does not
  // propagate to its consumers.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Deep copy of values (and requires_grad); never shares a gradient tape.
  Array clone() const;

  Node* node() const { return node_.get(); }

 private:
  explicit Array(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend struct ArrayAccess;
};

struct Array::Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

// While alive, operations on this thread record no tape even when their
// inputs require gradients. Used for validation and decoding.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Reverse pass from a scalar. Gradients accumulate additively into leaves:
// two forward/backward pairs without zero_grad() sum their gradients.
void backward(const Array& loss);

// ---- elementwise and broadcasting ------------------------------------

Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);
Array scale(const Array& a, double factor);
// bias has shape [last dim of a]
Array add_bias(const Array& a, const Array& bias);
// a is [..., rows, cols]; adds table[0:rows, :] to every leading slice
Array add_leading_rows(const Array& a, const Array& table);
// y[b, ...] = x[b, ...] * scales[b] + shifts[b] with constant per-batch scalars
Array affine_by_batch(const Array& a, std::span<const double> scales,
                      std::span<const double> shifts);
Array gelu(const Array& a);
Array reshape(const Array& a, Shape shape);
Array sum(const Array& a);

// Inverted dropout; identity when rate == 0.
Array dropout(const Array& a, double rate, std::mt19937_64& rng);

// ---- linear algebra --------------------------------------------------

// [..., m, k] x [..., k, n] with equal leading dims, or [..., m, k] x [k, n].
Array matmul(const Array& a, const Array& b);
Array transpose_last2(const Array& a);
// [B, L, H*D] -> [B, H, L, D] and back
Array split_heads(const Array& a, std::size_t heads);
Array merge_heads(const Array& a);

// ---- normalization and attention helpers -----------------------------

Array softmax_lastdim(const Array& a);
Array layer_norm(const Array& a, const Array& gain, const Array& bias, double eps);
// Sets entries above the diagonal of the trailing [L, L] block to -inf.
Array causal_mask(const Array& a);

// ---- token-level ops -------------------------------------------------

// Non-overlapping max pooling along the last axis. Ties route the gradient
// to the first maximal index.
Array max_pool_within_token(const Array& tokens, std::size_t kernel);
// Endpoint-aligned linear interpolation of the last axis up to target_len.
Array linear_interp_upsample(const Array& a, std::size_t target_len);
// [..., L, T]: moves every token one position later and zero-fills the first.
Array shift_tokens_right(const Array& a);

// ---- losses ----------------------------------------------------------

Array mse(const Array& pred, std::span<const double> target);

}  // namespace gpht
