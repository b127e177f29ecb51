#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gbemt {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  /// Last dimension (1 for scalars).
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  /// Product of all but the last dimension.
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in creation order (parents always precede children) and
/// runs reverse-mode accumulation from a scalar loss.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  /// Leaf that reads `external` in place; it must outlive the tape.
  Var bind(const Tensor& external, bool requires_grad);

  /// Used by operations. Backward is dropped when no parent requires grad.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  /// Throws ContractError if the loss is not a scalar or backward already ran.
  void backward(Var loss);
  /// Zeroes gradients and allows another backward pass.
  void reset_grads();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  /// Gradient buffer for accumulation inside backward functions.
  Tensor& grad_mut(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable operations. Each throws ShapeError on mismatched shapes.

Var matmul(Var a, Var b);
/// a · bᵀ for a:(m×k), b:(n×k).
Var matmul_transposed(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
/// Adds a vector over the last axis of x; the only broadcast supported.
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var relu(Var x);
Var sum(Var x);
Var reshape(Var x, Shape shape);
/// Softmax over the last axis.
Var softmax_rows(Var x);
/// Adds `penalty` to scores where mask is 0 then applies row softmax. Rows with no
/// allowed entry produce zeros. mask has one byte per score.
Var masked_softmax(Var scores, std::span<const std::uint8_t> mask, double penalty = -1e9);
/// Per-row normalisation over the last axis with biased variance.
Var layer_norm(Var x, Var gain, Var bias, double eps);
/// Rows of `table` selected by ids.
Var embedding(Var table, std::span<const int> ids);
Var slice_cols(Var x, std::size_t start, std::size_t width);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Inverted dropout with a keep mask drawn from SplitMix64(seed).
Var dropout(Var x, double rate, std::uint64_t seed);
/// Adds a constant tensor (no gradient to it).
Var add_constant(Var x, const Tensor& c);

/// Σ over non-pad rows of −Σ_k q_k log softmax(z)_k with q = (1−ε)·onehot + ε/V.
/// Rows are all leading positions of `logits`; targets has one entry per row.
Var cross_entropy_sum(Var logits, std::span<const int> targets, int pad_id, double label_smoothing);

}  // namespace gbemt
