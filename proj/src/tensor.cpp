#include "gbemt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gbemt/errors.hpp"
#include "gbemt/rng.hpp"

namespace gbemt {
namespace {

// c[m×n] (+)= a[m×k] · b[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c[k×n] (+)= a[m×k]ᵀ · b[m×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void softmax_row(const double* in, double* out, std::size_t n) {
  if (n == 0) return;
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

// dx = y ⊙ (dy − Σ dy⊙y), row by row.
void softmax_backward_rows(const Tensor& y, const Tensor& dy, Tensor& dx) {
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double* yr = y.data().data() + r * n;
    const double* gr = dy.data().data() + r * n;
    double* xr = dx.data().data() + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
    for (std::size_t j = 0; j < n; ++j) xr[j] += yr[j] * (gr[j] - dot);
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) + " values for shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                     shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm_nn(a.data().data(), b.data().data(), c.data().data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = n == 0 ? 0 : x.size() / (n * inner);
  Tensor y(x.shape());
  std::vector<double> in(n), out(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t j = 0; j < n; ++j) in[j] = x[(o * n + j) * inner + i];
      softmax_row(in.data(), out.data(), n);
      for (std::size_t j = 0; j < n; ++j) y[(o * n + j) * inner + i] = out[j];
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::bind(const Tensor& external, bool requires_grad) {
  Node n;
  n.external = &external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external != nullptr ? *n.external : n.value;
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.requires_grad) throw ContractError("node " + std::to_string(id) + " does not require grad");
  return n.grad;
}

Tensor& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != value(id).size()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) throw ContractError("backward already ran on this tape; call reset_grads() first");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) throw ContractError("backward needs a scalar loss, got shape " + shape_string(lv.shape()));
  backward_done_ = true;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad) nodes_[i].grad = Tensor(value(i).shape());
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

void Tape::reset_grads() {
  for (auto& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(value(static_cast<std::size_t>(&n - nodes_.data())).shape());
  }
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

bool needs(Tape& t, std::size_t id) { return t.requires_grad(id); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  Tensor c = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const Tensor& G = t.grad(self);
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (needs(t, ia)) gemm_nt(G.data().data(), B.data().data(), t.grad_mut(ia).data().data(), m, n, k);
    if (needs(t, ib)) gemm_tn(A.data().data(), G.data().data(), t.grad_mut(ib).data().data(), m, k, n);
  });
}

Var matmul_transposed(Var a, Var b) {
  Tape& t = a.tape();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul_transposed");
  require_matrix(B, "matmul_transposed");
  if (A.dim(1) != B.dim(1)) {
    throw ShapeError("matmul_transposed: inner dimensions differ, " + shape_string(A.shape()) + " · " +
                     shape_string(B.shape()) + "ᵀ");
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor c({m, n});
  gemm_nt(A.data().data(), B.data().data(), c.data().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(c), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    // dA = G·B, dB = Gᵀ·A
    if (needs(t, ia)) gemm_nn(G.data().data(), t.value(ib).data().data(), t.grad_mut(ia).data().data(), m, n, k);
    if (needs(t, ib)) gemm_tn(G.data().data(), t.value(ia).data().data(), t.grad_mut(ib).data().data(), m, n, k);
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_matrix(A, "transpose");
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor c({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c.at(j, i) = A.at(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(c), {ia}, [ia, m, n](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    Tensor& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += G.at(j, i);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor c = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    for (std::size_t p : {ia, ib}) {
      if (!needs(t, p)) continue;
      Tensor& g = t.grad_mut(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  if (B.rank() != 1 || B.dim(0) != X.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(B.shape()) + " does not match last axis of " +
                     shape_string(X.shape()));
  }
  Tensor c = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) c[r * n + j] += B[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(c), {ix, ib}, [ix, ib, n](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    if (needs(t, ix)) {
      Tensor& gx = t.grad_mut(ix);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += G[i];
    }
    if (needs(t, ib)) {
      Tensor& gb = t.grad_mut(ib);
      for (std::size_t r = 0; r < G.size() / std::max<std::size_t>(n, 1); ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[r * n + j];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor c = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    if (needs(t, ia)) {
      Tensor& g = t.grad_mut(ia);
      const Tensor& B = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * B[i];
    }
    if (needs(t, ib)) {
      Tensor& g = t.grad_mut(ib);
      const Tensor& A = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * A[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor c = x.value();
  for (auto& v : c.data()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(c), {ix}, [ix, factor](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_mut(ix);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * factor;
  });
}

Var relu(Var x) {
  Tensor c = x.value();
  for (auto& v : c.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(c), {ix}, [ix](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(ix);
    Tensor& g = t.grad_mut(ix);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += X[i] > 0.0 ? G[i] : 0.0;
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(s), {ix}, [ix](Tape& t, std::size_t self) {
    const double G = t.grad(self)[0];
    Tensor& g = t.grad_mut(ix);
    for (auto& v : g.data()) v += G;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor c = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(c), {ix}, [ix](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_mut(ix);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i];
  });
}

Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  Tensor y(X.shape());
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r) softmax_row(X.data().data() + r * n, y.data().data() + r * n, n);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(y), {ix}, [ix](Tape& t, std::size_t self) {
    softmax_backward_rows(t.value(self), t.grad(self), t.grad_mut(ix));
  });
}

Var masked_softmax(Var scores, std::span<const std::uint8_t> mask, double penalty) {
  const Tensor& S = scores.value();
  if (mask.size() != S.size()) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(mask.size()) + " entries for scores " +
                     shape_string(S.shape()));
  }
  const std::size_t n = S.cols();
  Tensor y(S.shape());
  std::vector<double> row(n);
  for (std::size_t r = 0; r < S.rows(); ++r) {
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      const bool keep = mask[r * n + j] != 0;
      any = any || keep;
      row[j] = S[r * n + j] + (keep ? 0.0 : penalty);
    }
    if (any) softmax_row(row.data(), y.data().data() + r * n, n);
  }
  const std::size_t is = scores.id();
  return scores.tape().record(std::move(y), {is}, [is](Tape& t, std::size_t self) {
    softmax_backward_rows(t.value(self), t.grad(self), t.grad_mut(is));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  if (gain.value().shape() != Shape{n} || bias.value().shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias must have length " + std::to_string(n));
  }
  const std::size_t rows = X.rows();
  Tensor normalized(X.shape());
  std::vector<double> inv_std(rows);
  Tensor y(X.shape());
  const auto g = gain.value().data();
  const auto b = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mean) * inv_std[r];
      normalized[r * n + j] = h;
      y[r * n + j] = h * g[j] + b[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(y), {ix, ig, ib},
      [ix, ig, ib, n, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)](Tape& t,
                                                                                            std::size_t self) {
        const Tensor& G = t.grad(self);
        if (needs(t, ig)) {
          Tensor& gg = t.grad_mut(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += G[r * n + j] * normalized[r * n + j];
        }
        if (needs(t, ib)) {
          Tensor& gb = t.grad_mut(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += G[r * n + j];
        }
        if (needs(t, ix)) {
          const Tensor& gain_v = t.value(ig);
          Tensor& gx = t.grad_mut(ix);
          std::vector<double> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = G[r * n + j] * gain_v[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * normalized[r * n + j];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[r * n + j] += inv_std[r] * (dh[j] - mean_dh - normalized[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& T = table.value();
  require_matrix(T, "embedding");
  const std::size_t d = T.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.dim(0)) {
      throw VocabError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(T.dim(0)) + " rows");
    }
    std::copy_n(T.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data().data() + i * d);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {it},
                             [it, d, rows = std::vector<int>(ids.begin(), ids.end())](Tape& t, std::size_t self) {
                               const Tensor& G = t.grad(self);
                               Tensor& g = t.grad_mut(it);
                               for (std::size_t i = 0; i < rows.size(); ++i) {
                                 double* dst = g.data().data() + static_cast<std::size_t>(rows[i]) * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += G[i * d + j];
                               }
                             });
}

Var slice_cols(Var x, std::size_t start, std::size_t width) {
  const Tensor& X = x.value();
  require_matrix(X, "slice_cols");
  const std::size_t m = X.dim(0), n = X.dim(1);
  if (start + width > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                     ") outside " + shape_string(X.shape()));
  }
  Tensor out({m, width});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(X.data().data() + i * n + start, width, out.data().data() + i * width);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, m, n, start, width](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_mut(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < width; ++j) g[i * n + start + j] += G[i * width + j];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().value().dim(0);
  std::size_t n = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.value().dim(1));
    ids.push_back(p.id());
    n += widths.back();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(P.data().data() + i * widths[k], widths[k], out.data().data() + i * n + off);
    off += widths[k];
  }
  auto ids_copy = ids;
  return parts.front().tape().record(std::move(out), std::move(ids_copy), [ids, widths, m, n](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (needs(t, ids[k])) {
        Tensor& g = t.grad_mut(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += G[i * n + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::vector<std::size_t> ids;
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().dim(1) != n) throw ShapeError("concat_rows: column counts differ");
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
    rows += p.value().dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * n);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  auto ids_copy = ids;
  return parts.front().tape().record(Tensor({rows, n}, std::move(data)), std::move(ids_copy),
                                     [ids, sizes](Tape& t, std::size_t self) {
                                       const Tensor& G = t.grad(self);
                                       std::size_t off = 0;
                                       for (std::size_t k = 0; k < ids.size(); ++k) {
                                         if (needs(t, ids[k])) {
                                           Tensor& g = t.grad_mut(ids[k]);
                                           for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += G[off + i];
                                         }
                                         off += sizes[k];
                                       }
                                     });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  SplitMix64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.value().size());
  for (auto& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor c = x.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= factor[i];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(c), {ix}, [ix, factor = std::move(factor)](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_mut(ix);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i] * factor[i];
  });
}

Var add_constant(Var x, const Tensor& c) {
  require_same_shape(x.value(), c, "add_constant");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_mut(ix);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[i];
  });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets, int pad_id, double label_smoothing) {
  const Tensor& Z = logits.value();
  const std::size_t v = Z.cols();
  const std::size_t rows = Z.rows();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                     " logit rows");
  }
  const double eps = label_smoothing;
  const double uniform = v == 0 ? 0.0 : eps / static_cast<double>(v);
  Tensor probs(Z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == pad_id) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw VocabError("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                       std::to_string(v));
    }
    const double* z = Z.data().data() + r * v;
    double mx = z[0];
    for (std::size_t k = 1; k < v; ++k) mx = std::max(mx, z[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < v; ++k) s += std::exp(z[k] - mx);
    const double log_z = mx + std::log(s);
    double loss = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      const double log_p = z[k] - log_z;
      probs[r * v + k] = std::exp(log_p);
      const double q = uniform + (static_cast<std::size_t>(targets[r]) == k ? 1.0 - eps : 0.0);
      if (q != 0.0) loss -= q * log_p;
    }
    total += loss;
  }
  const std::size_t iz = logits.id();
  return logits.tape().record(
      Tensor::scalar(total), {iz},
      [iz, v, rows, uniform, eps, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
       pad_id](Tape& t, std::size_t self) {
        const double G = t.grad(self)[0];
        Tensor& g = t.grad_mut(iz);
        for (std::size_t r = 0; r < rows; ++r) {
          if (tg[r] == pad_id) continue;
          for (std::size_t k = 0; k < v; ++k) {
            const double q = uniform + (static_cast<std::size_t>(tg[r]) == k ? 1.0 - eps : 0.0);
            g[r * v + k] += G * (probs[r * v + k] - q);
          }
        }
      });
}

}  // namespace gbemt
