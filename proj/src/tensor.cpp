// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "sparselm/error.hpp"

namespace sparselm {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    std::vector<std::span<double>> in_grads;
    in_grads.reserve(node->inputs.size());
    for (auto& input : node->inputs) {
      if (input->requires_grad) {
        input->ensure_grad();
        in_grads.emplace_back(input->grad);
      } else {
        in_grads.emplace_back();
      }
    }
    node->ensure_grad();
    node->backward(node->grad, in_grads);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward) {
  Tensor out = Tensor::constant(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& t : inputs) out.node_->inputs.push_back(t.node_);
  out.node_->backward = std::move(backward);
  return out;
}

// ---- Linear algebra -------------------------------------------------------

namespace {

// c[n x m] += a[n x k] * b[k x m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[n x k] += g[n x m] * b[k x m]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = g + i * m;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k x m] += a[n x k]^T * g[n x m]
void gemm_tn(const double* a, const double* g, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), n, k, m);
  return make_op({n, m}, std::move(out), {a, b},
                 [a, b, n, k, m](std::span<const double> g, std::vector<std::span<double>>& d) {
                   if (!d[0].empty()) gemm_nt(g.data(), b.data().data(), d[0].data(), n, k, m);
                   if (!d[1].empty()) gemm_tn(a.data().data(), g.data(), d[1].data(), n, k, m);
                 });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  auto src = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = src[i * m + j];
  return make_op({m, n}, std::move(out), {a},
                 [n, m](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) d[0][i * m + j] += g[j * n + i];
                 });
}

// ---- Elementwise ----------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (auto& di : d)
                     if (!di.empty())
                       for (std::size_t i = 0; i < g.size(); ++i) di[i] += g[i];
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::vector<std::span<double>>& d) {
                   if (!d[0].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) d[0][i] += g[i];
                   if (!d[1].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) d[1][i] -= g[i];
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [a, b](std::span<const double> g, std::vector<std::span<double>>& d) {
                   auto av = a.data();
                   auto bv = b.data();
                   if (!d[0].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) d[0][i] += g[i] * bv[i];
                   if (!d[1].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) d[1][i] += g[i] * av[i];
                 });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_op(a.shape(), std::move(out), {a},
                 [factor](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t i = 0; i < g.size(); ++i) d[0][i] += factor * g[i];
                 });
}

Tensor gelu(const Tensor& x) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * normal_cdf(xv[i]);
  return make_op(x.shape(), std::move(out), {x},
                 [x](std::span<const double> g, std::vector<std::span<double>>& d) {
                   auto xv = x.data();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double v = xv[i];
                     d[0][i] += g[i] * (normal_cdf(v) + v * normal_pdf(v));
                   }
                 });
}

// ---- Reductions and normalizations ----------------------------------------

Tensor sum(const Tensor& a) {
  auto av = a.data();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return make_op({}, {total}, {a},
                 [](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (double& v : d[0]) v += g[0];
                 });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a) {
  require_matrix(a, "mean_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (rows == 0) throw DimensionError("mean_rows of a matrix with no rows");
  std::vector<double> out(cols, 0.0);
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out) v *= inv;
  return make_op({cols}, std::move(out), {a},
                 [rows, cols, inv](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < cols; ++c) d[0][r * cols + c] += g[c] * inv;
                 });
}

Tensor softmax(const Tensor& logits, std::size_t axis) {
  if (axis >= logits.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(logits.shape()));
  }
  const Shape& shape = logits.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto x = logits.data();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  std::vector<double> y = out;
  return make_op(shape, std::move(out), {logits},
                 [y = std::move(y), outer, inner, n](std::span<const double> g,
                                                     std::vector<std::span<double>>& d) {
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t in = 0; in < inner; ++in) {
                       const std::size_t base = o * n * inner + in;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j)
                         dot += g[base + j * inner] * y[base + j * inner];
                       for (std::size_t j = 0; j < n; ++j) {
                         const std::size_t idx = base + j * inner;
                         d[0][idx] += y[idx] * (g[idx] - dot);
                       }
                     }
                   }
                 });
}

Tensor causal_softmax(const Tensor& scores) {
  require(scores.rank() == 2 && scores.dim(0) == scores.dim(1),
          "causal_softmax: expected a square matrix, got " + shape_str(scores.shape()));
  const std::size_t s = scores.dim(0);
  auto x = scores.data();
  std::vector<double> out(s * s, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    const double* row = x.data() + i * s;
    double mx = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      out[i * s + j] = std::exp(row[j] - mx);
      z += out[i * s + j];
    }
    for (std::size_t j = 0; j <= i; ++j) out[i * s + j] /= z;
  }
  std::vector<double> y = out;
  return make_op({s, s}, std::move(out), {scores},
                 [y = std::move(y), s](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t i = 0; i < s; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j <= i; ++j) dot += g[i * s + j] * y[i * s + j];
                     for (std::size_t j = 0; j <= i; ++j)
                       d[0][i * s + j] += y[i * s + j] * (g[i * s + j] - dot);
                   }
                 });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_matrix(x, "rms_norm");
  const std::size_t rows = x.dim(0), m = x.dim(1);
  require(gain.rank() == 1 && gain.dim(0) == m,
          "rms_norm: gain shape " + shape_str(gain.shape()) + " does not match input " +
              shape_str(x.shape()));
  auto xv = x.data();
  auto gv = gain.data();
  std::vector<double> inv_rms(rows);
  std::vector<double> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < m; ++c) ss += xv[r * m + c] * xv[r * m + c];
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(m) + eps);
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = xv[r * m + c] * inv_rms[r] * gv[c];
  }
  return make_op(
      {rows, m}, std::move(out), {x, gain},
      [x, gain, inv_rms = std::move(inv_rms), rows, m](std::span<const double> g,
                                                       std::vector<std::span<double>>& d) {
        auto xv = x.data();
        auto gv = gain.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double ir = inv_rms[r];
          const double* xr = xv.data() + r * m;
          const double* gr = g.data() + r * m;
          if (!d[0].empty()) {
            double dot = 0.0;
            for (std::size_t c = 0; c < m; ++c) dot += gr[c] * gv[c] * xr[c];
            const double k = ir * ir * ir * dot / static_cast<double>(m);
            for (std::size_t c = 0; c < m; ++c) d[0][r * m + c] += ir * gv[c] * gr[c] - xr[c] * k;
          }
          if (!d[1].empty())
            for (std::size_t c = 0; c < m; ++c) d[1][c] += gr[c] * xr[c] * ir;
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require(logits.rank() >= 1, "cross_entropy: logits must have a vocabulary axis");
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.numel() / vocab;
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits of shape " + shape_str(logits.shape()));
  }
  auto x = logits.data();
  std::vector<double> probs(x.size());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw RangeError("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    const double* row = x.data() + r * vocab;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[r * vocab + j] = std::exp(row[j] - mx);
      z += probs[r * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= z;
    total += std::log(z) + mx - row[t];
    ++counted;
  }
  if (counted == 0) return Tensor::scalar(0.0);
  const double inv = 1.0 / static_cast<double>(counted);
  std::vector<int> tg(targets.begin(), targets.end());
  return make_op({}, {total * inv}, {logits},
                 [probs = std::move(probs), tg = std::move(tg), vocab, inv, ignore_index](
                     std::span<const double> g, std::vector<std::span<double>>& d) {
                   const double k = g[0] * inv;
                   for (std::size_t r = 0; r < tg.size(); ++r) {
                     if (tg[r] == ignore_index) continue;
                     for (std::size_t j = 0; j < vocab; ++j)
                       d[0][r * vocab + j] += k * probs[r * vocab + j];
                     d[0][r * vocab + static_cast<std::size_t>(tg[r])] -= k;
                   }
                 });
}

// ---- Indexing -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op(std::move(shape), std::move(out), {a},
                 [](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t i = 0; i < g.size(); ++i) d[0][i] += g[i];
                 });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix(a, "gather_rows");
  const std::size_t n = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows.size() * cols);
  auto av = a.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw RangeError("gather_rows: row " + std::to_string(rows[r]) + " of " + std::to_string(n));
    std::copy_n(av.data() + rows[r] * cols, cols, out.data() + r * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op({rows.size(), cols}, std::move(out), {a},
                 [idx = std::move(idx), cols](std::span<const double> g,
                                              std::vector<std::span<double>>& d) {
                   for (std::size_t r = 0; r < idx.size(); ++r)
                     for (std::size_t c = 0; c < cols; ++c) d[0][idx[r] * cols + c] += g[r * cols + c];
                 });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.dim(0)) {
      throw RangeError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(table.dim(0)));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Tensor gather_elements(const Tensor& a, std::span<const std::size_t> index, Shape shape) {
  require(shape_numel(shape) == index.size(), "gather_elements: index count does not match shape " +
                                                  shape_str(shape));
  auto av = a.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.size()) throw RangeError("gather_elements: index out of range");
    out[i] = av[index[i]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op(std::move(shape), std::move(out), {a},
                 [idx = std::move(idx)](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t i = 0; i < idx.size(); ++i) d[0][idx[i]] += g[i];
                 });
}

Tensor scatter_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> dest) {
  require_matrix(base, "scatter_add_rows");
  require_matrix(src, "scatter_add_rows");
  const std::size_t cols = base.dim(1);
  require(src.dim(1) == cols && src.dim(0) == dest.size(),
          "scatter_add_rows: source " + shape_str(src.shape()) + " incompatible with base " +
              shape_str(base.shape()));
  std::vector<double> out(base.data().begin(), base.data().end());
  auto sv = src.data();
  for (std::size_t r = 0; r < dest.size(); ++r) {
    if (dest[r] >= base.dim(0)) throw RangeError("scatter_add_rows: destination row out of range");
    for (std::size_t c = 0; c < cols; ++c) out[dest[r] * cols + c] += sv[r * cols + c];
  }
  std::vector<std::size_t> idx(dest.begin(), dest.end());
  return make_op(base.shape(), std::move(out), {base, src},
                 [idx = std::move(idx), cols](std::span<const double> g,
                                              std::vector<std::span<double>>& d) {
                   if (!d[0].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) d[0][i] += g[i];
                   if (!d[1].empty())
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       for (std::size_t c = 0; c < cols; ++c) d[1][r * cols + c] += g[idx[r] * cols + c];
                 });
}

Tensor scale_rows(const Tensor& a, const Tensor& factors) {
  require_matrix(a, "scale_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  require(factors.numel() == rows, "scale_rows: " + std::to_string(factors.numel()) +
                                       " factors for " + std::to_string(rows) + " rows");
  auto av = a.data();
  auto fv = factors.data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = fv[r] * av[r * cols + c];
  return make_op({rows, cols}, std::move(out), {a, factors},
                 [a, factors, rows, cols](std::span<const double> g,
                                          std::vector<std::span<double>>& d) {
                   auto av = a.data();
                   auto fv = factors.data();
                   for (std::size_t r = 0; r < rows; ++r) {
                     double acc = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) {
                       if (!d[0].empty()) d[0][r * cols + c] += fv[r] * g[r * cols + c];
                       acc += av[r * cols + c] * g[r * cols + c];
                     }
                     if (!d[1].empty()) d[1][r] += acc;
                   }
                 });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t cols = a.dim(1);
  require(begin + count <= a.dim(0), "slice_rows: range exceeds " + shape_str(a.shape()));
  auto av = a.data();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          av.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
  return make_op({count, cols}, std::move(out), {a},
                 [offset = begin * cols](std::span<const double> g, std::vector<std::span<double>>& d) {
                   for (std::size_t i = 0; i < g.size(); ++i) d[0][offset + i] += g[i];
                 });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  require(begin + count <= cols, "slice_cols: range exceeds " + shape_str(a.shape()));
  auto av = a.data();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.data() + r * cols + begin, count, out.data() + r * count);
  return make_op({rows, count}, std::move(out), {a},
                 [rows, cols, begin, count](std::span<const double> g,
                                            std::vector<std::span<double>>& d) {
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < count; ++c) d[0][r * cols + begin + c] += g[r * count + c];
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(1) == cols, "concat_rows: column mismatch at " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    off += p.numel();
  }
  return make_op({rows, cols}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                 [offsets = std::move(offsets)](std::span<const double> g,
                                                std::vector<std::span<double>>& d) {
                   for (std::size_t k = 0; k < d.size(); ++k)
                     for (std::size_t i = 0; i < d[k].size(); ++i) d[k][i] += g[offsets[k] + i];
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(0) == rows, "concat_cols: row mismatch at " + shape_str(p.shape()));
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto pv = p.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.data() + r * w, w, out.data() + r * cols + c0);
    c0 += w;
  }
  return make_op({rows, cols}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                 [widths = std::move(widths), rows, cols](std::span<const double> g,
                                                          std::vector<std::span<double>>& d) {
                   std::size_t c0 = 0;
                   for (std::size_t k = 0; k < d.size(); ++k) {
                     const std::size_t w = widths[k];
                     if (!d[k].empty())
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < w; ++c) d[k][r * w + c] += g[r * cols + c0 + c];
                     c0 += w;
                   }
                 });
}

// ---- Validation -----------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps,
                  double abs_floor) {
  for (auto& p : params) p.zero_grad();
  f().backward();
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + eps;
        plus = f().item();
        values[i] = saved - eps;
        minus = f().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor()>& f, Tensor& param, double eps, double abs_floor) {
  return grad_check(f, std::span<Tensor>(&param, 1), eps, abs_floor);
}

}  // namespace sparselm
