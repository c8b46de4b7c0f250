// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a graph node. Operations record their inputs
// and a backward closure; Tensor::backward() visits the reachable graph in
// reverse topological order and accumulates gradients additively, so a
// parameter used in several places receives the sum of its contributions.
// The graph lives as long as the tensors that reference it.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sparselm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Backward closure for a custom op: receives the output gradient and one
// span per input. Spans of inputs that do not require gradients are empty.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::vector<std::span<double>>& in_grads)>;

class Tensor;

// Builds an op result. When gradient recording is disabled or no input
// requires gradients, the result is a plain constant.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward);

class Tensor {
 public:
  Tensor() = default;

  // Leaf without gradient tracking.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  // Leaf that accumulates gradients (a trainable parameter).
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // In-place access for optimizers and checkpoint loading. Do not call while
  // a graph that depends on this tensor is awaiting backward().
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep seeded with d(self)/d(self) = 1. Requires a scalar.
  void backward() const;

  // True when both handles refer to the same node.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- Linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- Elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Exact form x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);

// ---- Reductions and normalizations ----------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Column means of a [rows x cols] matrix, shape [cols].
Tensor mean_rows(const Tensor& a);
// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& logits, std::size_t axis);
// Row-wise softmax of a square [S x S] score matrix restricted to j <= i.
// Entries above the diagonal are exactly zero.
Tensor causal_softmax(const Tensor& scores);
// x / sqrt(mean(x^2) + eps) * gain, row-wise over [rows x M] with gain [M].
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

// Mean negative log-likelihood of `targets` under softmax(logits) along the
// last axis. Positions whose target equals `ignore_index` are skipped.
// Throws RangeError for out-of-vocabulary targets.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = -1);

// ---- Indexing -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
// Rows of a [rows x cols] matrix, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor embedding(const Tensor& table, std::span<const int> ids);
// out[i] = a.flat[index[i]], reshaped to `shape`.
Tensor gather_elements(const Tensor& a, std::span<const std::size_t> index, Shape shape);
// out = base; out[dest[r], :] += src[r, :].
Tensor scatter_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> dest);
// out[r, :] = factors[r] * a[r, :], factors shape [rows].
Tensor scale_rows(const Tensor& a, const Tensor& factors);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

// ---- Validation -----------------------------------------------------------

// Compares reverse-mode gradients of the scalar `f` with respect to each
// tensor in `params` against central finite differences with step `eps`.
// Returns the maximum over elements of |analytic - numeric| /
// max(|analytic|, |numeric|, abs_floor).
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps,
                  double abs_floor = 1e-6);
double grad_check(const std::function<Tensor()>& f, Tensor& param, double eps,
                  double abs_floor = 1e-6);

bool all_finite(std::span<const double> values);

}  // namespace sparselm
