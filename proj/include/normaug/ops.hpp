#pragma once

#include <cstddef>
#include <vector>

#include "normaug/tensor.hpp"

namespace naug {

// Binary elementwise operations broadcast numpy-style: shapes are aligned on
// the right and a dimension of 1 (or a missing one) stretches to match.
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor div(const Tensor &a, const Tensor &b);

Tensor add_scalar(const Tensor &x, double c);
Tensor mul_scalar(const Tensor &x, double c);
Tensor square(const Tensor &x);
Tensor sqrt(const Tensor &x);
Tensor relu(const Tensor &x);
Tensor log(const Tensor &x);
Tensor exp(const Tensor &x);

// [B,K] x [K,N] -> [B,N]. Each output element accumulates over k in
// ascending order, so a row's result does not depend on the batch size.
Tensor matmul(const Tensor &a, const Tensor &b);

// Mean over `axes`, keeping reduced axes as size 1. Uses pairwise summation
// split at the midpoint, so a batch made of two identical halves has exactly
// the statistics of one half.
Tensor mean(const Tensor &x, const std::vector<std::size_t> &axes);
// Population variance over `axes`, keeping reduced axes.
Tensor variance(const Tensor &x, const std::vector<std::size_t> &axes);
Tensor sum_all(const Tensor &x);
Tensor mean_all(const Tensor &x);

Tensor reshape(const Tensor &x, const Shape &shape);
// Scalar (rank-0) view of one element.
Tensor element(const Tensor &x, std::size_t flat_index);

// Row-wise over the last axis of a rank-2 tensor.
Tensor softmax(const Tensor &logits);
Tensor log_softmax(const Tensor &logits);
// Mean over rows of -log_probs[i, labels[i]].
Tensor nll(const Tensor &log_probs, const std::vector<std::size_t> &labels);
Tensor cross_entropy(const Tensor &logits, const std::vector<std::size_t> &labels);

// x [B,Ci,H,W], weight [Co,Ci,K,K]; stride 1, zero padding `pad`.
Tensor conv2d(const Tensor &x, const Tensor &weight, std::size_t pad);
// [B,C,H,W] -> [B,C]
Tensor global_avg_pool(const Tensor &x);

// Selects rows (first axis) in the given order.
Tensor gather_rows(const Tensor &x, const std::vector<std::size_t> &rows);
// Inverse of gather_rows over a disjoint cover: row rows[k][i] of the output
// is row i of parts[k].
Tensor assemble_rows(const std::vector<Tensor> &parts,
                     const std::vector<std::vector<std::size_t>> &rows, std::size_t total_rows);

}  // namespace naug
