#pragma once

#include "stransformer/tensor.h"

namespace stf {

// Primitive differentiable ops. All of them build graph nodes; gradients flow
// to every input marked requires_grad. Broadcasting (add/sub/mul/matmul batch
// dims) is numpy-style "equal or 1" on leading dimensions; trailing shapes
// must agree exactly.

Tensor matmul(const Tensor& a, const Tensor& b);  // [...,m,k] x [...,k,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs_elem(const Tensor& x);

// Last-dim softmax. -inf entries map to exactly 0; a row that is entirely
// -inf throws MaskError.
Tensor softmax_lastdim(const Tensor& x);

// Normalizes the last dimension to mean 0 / variance 1, then applies the
// per-channel affine. gain/bias are [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor concat_rows(const Tensor& a, const Tensor& b);  // 2-D, axis 0
Tensor slice(const Tensor& x, const Shape& starts, const Shape& lens);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor pad_last_dim(const Tensor& x, int64_t left, int64_t right);  // zero fill

Tensor sum_all(const Tensor& x);   // rank-0
Tensor mean_all(const Tensor& x);  // rank-0

// Embedding lookup: rows of table [V, d] selected by ids; gradients
// scatter-add back into the table.
Tensor rows_lookup(const Tensor& table, const std::vector<int64_t>& ids);

// Forward identity, graph leaf: backward deposits no gradient upstream.
Tensor stop_gradient(const Tensor& x);

// Inverted dropout with a caller-owned seeded mask source. rate == 0 is the
// identity and adds no node.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Mean binary cross-entropy on logits. pos_weight multiplies the loss of
// positive (target 1) entries. Targets carry no gradient.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets,
                            double pos_weight = 1.0);

}  // namespace stf
