#include "stransformer/attention.h"

#include <cassert>
#include <cmath>
#include <limits>

namespace stf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

MaskBias build_causal_mask(int64_t l, int64_t m) {
  std::vector<double> vals(l * (m + l), 0.0);
  for (int64_t t = 0; t < l; ++t) {
    for (int64_t j = m + t + 1; j < m + l; ++j) vals[t * (m + l) + j] = -kInf;
  }
  return MaskBias{Tensor::from_data({l, m + l}, std::move(vals)), l, m};
}

MaskBias build_padding_mask(int64_t valid_len, int64_t l, int64_t m) {
  if (valid_len > l) throw ValueError("build_padding_mask: valid_len > L");
  std::vector<double> vals(l * (m + l), 0.0);
  for (int64_t t = 0; t < l; ++t) {
    for (int64_t j = m + valid_len; j < m + l; ++j) vals[t * (m + l) + j] = -kInf;
  }
  return MaskBias{Tensor::from_data({l, m + l}, std::move(vals)), l, m};
}

MaskBias combine_masks(const MaskBias& a, const MaskBias& b) {
  if (a.l != b.l || a.m != b.m) {
    throw ShapeError("combine_masks: geometry mismatch");
  }
  return MaskBias{add(a.values, b.values), a.l, a.m};
}

PositionalEncoding make_positional_encoding(int64_t l_max, int64_t d_model,
                                            double initial_scale) {
  std::vector<double> table(l_max * d_model);
  for (int64_t pos = 0; pos < l_max; ++pos) {
    for (int64_t i = 0; i < d_model; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  PositionalEncoding pe;
  pe.table = Tensor::from_data({l_max, d_model}, std::move(table));
  pe.scale = Tensor::from_data({1}, {initial_scale});
  return pe;
}

Tensor scaled_positional_encoding(int64_t l, int64_t offset,
                                  const PositionalEncoding& pe) {
  if (offset < 0 || offset + l > pe.max_len()) {
    throw ConfigError("scaled_positional_encoding: length " + std::to_string(l) +
                      " at offset " + std::to_string(offset) +
                      " exceeds table size " + std::to_string(pe.max_len()));
  }
  return mul(pe.scale, slice_rows(pe.table, offset, l));
}

Tensor extend_context(const Tensor& mem, const Tensor& cur) {
  if (!mem.defined() || mem.dim(0) == 0) return cur;
  if (mem.dim(1) != cur.dim(1)) {
    throw ShapeError("extend_context: model dims disagree, memory " +
                     shape_str(mem.shape()) + " vs current " +
                     shape_str(cur.shape()));
  }
  return concat_rows(mem, cur);
}

QkvProjection project_qkv(const Tensor& cur, const Tensor& extended,
                          const AttentionParams& p) {
#ifndef NDEBUG
  {
    // contract: extended == [memory ; cur]
    int64_t l = cur.dim(0), tot = extended.dim(0);
    if (tot < l) throw ContractError("project_qkv: extended shorter than cur");
    const auto& ed = extended.data();
    const auto& cd = cur.data();
    int64_t d = cur.dim(1);
    for (int64_t i = 0; i < l * d; ++i) {
      if (ed[(tot - l) * d + i] != cd[i]) {
        throw ContractError("project_qkv: extended's last L rows differ from cur");
      }
    }
  }
#endif
  QkvProjection out;
  out.q = matmul(cur, permute(p.w_q, {1, 0}));
  out.k = matmul(extended, permute(p.w_k, {1, 0}));
  out.v = matmul(extended, permute(p.w_v, {1, 0}));
  return out;
}

AttentionResult relative_attention(const Tensor& q, const Tensor& k,
                                   const Tensor& v, const Tensor& b_rel_slice,
                                   const MaskBias* mask, const Tensor& w_o,
                                   int n_heads) {
  int64_t l = q.dim(0), d = q.dim(1);
  int64_t lm = k.dim(0);
  int64_t m = lm - l;
  if (d % n_heads != 0) {
    throw ShapeError("relative_attention: d_model " + std::to_string(d) +
                     " not divisible by " + std::to_string(n_heads) + " heads");
  }
  int64_t dh = d / n_heads;

  // [L, d] -> [heads, L, dh]
  Tensor qh = permute(reshape(q, {l, n_heads, dh}), {1, 0, 2});
  Tensor kh = permute(reshape(k, {lm, n_heads, dh}), {1, 0, 2});
  Tensor vh = permute(reshape(v, {lm, n_heads, dh}), {1, 0, 2});

  Tensor logits = scale(matmul(qh, permute(kh, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(dh)));
  if (b_rel_slice.defined()) {
    if (b_rel_slice.rank() != 3 || b_rel_slice.dim(0) != n_heads ||
        b_rel_slice.dim(1) != l || b_rel_slice.dim(2) != m) {
      throw ShapeError("relative_attention: b_rel slice " +
                       shape_str(b_rel_slice.shape()) + " does not match [" +
                       std::to_string(n_heads) + "," + std::to_string(l) + "," +
                       std::to_string(m) + "]");
    }
    // memory columns first, current-segment columns zero
    logits = add(logits, pad_last_dim(b_rel_slice, 0, l));
  }
  if (mask != nullptr) {
    if (mask->values.dim(0) != l || mask->values.dim(1) != lm) {
      throw ShapeError("relative_attention: mask " +
                       shape_str(mask->values.shape()) + " does not cover [" +
                       std::to_string(l) + "," + std::to_string(lm) + "]");
    }
    logits = add(logits, reshape(mask->values, {1, l, lm}));
  }

  Tensor weights = softmax_lastdim(logits);        // [heads, L, M+L]
  Tensor ctx = matmul(weights, vh);                // [heads, L, dh]
  Tensor merged = reshape(permute(ctx, {1, 0, 2}), {l, d});
  Tensor out = matmul(merged, permute(w_o, {1, 0}));
  return AttentionResult{out, weights};
}

LayerResult transformer_layer(const Tensor& cur, const Tensor& mem,
                              const TransformerLayerParams& p,
                              const MaskBias* mask) {
  int64_t l = cur.dim(0);
  int64_t m = mem.defined() ? mem.dim(0) : 0;
  Tensor extended = extend_context(mem, cur);
  QkvProjection qkv = project_qkv(cur, extended, p.attn);

  Tensor b_rel_slice;
  if (p.attn.b_rel.defined()) {
    if (l > p.attn.b_rel.dim(1) || m > p.attn.b_rel.dim(2)) {
      throw ConfigError("transformer_layer: segment " + std::to_string(l) +
                        " / memory " + std::to_string(m) +
                        " exceed b_rel table " + shape_str(p.attn.b_rel.shape()));
    }
    b_rel_slice = slice(p.attn.b_rel, {0, 0, 0}, {p.attn.b_rel.dim(0), l, m});
  }
  AttentionResult attn = relative_attention(qkv.q, qkv.k, qkv.v, b_rel_slice,
                                            mask, p.attn.w_o, p.attn.n_heads);

  Tensor x = layer_norm(add(cur, attn.out), p.ln_attn.gain, p.ln_attn.bias);
  Tensor hidden = relu(add(matmul(x, permute(p.ffn.w1, {1, 0})),
                           reshape(p.ffn.b1, {1, p.ffn.b1.numel()})));
  Tensor ff = add(matmul(hidden, permute(p.ffn.w2, {1, 0})),
                  reshape(p.ffn.b2, {1, p.ffn.b2.numel()}));
  Tensor out = layer_norm(add(x, ff), p.ln_ffn.gain, p.ln_ffn.bias);
  return LayerResult{out, attn.weights};
}

}  // namespace stf
