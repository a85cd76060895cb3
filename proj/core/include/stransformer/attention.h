#pragma once

#include "stransformer/ops.h"

namespace stf {

// One self-attention + feed-forward transformer layer over a memory-extended
// context. Queries come from the current segment only; keys/values from
// memory-first concatenation of cached states and the current segment. The
// trainable per-head bias b_rel modulates the attention logits of the memory
// columns; the current-segment columns carry the causal/padding mask.

struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // [d_model, d_model]; applied as h * W^T
  Tensor b_rel;               // [n_heads, L_max, M_max]; undefined for cross-attn
  int n_heads = 1;
};

struct FeedForwardParams {
  Tensor w1, b1;  // [d_ff, d_model], [d_ff]
  Tensor w2, b2;  // [d_model, d_ff], [d_model]
};

struct LayerNormParams {
  Tensor gain, bias;  // [d_model]
};

struct TransformerLayerParams {
  AttentionParams attn;
  FeedForwardParams ffn;
  LayerNormParams ln_attn, ln_ffn;
};

// Additive attention-logit mask over the full memory-extended width:
// values [L, M+L], entries 0 or -inf. Memory columns occupy the first M
// columns and are never causally masked (memory is strictly past).
struct MaskBias {
  Tensor values;
  int64_t l = 0;
  int64_t m = 0;
};

// Causal: row t of the current segment may attend to all M memory columns
// plus current columns 0..t.
MaskBias build_causal_mask(int64_t l, int64_t m);
// Padding: current-segment columns at or beyond valid_len are -inf in every
// row. valid_len <= l.
MaskBias build_padding_mask(int64_t valid_len, int64_t l, int64_t m);
MaskBias combine_masks(const MaskBias& a, const MaskBias& b);

// Sinusoidal table with a trainable scalar scale; separate instances for
// encoder and decoder. Positions restart at 0 for every segment.
struct PositionalEncoding {
  Tensor table;  // [L_max, d_model], fixed
  Tensor scale;  // [1], trainable

  int64_t max_len() const { return table.dim(0); }
};

PositionalEncoding make_positional_encoding(int64_t l_max, int64_t d_model,
                                            double initial_scale = 1.0);
// scale * table[offset .. offset+l)
Tensor scaled_positional_encoding(int64_t l, int64_t offset,
                                  const PositionalEncoding& pe);

// Time-dimension concatenation, memory first. M may be 0, in which case the
// current tensor is returned unchanged.
Tensor extend_context(const Tensor& mem, const Tensor& cur);

struct QkvProjection {
  Tensor q;  // [L, d]
  Tensor k;  // [M+L, d]
  Tensor v;  // [M+L, d]
};

// q from the current segment only; k, v from the extended context.
// `extended`'s last L rows must equal `cur` (checked in debug builds).
QkvProjection project_qkv(const Tensor& cur, const Tensor& extended,
                          const AttentionParams& p);

struct AttentionResult {
  Tensor out;      // [L, d_model]
  Tensor weights;  // [n_heads, L, M+L] softmax rows, kept for alignment dumps
};

// Multi-head scaled dot-product attention with the relative bias over memory
// columns. b_rel_slice is [n_heads, L, M]; mask (optional) is full width.
AttentionResult relative_attention(const Tensor& q, const Tensor& k,
                                   const Tensor& v, const Tensor& b_rel_slice,
                                   const MaskBias* mask, const Tensor& w_o,
                                   int n_heads);

struct LayerResult {
  Tensor out;
  Tensor attn_weights;
};

// relative_attention -> residual -> layer norm -> FFN -> residual -> layer
// norm. mem may be empty ([0, d]); mask may be null for unmasked attention.
LayerResult transformer_layer(const Tensor& cur, const Tensor& mem,
                              const TransformerLayerParams& p,
                              const MaskBias* mask);

}  // namespace stf
