#include "stransformer/model.h"

#include <cmath>

namespace stf {

ModelConfig ModelConfig::desk_scale() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.n_layers_enc = 6;
  c.n_layers_dec = 6;
  c.d_model = 512;
  c.d_ff = 2048;
  c.n_heads_self = 8;
  c.n_heads_encdec = 4;
  c.n_mels = 80;
  c.chunk_size = 60;
  c.chunk_window = 20;
  c.enc_mem_capacity = 180;
  c.dec_mem_capacity = 4;
  c.l_max = 1200;
  c.max_frames_per_segment = 1200;
  return c;
}

void ModelConfig::validate() const {
  if (!symbols.empty() &&
      n_phonemes != static_cast<int64_t>(symbols.size())) {
    throw ConfigError("config: n_phonemes disagrees with symbol list size");
  }
  if (n_phonemes <= 0) throw ConfigError("config: n_phonemes must be positive");
  if (n_sentence_types <= 0) {
    throw ConfigError("config: n_sentence_types must be positive");
  }
  if (d_model <= 0 || d_ff <= 0 || n_mels <= 0) {
    throw ConfigError("config: dimensions must be positive");
  }
  if (n_layers_enc <= 0 || n_layers_dec <= 0) {
    throw ConfigError("config: layer counts must be positive");
  }
  if (d_model % n_heads_self != 0 || d_model % n_heads_encdec != 0) {
    throw ConfigError("config: d_model must be divisible by both head counts");
  }
  if (chunk_size <= chunk_window || chunk_window <= 0) {
    throw ConfigError("config: requires chunk_size > chunk_window > 0");
  }
  if (enc_mem_capacity < 0 || dec_mem_capacity < 0) {
    throw ConfigError("config: memory capacities must be >= 0");
  }
  if (l_max < chunk_size + chunk_window || l_max < max_frames_per_segment) {
    throw ConfigError("config: l_max must cover encoder chunks and decoder frames");
  }
  if (reduction_factor != 1) {
    throw ConfigError("config: only reduction_factor = 1 is supported");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("config: dropout must be in [0, 1)");
  }
  if (attn_dump_layer != -1 &&
      (attn_dump_layer < 0 || attn_dump_layer >= n_layers_dec)) {
    throw ConfigError("config: attn_dump_layer out of range");
  }
}

double chunk_speaking_rate(const Segment& seg) {
  if (seg.n_frames <= 0) {
    throw ValueError("chunk_speaking_rate: degenerate segment '" + seg.utt_id +
                     "' #" + std::to_string(seg.index) + " has no frames");
  }
  return static_cast<double>(seg.n_phonemes()) /
         static_cast<double>(seg.n_frames);
}

double stop_logit(double chunk_logit, double utt_logit, int utt_end,
                  StopRule rule) {
  if (utt_end != 0 && utt_end != 1) {
    throw ValueError("stop_logit: utt_end must be 0 or 1");
  }
  double keep = 1.0 - static_cast<double>(utt_end);
  if (rule == StopRule::kLiteral) {
    return chunk_logit * keep + utt_logit * keep;
  }
  return chunk_logit * keep + utt_logit * static_cast<double>(utt_end);
}

namespace {

Tensor glorot(Shape shape, Rng& rng) {
  int64_t fan_out = shape.size() >= 1 ? shape[0] : 1;
  int64_t fan_in = shape.size() >= 2 ? shape[1] : 1;
  for (size_t i = 2; i < shape.size(); ++i) fan_in *= shape[i];
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(shape, -limit, limit, rng);
}

PreNetParams make_prenet(ParamStore& store, const std::string& name, int64_t in,
                         int64_t hidden, int64_t out, Rng& rng) {
  PreNetParams p;
  p.w1 = store.add(name + ".w1", glorot({hidden, in}, rng));
  p.b1 = store.add(name + ".b1", Tensor::zeros({hidden}));
  p.w2 = store.add(name + ".w2", glorot({out, hidden}, rng));
  p.b2 = store.add(name + ".b2", Tensor::zeros({out}));
  return p;
}

AttentionParams make_attention(ParamStore& store, const std::string& name,
                               int64_t d_model, int n_heads, int64_t l_max,
                               int64_t m_max, bool with_b_rel, Rng& rng) {
  AttentionParams p;
  p.n_heads = n_heads;
  p.w_q = store.add(name + ".w_q", glorot({d_model, d_model}, rng));
  p.w_k = store.add(name + ".w_k", glorot({d_model, d_model}, rng));
  p.w_v = store.add(name + ".w_v", glorot({d_model, d_model}, rng));
  p.w_o = store.add(name + ".w_o", glorot({d_model, d_model}, rng));
  if (with_b_rel) {
    p.b_rel = store.add(name + ".b_rel", Tensor::zeros({n_heads, l_max, m_max}));
  }
  return p;
}

FeedForwardParams make_ffn(ParamStore& store, const std::string& name,
                           int64_t d_model, int64_t d_ff, Rng& rng) {
  FeedForwardParams p;
  p.w1 = store.add(name + ".w1", glorot({d_ff, d_model}, rng));
  p.b1 = store.add(name + ".b1", Tensor::zeros({d_ff}));
  p.w2 = store.add(name + ".w2", glorot({d_model, d_ff}, rng));
  p.b2 = store.add(name + ".b2", Tensor::zeros({d_model}));
  return p;
}

LayerNormParams make_ln(ParamStore& store, const std::string& name,
                        int64_t d_model) {
  LayerNormParams p;
  p.gain = store.add(name + ".gain", Tensor::full({d_model}, 1.0));
  p.bias = store.add(name + ".bias", Tensor::zeros({d_model}));
  return p;
}

}  // namespace

STransformer::STransformer(ModelConfig config, uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;

  w_.phoneme_embedding = store_.add(
      "embedding.phoneme", glorot({c.n_phonemes, c.d_model}, rng));
  w_.enc_prenet = make_prenet(store_, "prenet.enc", c.d_model, c.d_model,
                              c.d_model, rng);
  w_.dec_prenet =
      make_prenet(store_, "prenet.dec", c.n_mels, c.d_model, c.d_model, rng);
  w_.sent_prenet = make_prenet(store_, "prenet.sent", c.n_sentence_types,
                               c.d_model, c.d_model, rng);

  for (int i = 0; i < c.n_layers_enc; ++i) {
    std::string base = "enc." + std::to_string(i);
    TransformerLayerParams layer;
    layer.attn = make_attention(store_, base + ".attn", c.d_model,
                                c.n_heads_self, c.l_max, c.enc_mem_capacity,
                                /*with_b_rel=*/true, rng);
    layer.ffn = make_ffn(store_, base + ".ffn", c.d_model, c.d_ff, rng);
    layer.ln_attn = make_ln(store_, base + ".ln_attn", c.d_model);
    layer.ln_ffn = make_ln(store_, base + ".ln_ffn", c.d_model);
    w_.encoder.push_back(std::move(layer));
  }
  for (int i = 0; i < c.n_layers_dec; ++i) {
    std::string base = "dec." + std::to_string(i);
    DecoderLayerParams layer;
    layer.self_attn = make_attention(store_, base + ".self", c.d_model,
                                     c.n_heads_self, c.l_max,
                                     c.dec_mem_capacity, /*with_b_rel=*/true, rng);
    layer.ln_self = make_ln(store_, base + ".ln_self", c.d_model);
    layer.cross_attn =
        make_attention(store_, base + ".cross", c.d_model, c.n_heads_encdec,
                       c.l_max, 0, /*with_b_rel=*/false, rng);
    layer.ln_cross = make_ln(store_, base + ".ln_cross", c.d_model);
    layer.ffn = make_ffn(store_, base + ".ffn", c.d_model, c.d_ff, rng);
    layer.ln_ffn = make_ln(store_, base + ".ln_ffn", c.d_model);
    w_.decoder.push_back(std::move(layer));
  }

  w_.mel_w = store_.add("head.mel.w", glorot({c.n_mels, c.d_model}, rng));
  w_.mel_b = store_.add("head.mel.b", Tensor::zeros({c.n_mels}));
  w_.stop_utt_w = store_.add("head.stop_utt.w", glorot({1, c.d_model}, rng));
  w_.stop_utt_b = store_.add("head.stop_utt.b", Tensor::zeros({1}));
  w_.stop_chunk_w = store_.add("head.stop_chunk.w", glorot({1, c.d_model}, rng));
  w_.stop_chunk_b = store_.add("head.stop_chunk.b", Tensor::zeros({1}));
  w_.rate_head_w = store_.add("head.rate.w", glorot({1, c.d_model}, rng));
  w_.rate_head_b = store_.add("head.rate.b", Tensor::zeros({1}));
  w_.rate_inject_w =
      store_.add("head.rate_inject.w", glorot({c.d_model, 1}, rng));
  w_.rate_inject_b = store_.add("head.rate_inject.b", Tensor::zeros({c.d_model}));

  w_.pe_enc = make_positional_encoding(c.l_max, c.d_model);
  w_.pe_dec = make_positional_encoding(c.l_max, c.d_model);
  w_.pe_enc.scale = store_.add("pe.enc.scale", w_.pe_enc.scale);
  w_.pe_dec.scale = store_.add("pe.dec.scale", w_.pe_dec.scale);
}

CachedMemory STransformer::make_encoder_cache() const {
  return CachedMemory(config_.n_layers_enc, config_.enc_mem_capacity,
                      config_.d_model);
}

CachedMemory STransformer::make_decoder_cache() const {
  return CachedMemory(config_.n_layers_dec, config_.dec_mem_capacity,
                      config_.d_model);
}

Tensor STransformer::prenet(const PreNetParams& p, const Tensor& x,
                            double dropout_rate, Rng* rng) const {
  Tensor h = relu(add(matmul(x, permute(p.w1, {1, 0})),
                      reshape(p.b1, {1, p.b1.numel()})));
  if (rng != nullptr && dropout_rate > 0.0) h = dropout(h, dropout_rate, *rng);
  Tensor out = relu(add(matmul(h, permute(p.w2, {1, 0})),
                        reshape(p.b2, {1, p.b2.numel()})));
  if (rng != nullptr && dropout_rate > 0.0) out = dropout(out, dropout_rate, *rng);
  return out;
}

Tensor STransformer::sentence_feature(int64_t sentence_feature_id) const {
  if (sentence_feature_id < 0 ||
      sentence_feature_id >= config_.n_sentence_types) {
    throw IndexError("sentence feature id " + std::to_string(sentence_feature_id) +
                     " out of range [0," +
                     std::to_string(config_.n_sentence_types) + ")");
  }
  std::vector<double> onehot(config_.n_sentence_types, 0.0);
  onehot[sentence_feature_id] = 1.0;
  Tensor x = Tensor::from_data({1, config_.n_sentence_types}, std::move(onehot));
  return prenet(w_.sent_prenet, x, 0.0, nullptr);  // [1, d_model]
}

Tensor STransformer::head_logits(const Tensor& hidden, const Tensor& w,
                                 const Tensor& b) const {
  // [l, d] -> [l]
  Tensor z = add(matmul(hidden, permute(w, {1, 0})), reshape(b, {1, b.numel()}));
  return reshape(z, {hidden.dim(0)});
}

STransformer::EncodeForward STransformer::encode_forward(
    const std::vector<int64_t>& phoneme_ids, int64_t sentence_feature_id,
    std::optional<double> rate, const CachedMemory& cache_enc,
    int64_t* peak_logit_entries) const {
  int64_t l = static_cast<int64_t>(phoneme_ids.size());
  if (l == 0) throw ContractError("encode_segment: empty phoneme segment");
  if (l > config_.l_max) {
    throw ContractError("encode_segment: segment length " + std::to_string(l) +
                        " exceeds l_max = " + std::to_string(config_.l_max));
  }

  Tensor x = rows_lookup(w_.phoneme_embedding, phoneme_ids);
  x = prenet(w_.enc_prenet, x, 0.0, nullptr);
  x = add(x, sentence_feature(sentence_feature_id));  // broadcast over rows
  x = add(x, scaled_positional_encoding(l, 0, w_.pe_enc));

  EncodeForward fwd;
  for (int i = 0; i < config_.n_layers_enc; ++i) {
    fwd.layer_inputs.push_back(x);
    Tensor mem = cache_enc.view(i);
    if (peak_logit_entries != nullptr) {
      *peak_logit_entries =
          std::max(*peak_logit_entries, l * (l + mem.dim(0)));
    }
    x = transformer_layer(x, mem, w_.encoder[i], nullptr).out;
  }
  fwd.res.out_prerate = x;

  Tensor per_pos = head_logits(x, w_.rate_head_w, w_.rate_head_b);  // [l]
  fwd.res.predicted_rate = mean_all(per_pos);

  double inject = rate.has_value() ? *rate : fwd.res.predicted_rate.item();
  fwd.res.injected_rate = inject;
  Tensor rate_row = add(matmul(Tensor::from_data({1, 1}, {inject}),
                               permute(w_.rate_inject_w, {1, 0})),
                        reshape(w_.rate_inject_b, {1, config_.d_model}));
  fwd.res.out = add(x, rate_row);
  return fwd;
}

EncodeResult STransformer::encode_segment(const std::vector<int64_t>& phoneme_ids,
                                          int64_t sentence_feature_id,
                                          std::optional<double> rate,
                                          CachedMemory& cache_enc) const {
  EncodeForward fwd = encode_forward(phoneme_ids, sentence_feature_id, rate,
                                     cache_enc, nullptr);
  cache_enc.push(fwd.layer_inputs);
  return fwd.res;
}

STransformer::DecodeForward STransformer::decode_forward(
    const Tensor& y_shifted, const Tensor& enc_out,
    const CachedMemory& cache_dec, Rng* dropout_rng,
    int64_t* peak_logit_entries) const {
  if (!enc_out.defined() || enc_out.dim(0) == 0) {
    throw ContractError("decode_segment: empty encoder output");
  }
  int64_t lp = y_shifted.dim(0);
  if (lp > config_.max_frames_per_segment) {
    throw ContractError("decode_segment: " + std::to_string(lp) +
                        " frames exceed max_frames_per_segment");
  }

  Tensor x = prenet(w_.dec_prenet, y_shifted, config_.dropout, dropout_rng);
  x = add(x, scaled_positional_encoding(lp, 0, w_.pe_dec));

  DecodeForward fwd;
  int dump_layer = config_.attn_dump_layer >= 0 ? config_.attn_dump_layer
                                                : config_.n_layers_dec - 1;
  for (int i = 0; i < config_.n_layers_dec; ++i) {
    fwd.layer_inputs.push_back(x);
    const DecoderLayerParams& p = w_.decoder[i];
    Tensor mem = cache_dec.view(i);
    int64_t m = mem.dim(0);
    if (peak_logit_entries != nullptr) {
      *peak_logit_entries = std::max(*peak_logit_entries, lp * (lp + m));
      *peak_logit_entries = std::max(*peak_logit_entries, lp * enc_out.dim(0));
    }

    // causal self-attention over the memory-extended context
    MaskBias mask = build_causal_mask(lp, m);
    Tensor extended = extend_context(mem, x);
    QkvProjection qkv = project_qkv(x, extended, p.self_attn);
    Tensor b_rel_slice =
        slice(p.self_attn.b_rel, {0, 0, 0}, {p.self_attn.b_rel.dim(0), lp, m});
    AttentionResult self = relative_attention(qkv.q, qkv.k, qkv.v, b_rel_slice,
                                              &mask, p.self_attn.w_o,
                                              p.self_attn.n_heads);
    x = layer_norm(add(x, self.out), p.ln_self.gain, p.ln_self.bias);

    // cross-attention over this segment's encoder outputs only
    Tensor cq = matmul(x, permute(p.cross_attn.w_q, {1, 0}));
    Tensor ck = matmul(enc_out, permute(p.cross_attn.w_k, {1, 0}));
    Tensor cv = matmul(enc_out, permute(p.cross_attn.w_v, {1, 0}));
    AttentionResult cross = relative_attention(cq, ck, cv, Tensor(), nullptr,
                                               p.cross_attn.w_o,
                                               p.cross_attn.n_heads);
    x = layer_norm(add(x, cross.out), p.ln_cross.gain, p.ln_cross.bias);
    fwd.res.cross_attn_layers.push_back(cross.weights);
    if (i == dump_layer) fwd.res.cross_attn = cross.weights;

    Tensor hidden = relu(add(matmul(x, permute(p.ffn.w1, {1, 0})),
                             reshape(p.ffn.b1, {1, config_.d_ff})));
    Tensor ff = add(matmul(hidden, permute(p.ffn.w2, {1, 0})),
                    reshape(p.ffn.b2, {1, config_.d_model}));
    x = layer_norm(add(x, ff), p.ln_ffn.gain, p.ln_ffn.bias);
  }

  fwd.res.mel = add(matmul(x, permute(w_.mel_w, {1, 0})),
                    reshape(w_.mel_b, {1, config_.n_mels}));
  fwd.res.stop_utt_logits = head_logits(x, w_.stop_utt_w, w_.stop_utt_b);
  fwd.res.stop_chunk_logits = head_logits(x, w_.stop_chunk_w, w_.stop_chunk_b);
  return fwd;
}

DecodeResult STransformer::decode_segment_teacher_forced(
    const Tensor& y_shifted, const Tensor& enc_out, CachedMemory& cache_dec,
    Rng* dropout_rng) const {
  DecodeForward fwd =
      decode_forward(y_shifted, enc_out, cache_dec, dropout_rng, nullptr);
  cache_dec.push(fwd.layer_inputs);
  return fwd.res;
}

Tensor STransformer::make_shifted_input(
    const Segment& seg, const std::vector<double>* prev_last_frame) const {
  if (seg.n_frames <= 0) {
    throw ValueError("make_shifted_input: segment has no frames");
  }
  if (seg.n_mels != config_.n_mels) {
    throw ShapeError("make_shifted_input: segment mel dim " +
                     std::to_string(seg.n_mels) + " vs model " +
                     std::to_string(config_.n_mels));
  }
  std::vector<double> shifted(seg.n_frames * config_.n_mels, 0.0);
  if (!seg.is_first) {
    if (prev_last_frame == nullptr ||
        static_cast<int64_t>(prev_last_frame->size()) != config_.n_mels) {
      throw ContractError(
          "make_shifted_input: non-first segment needs the previous segment's "
          "final frame");
    }
    std::copy(prev_last_frame->begin(), prev_last_frame->end(), shifted.begin());
  }
  // rows 1..l'-1 = ground truth frames 0..l'-2
  std::copy(seg.mel.begin(), seg.mel.end() - config_.n_mels,
            shifted.begin() + config_.n_mels);
  return Tensor::from_data({seg.n_frames, config_.n_mels}, std::move(shifted));
}

LossComponents STransformer::segment_loss(const DecodeResult& dec,
                                          const EncodeResult& enc,
                                          const Segment& seg) const {
  int64_t lp = seg.n_frames;
  Tensor target = Tensor::from_data({lp, config_.n_mels}, seg.mel);
  Tensor diff = sub(dec.mel, target);
  Tensor mel_l1 = mean_all(abs_elem(diff));
  Tensor mel_l2 = mean_all(mul(diff, diff));
  Tensor mel = add(mel_l1, mel_l2);

  // chunk-stop: 1 at the final frame of every segment;
  // utterance-stop: 1 at the final frame of the utterance-final segment
  std::vector<double> chunk_target(lp, 0.0);
  chunk_target[lp - 1] = 1.0;
  std::vector<double> utt_target(lp, 0.0);
  if (seg.is_last) utt_target[lp - 1] = 1.0;
  Tensor chunk_bce = bce_with_logits_mean(
      dec.stop_chunk_logits, Tensor::from_data({lp}, std::move(chunk_target)),
      config_.stop_pos_weight);
  Tensor utt_bce = bce_with_logits_mean(
      dec.stop_utt_logits, Tensor::from_data({lp}, std::move(utt_target)),
      config_.stop_pos_weight);

  Tensor rate_diff = add_scalar(enc.predicted_rate, -chunk_speaking_rate(seg));
  Tensor rate_err = mul(rate_diff, rate_diff);

  Tensor total = add(
      add(scale(mel, config_.loss_w_mel), scale(utt_bce, config_.loss_w_stop)),
      add(scale(chunk_bce, config_.loss_w_chunk_stop),
          scale(rate_err, config_.loss_w_rate)));

  LossComponents out;
  out.total = total;
  out.mel_l1 = mel_l1.item();
  out.mel_l2 = mel_l2.item();
  out.mel = mel.item();
  out.stop = utt_bce.item();
  out.chunk_stop = chunk_bce.item();
  out.rate = rate_err.item();
  return out;
}

double STransformer::predict_rate_value(const Tensor& enc_out_prerate) const {
  Tensor per_pos = head_logits(enc_out_prerate, w_.rate_head_w, w_.rate_head_b);
  return mean_all(per_pos).item();
}

SynthesisResult STransformer::synthesize(const std::vector<int64_t>& phoneme_ids,
                                         int64_t sentence_feature_id) const {
  SynthesisResult result;
  if (phoneme_ids.empty()) {
    result.mel = Tensor::zeros({0, config_.n_mels});
    return result;
  }
  if (!config_.symbols.empty() &&
      static_cast<int64_t>(config_.symbols.size()) != config_.n_phonemes) {
    throw ConfigError("synthesize: symbol table size mismatch");
  }
  std::vector<SymbolClass> classes;
  classes.reserve(phoneme_ids.size());
  for (int64_t id : phoneme_ids) {
    if (id < 0 || id >= config_.n_phonemes) {
      throw IndexError("synthesize: phoneme id " + std::to_string(id) +
                       " out of range");
    }
    classes.push_back(config_.symbols.empty()
                          ? SymbolClass::kPhone
                          : classify_symbol(config_.symbols[id]));
  }
  std::vector<ChunkSpan> spans =
      chunk_spans(classes, config_.chunk_size, config_.chunk_window);

  CachedMemory cache_enc = make_encoder_cache();
  CachedMemory cache_dec = make_decoder_cache();
  std::vector<double> prev_frame(config_.n_mels, 0.0);  // go frame
  std::vector<double> mel_out;

  for (size_t si = 0; si < spans.size(); ++si) {
    const ChunkSpan& span = spans[si];
    bool utt_end = (si + 1 == spans.size());
    std::vector<int64_t> seg_ids(phoneme_ids.begin() + span.begin,
                                 phoneme_ids.begin() + span.end);

    SegmentSynthesis seg;
    seg.enc_begin = span.begin;
    seg.n_enc = span.end - span.begin;

    EncodeForward enc = encode_forward(seg_ids, sentence_feature_id,
                                       std::nullopt, cache_enc,
                                       &seg.peak_logit_entries);
    cache_enc.push(enc.layer_inputs);
    seg.predicted_rate = enc.res.injected_rate;

    std::vector<double> frames;  // emitted mel rows
    DecodeForward last_pass;
    int64_t t = 0;
    for (;; ++t) {
      // decoder input rows: [seed, y_hat_0 .. y_hat_{t-1}]
      std::vector<double> input(prev_frame);
      input.insert(input.end(), frames.begin(), frames.end());
      Tensor y_in = Tensor::from_data({t + 1, config_.n_mels}, std::move(input));
      last_pass = decode_forward(y_in, enc.res.out, cache_dec, nullptr,
                                 &seg.peak_logit_entries);
      const auto& mel_row = last_pass.res.mel.data();
      frames.insert(frames.end(), mel_row.end() - config_.n_mels, mel_row.end());

      double combined = stop_logit(last_pass.res.stop_chunk_logits.data()[t],
                                   last_pass.res.stop_utt_logits.data()[t],
                                   utt_end ? 1 : 0, config_.stop_rule);
      double p_stop = 1.0 / (1.0 + std::exp(-combined));
      if (p_stop > config_.stop_threshold) break;
      if (t + 2 > config_.max_frames_per_segment) {
        seg.hit_frame_cap = true;
        ++result.frame_cap_warnings;
        break;
      }
    }
    cache_dec.push(last_pass.layer_inputs);
    seg.n_frames = t + 1;
    seg.cross_attn = last_pass.res.cross_attn.detach();
    prev_frame.assign(frames.end() - config_.n_mels, frames.end());
    mel_out.insert(mel_out.end(), frames.begin(), frames.end());
    result.segments.push_back(std::move(seg));
  }

  result.mel = Tensor::from_data(
      {static_cast<int64_t>(mel_out.size()) / config_.n_mels, config_.n_mels},
      std::move(mel_out));
  return result;
}

}  // namespace stf
