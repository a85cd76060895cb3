#pragma once

#include <optional>

#include "stransformer/attention.h"
#include "stransformer/chunker.h"
#include "stransformer/memory_cache.h"
#include "stransformer/param_store.h"

namespace stf {

// How the two stop heads combine into the synthesis stop decision.
// kSelector gates by segment position: the chunk head decides on non-final
// segments, the utterance head on the final one. kLiteral reproduces the
// published weighting, whose logit is identically zero whenever utt_end = 1;
// it is kept behind this switch for fidelity checks only.
enum class StopRule { kSelector, kLiteral };

struct ModelConfig {
  std::vector<std::string> symbols;  // fixes n_phonemes when non-empty
  int64_t n_phonemes = 8;
  int64_t n_sentence_types = 3;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int64_t d_model = 64;
  int64_t d_ff = 256;
  int n_heads_self = 4;
  int n_heads_encdec = 2;
  int64_t n_mels = 16;
  int64_t chunk_size = 8;
  int64_t chunk_window = 3;
  int64_t enc_mem_capacity = 16;
  int64_t dec_mem_capacity = 4;
  int64_t l_max = 256;
  double dropout = 0.1;  // decoder pre-net, train time only
  int64_t reduction_factor = 1;
  double stop_pos_weight = 5.0;
  double loss_w_mel = 1.0;
  double loss_w_stop = 1.0;
  double loss_w_chunk_stop = 1.0;
  double loss_w_rate = 0.5;
  double stop_threshold = 0.5;
  int64_t max_frames_per_segment = 160;  // 20 x chunk_size
  StopRule stop_rule = StopRule::kSelector;
  int attn_dump_layer = -1;  // -1 = last decoder layer

  // CPU-trainable sizes; the acceptance suite runs on these.
  static ModelConfig desk_scale();
  // Sizes reported for the full-scale system (180-position encoder memory
  // variant). Provided for reference; not trainable on a desk.
  static ModelConfig paper_scale();

  void validate() const;  // throws ConfigError
};

double chunk_speaking_rate(const Segment& seg);  // l / l'

// Scalar stop-logit combination rule for one frame.
double stop_logit(double chunk_logit, double utt_logit, int utt_end,
                  StopRule rule);

struct PreNetParams {
  Tensor w1, b1;  // [hidden, in]
  Tensor w2, b2;  // [out, hidden]
};

struct DecoderLayerParams {
  AttentionParams self_attn;  // b_rel over decoder memory columns
  LayerNormParams ln_self;
  AttentionParams cross_attn;  // over the segment's encoder outputs, no b_rel
  LayerNormParams ln_cross;
  FeedForwardParams ffn;
  LayerNormParams ln_ffn;
};

struct STransformerParams {
  Tensor phoneme_embedding;  // [n_phonemes, d_model]
  PreNetParams enc_prenet;
  PreNetParams dec_prenet;   // mel -> d_model bottleneck
  PreNetParams sent_prenet;  // one-hot sentence type -> d_model
  std::vector<TransformerLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  Tensor mel_w, mel_b;              // [n_mels, d_model], [n_mels]
  Tensor stop_utt_w, stop_utt_b;    // [1, d_model], [1]
  Tensor stop_chunk_w, stop_chunk_b;
  Tensor rate_head_w, rate_head_b;      // [1, d_model], [1]
  Tensor rate_inject_w, rate_inject_b;  // [d_model, 1], [d_model]
  PositionalEncoding pe_enc, pe_dec;
};

struct EncodeResult {
  Tensor out;             // [l, d_model], speaking-rate injected
  Tensor out_prerate;     // [l, d_model], before rate injection
  Tensor predicted_rate;  // scalar head output, mean over positions
  double injected_rate = 0.0;
};

struct DecodeResult {
  Tensor mel;                // [l', n_mels]
  Tensor stop_utt_logits;    // [l']
  Tensor stop_chunk_logits;  // [l']
  Tensor cross_attn;         // [n_heads_encdec, l', l] from the dump layer
  std::vector<Tensor> cross_attn_layers;
};

struct LossComponents {
  Tensor total;  // weighted sum, scalar graph node
  double mel_l1 = 0.0;
  double mel_l2 = 0.0;
  double mel = 0.0;  // l1 + l2
  double stop = 0.0;
  double chunk_stop = 0.0;
  double rate = 0.0;
};

struct SegmentSynthesis {
  int64_t enc_begin = 0;  // symbol offset within the utterance
  int64_t n_enc = 0;
  int64_t n_frames = 0;
  bool hit_frame_cap = false;
  double predicted_rate = 0.0;
  Tensor cross_attn;  // [n_heads_encdec, n_frames, n_enc]
  int64_t peak_logit_entries = 0;  // largest per-head logits matrix seen
};

struct SynthesisResult {
  Tensor mel;  // [T, n_mels]
  std::vector<SegmentSynthesis> segments;
  int frame_cap_warnings = 0;
};

class STransformer {
 public:
  STransformer(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  STransformerParams& weights() { return w_; }
  const STransformerParams& weights() const { return w_; }

  CachedMemory make_encoder_cache() const;
  CachedMemory make_decoder_cache() const;

  // Embed -> pre-net -> +sentence feature -> +scaled PE -> encoder layers
  // with cached-memory extension (cache pushed per layer) -> rate injection.
  // Training passes the ground-truth rate; pass nullopt to inject the
  // predicted rate (synthesis).
  EncodeResult encode_segment(const std::vector<int64_t>& phoneme_ids,
                              int64_t sentence_feature_id,
                              std::optional<double> rate,
                              CachedMemory& cache_enc) const;

  // y_shifted is the ground-truth mel shifted right by one frame ([l',
  // n_mels]); row 0 is the zero go-frame for utterance-first segments and the
  // previous segment's final frame otherwise. Pushes the decoder cache.
  DecodeResult decode_segment_teacher_forced(const Tensor& y_shifted,
                                             const Tensor& enc_out,
                                             CachedMemory& cache_dec,
                                             Rng* dropout_rng = nullptr) const;

  // Builds y_shifted for a ground-truth segment.
  Tensor make_shifted_input(const Segment& seg,
                            const std::vector<double>* prev_last_frame) const;

  LossComponents segment_loss(const DecodeResult& dec, const EncodeResult& enc,
                              const Segment& seg) const;

  // Segment-by-segment free-running synthesis. Chunks the symbols with the
  // training chunker settings, carries both caches across segments, and
  // resets them only at the utterance start.
  SynthesisResult synthesize(const std::vector<int64_t>& phoneme_ids,
                             int64_t sentence_feature_id) const;

  double predict_rate_value(const Tensor& enc_out_prerate) const;

 private:
  struct DecodeForward {
    DecodeResult res;
    std::vector<Tensor> layer_inputs;
  };
  struct EncodeForward {
    EncodeResult res;
    std::vector<Tensor> layer_inputs;
  };
  EncodeForward encode_forward(const std::vector<int64_t>& phoneme_ids,
                               int64_t sentence_feature_id,
                               std::optional<double> rate,
                               const CachedMemory& cache_enc,
                               int64_t* peak_logit_entries) const;
  DecodeForward decode_forward(const Tensor& y_shifted, const Tensor& enc_out,
                               const CachedMemory& cache_dec, Rng* dropout_rng,
                               int64_t* peak_logit_entries) const;
  Tensor prenet(const PreNetParams& p, const Tensor& x, double dropout_rate,
                Rng* rng) const;
  Tensor sentence_feature(int64_t sentence_feature_id) const;
  Tensor head_logits(const Tensor& hidden, const Tensor& w, const Tensor& b) const;

  ModelConfig config_;
  ParamStore store_;
  STransformerParams w_;
};

}  // namespace stf
