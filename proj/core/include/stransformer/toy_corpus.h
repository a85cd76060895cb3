#pragma once

#include "stransformer/chunker.h"
#include "stransformer/tensor.h"

namespace stf {

// Deterministic synthetic corpus: each phone carries a fixed frame count and
// a fixed spectral template, so duration, alignment and rate claims have
// sharp expected values. Stands in for a recorded speech corpus.
struct ToySpec {
  int64_t vocab_size = 8;      // phones p0..p{V-1}
  int64_t dur_min = 5;         // per-phone fixed duration range (frames)
  int64_t dur_max = 10;
  int64_t punct_duration = 6;  // pause frames for , and .
  double noise_amp = 0.02;
  int64_t utt_min_symbols = 8;  // phones per utterance, before injections
  int64_t utt_max_symbols = 16;
  double punct_rate = 0.08;  // mid-utterance "," injection probability
  double wb_rate = 0.2;      // word-boundary "_" injection probability
  int64_t n_sentence_types = 3;
  double sentence_tilt = 0.25;   // final-frames offset per type
  int64_t duration_jitter = 0;   // +- frames per occurrence, 0 = fixed
  int64_t n_utts = 200;
  uint64_t seed = 1234;

  void validate() const;

  int64_t phone_duration(int64_t phone_index) const {
    return dur_min + phone_index % (dur_max - dur_min + 1);
  }
};

// Per-symbol spectral templates, [vocab_size + 1, n_mels]; the last row is
// the punctuation pause template. Pairwise L2 distance is validated against
// 10x the noise amplitude.
std::vector<std::vector<double>> toy_templates(const ToySpec& spec,
                                               int64_t n_mels);

std::vector<AlignedUtterance> gen_utterances(const ToySpec& spec,
                                             int64_t n_mels);

struct CorpusStats {
  int64_t n_utts = 0;
  int64_t n_segments = 0;
  double mean_chunk_rate = 0.0;
};

// Writes out_dir/manifest.txt plus out_dir/mel/*.mel in the chunker's
// formats. Returns stats under the supplied chunking settings.
CorpusStats gen_corpus(const ToySpec& spec, int64_t n_mels,
                       const std::string& out_dir, int64_t chunk_size,
                       int64_t window);

// --- alignment diagnostics ---

struct AlignmentEval {
  double monotonicity = 1.0;  // fraction of nondecreasing centroid steps
  std::vector<double> centroids;           // per decoder frame, global encoder pos
  std::vector<double> emitted_durations;   // per encoder position, frames
};

// cross_attn: one [n_heads, frames, enc_len] tensor per segment;
// enc_offsets: each segment's first encoder position in the utterance.
// Centroids are head-averaged and offset into utterance-global positions;
// emitted durations count attention-argmax hits per encoder position.
AlignmentEval eval_alignment(const std::vector<Tensor>& cross_attn,
                             const std::vector<int64_t>& enc_offsets);

}  // namespace stf
