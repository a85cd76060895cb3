#include "stransformer/toy_corpus.h"

#include <cmath>
#include <filesystem>

namespace stf {

namespace fs = std::filesystem;

void ToySpec::validate() const {
  if (vocab_size < 1) throw ConfigError("toy: vocab_size must be >= 1");
  if (dur_min < 1 || dur_max < dur_min) {
    throw ConfigError("toy: need dur_max >= dur_min >= 1");
  }
  if (punct_duration < 0) throw ConfigError("toy: punct_duration must be >= 0");
  if (noise_amp < 0) throw ConfigError("toy: noise_amp must be >= 0");
  if (utt_min_symbols < 1 || utt_max_symbols < utt_min_symbols) {
    throw ConfigError("toy: bad utterance length range");
  }
  if (punct_rate < 0 || punct_rate > 1 || wb_rate < 0 || wb_rate > 1) {
    throw ConfigError("toy: injection rates must be in [0,1]");
  }
  if (n_sentence_types < 1) throw ConfigError("toy: n_sentence_types must be >= 1");
  if (duration_jitter < 0 || duration_jitter >= dur_min) {
    throw ConfigError("toy: duration_jitter must be in [0, dur_min)");
  }
  if (n_utts < 1) throw ConfigError("toy: n_utts must be >= 1");
}

std::vector<std::vector<double>> toy_templates(const ToySpec& spec,
                                               int64_t n_mels) {
  spec.validate();
  // templates must stay distinguishable under the configured noise
  double min_sep = 10.0 * spec.noise_amp;
  for (uint64_t salt = 0;; ++salt) {
    Rng rng = Rng(spec.seed).fork(9000 + salt);
    std::vector<std::vector<double>> t(spec.vocab_size + 1);
    for (auto& row : t) {
      row.resize(n_mels);
      for (auto& v : row) v = rng.normal(0.0, 0.5);
    }
    // pause template: quiet and flat
    for (auto& v : t[spec.vocab_size]) v = -0.6;
    bool ok = true;
    for (size_t i = 0; i < t.size() && ok; ++i) {
      for (size_t j = i + 1; j < t.size() && ok; ++j) {
        double sq = 0.0;
        for (int64_t m = 0; m < n_mels; ++m) {
          double d = t[i][m] - t[j][m];
          sq += d * d;
        }
        if (std::sqrt(sq) <= min_sep) ok = false;
      }
    }
    if (ok) return t;
    if (salt > 64) throw ConfigError("toy: cannot separate templates; lower noise_amp");
  }
}

std::vector<AlignedUtterance> gen_utterances(const ToySpec& spec,
                                             int64_t n_mels) {
  spec.validate();
  auto templates = toy_templates(spec, n_mels);
  std::vector<AlignedUtterance> corpus;
  corpus.reserve(spec.n_utts);
  for (int64_t ui = 0; ui < spec.n_utts; ++ui) {
    Rng rng = Rng(spec.seed).fork(static_cast<uint64_t>(ui));
    AlignedUtterance u;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "utt_%05lld", static_cast<long long>(ui));
    u.utt_id = buf;
    u.n_mels = n_mels;
    u.sentence_feature_id = rng.uniform_int(spec.n_sentence_types);

    int64_t n_phones = spec.utt_min_symbols +
                       rng.uniform_int(spec.utt_max_symbols - spec.utt_min_symbols + 1);
    for (int64_t p = 0; p < n_phones; ++p) {
      int64_t phone = rng.uniform_int(spec.vocab_size);
      u.symbols.push_back("p" + std::to_string(phone));
      int64_t dur = spec.phone_duration(phone);
      if (spec.duration_jitter > 0) {
        dur += rng.uniform_int(2 * spec.duration_jitter + 1) - spec.duration_jitter;
      }
      u.durations.push_back(dur);
      for (int64_t f = 0; f < dur; ++f) {
        for (int64_t m = 0; m < n_mels; ++m) {
          u.mel.push_back(templates[phone][m] +
                          rng.normal(0.0, spec.noise_amp));
        }
      }
      bool last_phone = (p + 1 == n_phones);
      if (!last_phone && rng.next_double() < spec.punct_rate) {
        u.symbols.push_back(",");
        u.durations.push_back(spec.punct_duration);
        for (int64_t f = 0; f < spec.punct_duration; ++f) {
          for (int64_t m = 0; m < n_mels; ++m) {
            u.mel.push_back(templates[spec.vocab_size][m] +
                            rng.normal(0.0, spec.noise_amp));
          }
        }
      } else if (!last_phone && rng.next_double() < spec.wb_rate) {
        u.symbols.push_back("_");
        u.durations.push_back(0);
      }
    }
    // utterance-final punctuation with its pause
    u.symbols.push_back(".");
    u.durations.push_back(spec.punct_duration);
    for (int64_t f = 0; f < spec.punct_duration; ++f) {
      for (int64_t m = 0; m < n_mels; ++m) {
        u.mel.push_back(templates[spec.vocab_size][m] +
                        rng.normal(0.0, spec.noise_amp));
      }
    }
    u.n_frames = static_cast<int64_t>(u.mel.size()) / n_mels;

    // sentence type expressed as a tilt on the last frames
    double center = (static_cast<double>(spec.n_sentence_types) - 1.0) / 2.0;
    double tilt = spec.sentence_tilt *
                  (static_cast<double>(u.sentence_feature_id) - center);
    int64_t tilted = std::min<int64_t>(3, u.n_frames);
    for (int64_t f = u.n_frames - tilted; f < u.n_frames; ++f) {
      for (int64_t m = 0; m < n_mels; ++m) u.mel[f * n_mels + m] += tilt;
    }

    u.validate();
    corpus.push_back(std::move(u));
  }
  return corpus;
}

CorpusStats gen_corpus(const ToySpec& spec, int64_t n_mels,
                       const std::string& out_dir, int64_t chunk_size,
                       int64_t window) {
  auto corpus = gen_utterances(spec, n_mels);

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "mel", ec);
  if (ec) throw IoError("cannot create corpus directory " + out_dir);

  std::vector<std::string> rel_paths;
  for (const auto& u : corpus) {
    std::string rel = "mel/" + u.utt_id + ".mel";
    write_mel_file((fs::path(out_dir) / rel).string(), u.mel, u.n_frames,
                   u.n_mels);
    rel_paths.push_back(rel);
  }
  write_manifest((fs::path(out_dir) / "manifest.txt").string(), corpus,
                 rel_paths);

  CorpusStats stats;
  stats.n_utts = static_cast<int64_t>(corpus.size());
  SymbolTable vocab = SymbolTable::from_corpus(corpus);
  double rate_sum = 0.0;
  for (const auto& u : corpus) {
    auto segs = segment_utterance(u, vocab, chunk_size, window);
    stats.n_segments += static_cast<int64_t>(segs.size());
    for (const auto& s : segs) {
      rate_sum += static_cast<double>(s.n_phonemes()) /
                  static_cast<double>(s.n_frames);
    }
  }
  stats.mean_chunk_rate =
      stats.n_segments > 0 ? rate_sum / static_cast<double>(stats.n_segments) : 0.0;
  return stats;
}

AlignmentEval eval_alignment(const std::vector<Tensor>& cross_attn,
                             const std::vector<int64_t>& enc_offsets) {
  if (cross_attn.size() != enc_offsets.size()) {
    throw ValueError("eval_alignment: one offset per segment required");
  }
  AlignmentEval eval;
  int64_t total_enc = 0;
  for (size_t s = 0; s < cross_attn.size(); ++s) {
    total_enc = std::max(total_enc, enc_offsets[s] + cross_attn[s].dim(2));
  }
  eval.emitted_durations.assign(total_enc, 0.0);

  for (size_t s = 0; s < cross_attn.size(); ++s) {
    const Tensor& a = cross_attn[s];
    int64_t heads = a.dim(0), frames = a.dim(1), cols = a.dim(2);
    const auto& d = a.data();
    for (int64_t t = 0; t < frames; ++t) {
      // head-averaged attention row
      double centroid = 0.0, mass = 0.0;
      double best = -1.0;
      int64_t best_col = 0;
      for (int64_t c = 0; c < cols; ++c) {
        double w = 0.0;
        for (int64_t h = 0; h < heads; ++h) {
          w += d[(h * frames + t) * cols + c];
        }
        w /= static_cast<double>(heads);
        centroid += w * static_cast<double>(c);
        mass += w;
        if (w > best) {
          best = w;
          best_col = c;
        }
      }
      centroid = mass > 0 ? centroid / mass : 0.0;
      eval.centroids.push_back(static_cast<double>(enc_offsets[s]) + centroid);
      eval.emitted_durations[enc_offsets[s] + best_col] += 1.0;
    }
  }

  int64_t steps = 0, monotone = 0;
  for (size_t i = 1; i < eval.centroids.size(); ++i) {
    ++steps;
    if (eval.centroids[i] >= eval.centroids[i - 1] - 0.5) ++monotone;
  }
  eval.monotonicity =
      steps > 0 ? static_cast<double>(monotone) / static_cast<double>(steps) : 1.0;
  return eval;
}

}  // namespace stf
