#include "stransformer/verify.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "stransformer/grad_check.h"

namespace stf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

CheckResult check(const std::string& suite, const std::string& name, bool pass,
                  const std::string& detail) {
  return CheckResult{suite, name, pass, detail};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : kInf;
  for (size_t i = 0; i < a.size() && i < b.size(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]));
  }
  return m;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_phonemes = 6;
  c.n_sentence_types = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.d_model = 16;
  c.d_ff = 32;
  c.n_heads_self = 2;
  c.n_heads_encdec = 2;
  c.n_mels = 4;
  c.chunk_size = 6;
  c.chunk_window = 2;
  c.enc_mem_capacity = 6;
  c.dec_mem_capacity = 4;
  c.l_max = 64;
  c.max_frames_per_segment = 40;
  c.dropout = 0.0;
  return c;
}

}  // namespace

std::vector<double> reference_attention(
    const std::vector<double>& q, const std::vector<double>& k,
    const std::vector<double>& v, int64_t l, int64_t lm, int64_t d, int n_heads,
    const std::vector<double>* b_rel, const std::vector<double>* mask,
    const std::vector<double>& w_o) {
  int64_t dh = d / n_heads;
  int64_t m = lm - l;
  double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> merged(l * d, 0.0);
  std::vector<double> logits(lm), weights(lm);
  for (int h = 0; h < n_heads; ++h) {
    for (int64_t i = 0; i < l; ++i) {
      for (int64_t j = 0; j < lm; ++j) {
        double acc = 0.0;
        for (int64_t p = 0; p < dh; ++p) {
          acc += q[i * d + h * dh + p] * k[j * d + h * dh + p];
        }
        acc = acc * s;
        if (b_rel != nullptr) {
          acc = acc + (j < m ? (*b_rel)[(h * l + i) * m + j] : 0.0);
        }
        if (mask != nullptr) acc = acc + (*mask)[i * lm + j];
        logits[j] = acc;
      }
      double mx = -kInf;
      for (int64_t j = 0; j < lm; ++j) mx = std::max(mx, logits[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < lm; ++j) {
        double e = std::exp(logits[j] - mx);
        weights[j] = e;
        sum += e;
      }
      double inv = 1.0 / sum;
      for (int64_t j = 0; j < lm; ++j) weights[j] *= inv;
      for (int64_t p = 0; p < dh; ++p) {
        double acc = 0.0;
        for (int64_t j = 0; j < lm; ++j) {
          acc += weights[j] * v[j * d + h * dh + p];
        }
        merged[i * d + h * dh + p] = acc;
      }
    }
  }
  std::vector<double> out(l * d, 0.0);
  for (int64_t i = 0; i < l; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < d; ++p) acc += merged[i * d + p] * w_o[j * d + p];
      out[i * d + j] = acc;
    }
  }
  return out;
}

namespace {

// y = x * W^T, W row-major [out, in]
std::vector<double> ref_linear(const std::vector<double>& x, int64_t rows,
                               int64_t in, int64_t out,
                               const std::vector<double>& w) {
  std::vector<double> y(rows * out, 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < out; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < in; ++p) acc += x[i * in + p] * w[j * in + p];
      y[i * out + j] = acc;
    }
  }
  return y;
}

void ref_layer_norm(std::vector<double>& x, int64_t rows, int64_t d,
                    const std::vector<double>& gain,
                    const std::vector<double>& bias, double eps = 1e-5) {
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += x[r * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = x[r * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double istd = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) {
      double h = (x[r * d + j] - mean) * istd;
      double t = h * gain[j];
      x[r * d + j] = t + bias[j];
    }
  }
}

}  // namespace

std::vector<double> reference_transformer_layer(
    const std::vector<double>& cur, const std::vector<double>& mem, int64_t l,
    int64_t m, int64_t d, const TransformerLayerParams& p,
    const std::vector<double>* mask) {
  std::vector<double> ext(mem);
  ext.insert(ext.end(), cur.begin(), cur.end());
  int64_t lm = m + l;

  std::vector<double> q = ref_linear(cur, l, d, d, p.attn.w_q.data());
  std::vector<double> k = ref_linear(ext, lm, d, d, p.attn.w_k.data());
  std::vector<double> v = ref_linear(ext, lm, d, d, p.attn.w_v.data());

  std::vector<double> b_rel_slice;
  const std::vector<double>* b_rel_ptr = nullptr;
  if (p.attn.b_rel.defined()) {
    int64_t lmax = p.attn.b_rel.dim(1), mmax = p.attn.b_rel.dim(2);
    const auto& bd = p.attn.b_rel.data();
    b_rel_slice.resize(p.attn.n_heads * l * m);
    for (int h = 0; h < p.attn.n_heads; ++h) {
      for (int64_t i = 0; i < l; ++i) {
        for (int64_t j = 0; j < m; ++j) {
          b_rel_slice[(h * l + i) * m + j] = bd[(h * lmax + i) * mmax + j];
        }
      }
    }
    b_rel_ptr = &b_rel_slice;
  }
  std::vector<double> attn = reference_attention(
      q, k, v, l, lm, d, p.attn.n_heads, b_rel_ptr, mask, p.attn.w_o.data());

  std::vector<double> x(l * d);
  for (int64_t i = 0; i < l * d; ++i) x[i] = cur[i] + attn[i];
  ref_layer_norm(x, l, d, p.ln_attn.gain.data(), p.ln_attn.bias.data());

  int64_t dff = p.ffn.w1.dim(0);
  std::vector<double> hidden = ref_linear(x, l, d, dff, p.ffn.w1.data());
  for (int64_t i = 0; i < l; ++i) {
    for (int64_t f = 0; f < dff; ++f) {
      double t = hidden[i * dff + f] + p.ffn.b1.data()[f];
      hidden[i * dff + f] = t > 0.0 ? t : 0.0;
    }
  }
  std::vector<double> ff = ref_linear(hidden, l, dff, d, p.ffn.w2.data());
  for (int64_t i = 0; i < l; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      double t = ff[i * d + j] + p.ffn.b2.data()[j];
      x[i * d + j] = x[i * d + j] + t;
    }
  }
  ref_layer_norm(x, l, d, p.ln_ffn.gain.data(), p.ln_ffn.bias.data());
  return x;
}

namespace {

TransformerLayerParams random_layer_params(int64_t d, int64_t dff, int n_heads,
                                           int64_t l_max, int64_t m_max,
                                           Rng& rng, bool zero_b_rel = true) {
  TransformerLayerParams p;
  double lim = std::sqrt(6.0 / (2.0 * static_cast<double>(d)));
  p.attn.n_heads = n_heads;
  p.attn.w_q = Tensor::uniform({d, d}, -lim, lim, rng);
  p.attn.w_k = Tensor::uniform({d, d}, -lim, lim, rng);
  p.attn.w_v = Tensor::uniform({d, d}, -lim, lim, rng);
  p.attn.w_o = Tensor::uniform({d, d}, -lim, lim, rng);
  p.attn.b_rel = zero_b_rel ? Tensor::zeros({n_heads, l_max, m_max})
                            : Tensor::uniform({n_heads, l_max, m_max}, -0.5, 0.5, rng);
  p.ffn.w1 = Tensor::uniform({dff, d}, -lim, lim, rng);
  p.ffn.b1 = Tensor::uniform({dff}, -0.1, 0.1, rng);
  p.ffn.w2 = Tensor::uniform({d, dff}, -lim, lim, rng);
  p.ffn.b2 = Tensor::uniform({d}, -0.1, 0.1, rng);
  p.ln_attn.gain = Tensor::uniform({d}, 0.8, 1.2, rng);
  p.ln_attn.bias = Tensor::uniform({d}, -0.1, 0.1, rng);
  p.ln_ffn.gain = Tensor::uniform({d}, 0.8, 1.2, rng);
  p.ln_ffn.bias = Tensor::uniform({d}, -0.1, 0.1, rng);
  return p;
}

std::vector<Tensor> layer_param_list(TransformerLayerParams& p) {
  std::vector<Tensor> out = {p.attn.w_q, p.attn.w_k, p.attn.w_v, p.attn.w_o,
                             p.attn.b_rel, p.ffn.w1, p.ffn.b1, p.ffn.w2,
                             p.ffn.b2, p.ln_attn.gain, p.ln_attn.bias,
                             p.ln_ffn.gain, p.ln_ffn.bias};
  for (auto& t : out) t.set_requires_grad(true);
  return out;
}

}  // namespace

std::vector<CheckResult> run_grad_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  Rng rng(opts.seed);

  {
    Tensor a = Tensor::uniform({4, 5}, -1, 1, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({5, 2}, -1, 1, rng).set_requires_grad(true);
    Tensor w = Tensor::uniform({4, 2}, -1, 1, rng);
    double err = grad_check([&] { return sum_all(mul(matmul(a, b), w)); }, {a, b});
    results.push_back(check("grad", "matmul_4x5_5x2", err < 1e-6, "rel err " + fmt(err)));
  }
  {
    Tensor x = Tensor::uniform({3, 7}, -2, 2, rng).set_requires_grad(true);
    Tensor w = Tensor::uniform({3, 7}, -1, 1, rng);
    double err = grad_check([&] { return sum_all(mul(softmax_lastdim(x), w)); }, {x});
    results.push_back(check("grad", "softmax_lastdim", err < 1e-5, "rel err " + fmt(err)));
  }
  {
    Tensor x = Tensor::uniform({4, 6}, -2, 2, rng).set_requires_grad(true);
    Tensor g = Tensor::uniform({6}, 0.5, 1.5, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({6}, -0.5, 0.5, rng).set_requires_grad(true);
    Tensor w = Tensor::uniform({4, 6}, -1, 1, rng);
    double err = grad_check(
        [&] { return sum_all(mul(layer_norm(x, g, b), w)); }, {x, g, b});
    results.push_back(check("grad", "layer_norm", err < 1e-5, "rel err " + fmt(err)));
  }
  {
    Tensor x = Tensor::uniform({5, 3}, -1.5, 1.5, rng).set_requires_grad(true);
    Tensor w = Tensor::uniform({3, 1}, -1, 1, rng).set_requires_grad(true);
    Tensor targets = Tensor::from_data({5, 1}, {1, 0, 0, 1, 0});
    double err = grad_check(
        [&] { return bce_with_logits_mean(matmul(relu(x), w), targets, 1.7); },
        {x, w});
    results.push_back(
        check("grad", "relu_bce_chain", err < 1e-5, "rel err " + fmt(err)));
  }
  {
    int64_t l = 3, m = 2, d = 8;
    auto p = random_layer_params(d, 16, 2, l, m, rng, /*zero_b_rel=*/false);
    auto params = layer_param_list(p);
    Tensor cur = Tensor::uniform({l, d}, -1, 1, rng).set_requires_grad(true);
    params.push_back(cur);
    Tensor mem = Tensor::uniform({m, d}, -1, 1, rng);
    Tensor w = Tensor::uniform({l, d}, -1, 1, rng);
    MaskBias mask = build_causal_mask(l, m);
    double err = grad_check(
        [&] {
          return sum_all(mul(transformer_layer(cur, mem, p, &mask).out, w));
        },
        params, {1e-5, 200, opts.seed});
    results.push_back(
        check("grad", "transformer_layer", err < 1e-4, "rel err " + fmt(err)));
  }
  {
    // full segment step: caches frozen so the finite-difference path matches
    // the stop-gradient semantics of the analytic graph
    STransformer model(tiny_config(), opts.seed + 1);
    Rng data_rng(opts.seed + 2);
    std::vector<int64_t> ids1 = {0, 3, 1, 2}, ids2 = {4, 2, 5};
    Segment seg;
    seg.utt_id = "probe";
    seg.phoneme_ids = ids2;
    seg.n_mels = model.config().n_mels;
    seg.n_frames = 5;
    seg.is_last = true;
    for (int64_t i = 0; i < seg.n_frames * seg.n_mels; ++i) {
      seg.mel.push_back(data_rng.uniform(-1, 1));
    }
    Segment seg1;
    seg1.utt_id = "probe";
    seg1.phoneme_ids = ids1;
    seg1.n_mels = model.config().n_mels;
    seg1.n_frames = 6;
    seg1.is_first = true;
    for (int64_t i = 0; i < seg1.n_frames * seg1.n_mels; ++i) {
      seg1.mel.push_back(data_rng.uniform(-1, 1));
    }

    CachedMemory enc0 = model.make_encoder_cache();
    CachedMemory dec0 = model.make_decoder_cache();
    Tensor y1 = model.make_shifted_input(seg1, nullptr);
    EncodeResult e1 = model.encode_segment(ids1, 0, chunk_speaking_rate(seg1), enc0);
    model.decode_segment_teacher_forced(y1, e1.out, dec0);
    std::vector<Tensor> enc_bufs, dec_bufs;
    for (int i = 0; i < enc0.n_layers(); ++i) enc_bufs.push_back(enc0.view(i));
    for (int i = 0; i < dec0.n_layers(); ++i) dec_bufs.push_back(dec0.view(i));
    std::vector<double> prev(seg1.mel.end() - seg1.n_mels, seg1.mel.end());

    std::vector<Tensor> params;
    for (auto& [name, t] : model.params().entries()) params.push_back(t);
    auto f = [&]() {
      CachedMemory enc = model.make_encoder_cache();
      CachedMemory dec = model.make_decoder_cache();
      enc.restore(enc_bufs);
      dec.restore(dec_bufs);
      EncodeResult e = model.encode_segment(ids2, 1, chunk_speaking_rate(seg), enc);
      Tensor y = model.make_shifted_input(seg, &prev);
      DecodeResult d = model.decode_segment_teacher_forced(y, e.out, dec);
      return model.segment_loss(d, e, seg).total;
    };
    double err = grad_check(f, params, {1e-5, 64, opts.seed});
    results.push_back(
        check("grad", "full_segment_loss", err < 1e-4, "rel err " + fmt(err)));
  }
  {
    // stop-gradient definition: d(sum(SG(x) * w))/dx == 0, /dw == x
    Tensor x = Tensor::uniform({3, 3}, -1, 1, rng).set_requires_grad(true);
    Tensor w = Tensor::uniform({3, 3}, -1, 1, rng).set_requires_grad(true);
    Tensor loss = sum_all(mul(stop_gradient(x), w));
    loss.backward();
    bool x_zero = x.grad().empty();
    for (double g : x.grad()) x_zero = x_zero && g == 0.0;
    bool w_match = !w.grad().empty();
    for (size_t i = 0; i < w.grad().size() && w_match; ++i) {
      w_match = w.grad()[i] == x.data()[i];
    }
    results.push_back(check("grad", "stop_gradient_definition", x_zero && w_match,
                            x_zero ? "upstream grad exactly 0" : "leak detected"));
  }
  {
    // harness sanity: a deliberately wrong backward rule must be caught
    Tensor x = Tensor::uniform({4}, -1, 1, rng).set_requires_grad(true);
    auto bad_scale = [](const Tensor& in) {
      std::vector<double> out(in.data());
      for (auto& v : out) v *= 3.0;
      return Tensor::make_node(in.shape(), std::move(out), {in},
                               [in](Tensor::Node& self) {
                                 auto& dx = Tensor::grad_buf(*in.node());
                                 for (size_t i = 0; i < self.grad.size(); ++i) {
                                   dx[i] += 6.0 * self.grad[i];  // wrong: 2x
                                 }
                               });
    };
    double err = grad_check([&] { return sum_all(bad_scale(x)); }, {x});
    results.push_back(check("grad", "broken_backward_detected", err > 1e-2,
                            "rel err " + fmt(err)));
  }
  return results;
}

std::vector<CheckResult> run_oracle_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  Rng rng(opts.seed + 10);

  {
    // M = 0 reduction: segment attention must equal the standard layer
    // bit-for-bit (same op order)
    double worst = 0.0;
    for (int c = 0; c < 5; ++c) {
      int64_t l = 2 + rng.uniform_int(6);
      int64_t d = 8 * (1 + rng.uniform_int(2));
      int heads = (c % 2 == 0) ? 2 : 4;
      auto p = random_layer_params(d, 2 * d, heads, l, 4, rng);
      Tensor cur = Tensor::uniform({l, d}, -1, 1, rng);
      Tensor mem = Tensor::zeros({0, d});
      LayerResult got = transformer_layer(cur, mem, p, nullptr);
      auto want =
          reference_transformer_layer(cur.data(), {}, l, 0, d, p, nullptr);
      worst = std::max(worst, max_abs_diff(got.out.data(), want));
    }
    results.push_back(check("oracle", "reduction_m0_bitexact", worst == 0.0,
                            "max abs diff " + fmt(worst)));
  }
  {
    // concatenation oracle: segmented == full-sequence rows [M, M+L)
    double worst = 0.0;
    int bad = 0;
    for (int c = 0; c < opts.oracle_cases; ++c) {
      int64_t l = 1 + rng.uniform_int(6);
      int64_t m = rng.uniform_int(9);
      int64_t d = 4 << rng.uniform_int(3);
      int heads = (d >= 8 && c % 3 == 0) ? 4 : 2;
      auto p = random_layer_params(d, 2 * d, heads, l + m, m, rng);
      Tensor mem = Tensor::uniform({m, d}, -1, 1, rng);
      Tensor cur = Tensor::uniform({l, d}, -1, 1, rng);
      Tensor seg_out = transformer_layer(cur, mem, p, nullptr).out;
      Tensor full_in = m > 0 ? concat_rows(mem, cur) : cur;
      Tensor full_out =
          transformer_layer(full_in, Tensor::zeros({0, d}), p, nullptr).out;
      auto rows = slice_rows(full_out, m, l);
      double diff = max_abs_diff(seg_out.data(), rows.data());
      worst = std::max(worst, diff);
      if (diff >= 1e-9) ++bad;
    }
    results.push_back(check("oracle", "concatenation_oracle", bad == 0,
                            std::to_string(opts.oracle_cases) +
                                " cases, max abs diff " + fmt(worst)));
  }
  {
    // saturation probe: a dominant memory-column bias routes the output to
    // that memory position's value row
    int64_t l = 2, m = 3, d = 8;
    int heads = 1;
    Rng prng(opts.seed + 20);
    Tensor cur = Tensor::uniform({l, d}, -1, 1, prng);
    Tensor mem = Tensor::uniform({m, d}, -1, 1, prng);
    Tensor ext = concat_rows(mem, cur);
    Tensor eye = Tensor::zeros({d, d});
    for (int64_t i = 0; i < d; ++i) eye.mutable_data()[i * d + i] = 1.0;
    std::vector<double> b(heads * l * (m + 0), -1e9);
    for (int64_t i = 0; i < l; ++i) b[i * m + 1] = 1e9;  // favor memory pos 1
    Tensor b_rel = Tensor::from_data({heads, l, m}, b);
    MaskBias mask = build_padding_mask(0, l, m);  // mask all current columns
    AttentionResult res =
        relative_attention(cur, ext, ext, b_rel, &mask, eye, heads);
    std::vector<double> want(mem.data().begin() + d, mem.data().begin() + 2 * d);
    double diff = 0.0;
    for (int64_t i = 0; i < l; ++i) {
      for (int64_t j = 0; j < d; ++j) {
        diff = std::max(diff, std::fabs(res.out.data()[i * d + j] - want[j]));
      }
    }
    results.push_back(
        check("oracle", "b_rel_saturation", diff < 1e-9, "max abs diff " + fmt(diff)));
  }
  return results;
}

std::vector<CheckResult> run_memory_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  CachedMemory::test_disable_detach(opts.break_stop_gradient);
  Rng rng(opts.seed + 30);

  {
    // FIFO fuzz against a plain list-suffix reference
    int bad = 0;
    std::string detail;
    for (int c = 0; c < opts.memory_cases; ++c) {
      int layers = 1 + static_cast<int>(rng.uniform_int(3));
      int64_t cap = rng.uniform_int(9);
      int64_t d = 1 + rng.uniform_int(4);
      CachedMemory cache(layers, cap, d);
      std::vector<std::vector<double>> ref(layers);  // flat row storage
      int ops = 1 + static_cast<int>(rng.uniform_int(12));
      for (int o = 0; o < ops; ++o) {
        if (rng.uniform_int(6) == 0) {
          cache.reset();
          for (auto& r : ref) r.clear();
          continue;
        }
        int64_t push_l = 1 + rng.uniform_int(5);
        std::vector<Tensor> states;
        for (int layer = 0; layer < layers; ++layer) {
          Tensor t = Tensor::uniform({push_l, d}, -1, 1, rng);
          states.push_back(t);
          auto& r = ref[layer];
          r.insert(r.end(), t.data().begin(), t.data().end());
          int64_t max_len = cap * d;
          if (static_cast<int64_t>(r.size()) > max_len) {
            r.erase(r.begin(), r.end() - max_len);
          }
        }
        cache.push(states);
      }
      int64_t expect_len = static_cast<int64_t>(ref[0].size()) / d;
      bool ok = cache.length() == expect_len;
      for (int layer = 0; layer < layers && ok; ++layer) {
        Tensor v = cache.view(layer);
        ok = v.dim(0) == expect_len && v.data() == ref[layer];
      }
      if (!ok && ++bad == 1) detail = "first failure at case " + std::to_string(c);
    }
    results.push_back(check("memory", "fifo_suffix_fuzz", bad == 0,
                            bad == 0 ? std::to_string(opts.memory_cases) + " cases"
                                     : detail));
  }
  {
    // Fig. 2 geometry: capacity 4, two pushes of length 4 keep the newest 4
    CachedMemory cache(1, 4, 2);
    Rng prng(opts.seed + 31);
    Tensor a = Tensor::uniform({4, 2}, -1, 1, prng);
    Tensor b = Tensor::uniform({4, 2}, -1, 1, prng);
    cache.push({a});
    cache.push({b});
    bool ok = cache.view(0).data() == b.data();
    results.push_back(check("memory", "segment_length4_geometry", ok,
                            ok ? "second segment retained" : "wrong contents"));
  }
  {
    // detachment: gradient mass upstream of the cache is exactly zero
    Tensor w = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor state = mul(w, Tensor::full({3, 4}, 2.0));
    CachedMemory cache(1, 8, 4);
    cache.push({state});
    Tensor loss = sum_all(cache.view(0));
    loss.backward();
    double mass = 0.0;
    for (double g : w.grad()) mass += std::fabs(g);
    results.push_back(check("memory", "cache_detaches_gradient", mass == 0.0,
                            "upstream |grad| = " + fmt(mass)));
  }
  {
    // reset semantics: empty memory extension is the identity concatenation
    CachedMemory cache(2, 6, 3);
    Rng prng(opts.seed + 32);
    cache.push({Tensor::uniform({2, 3}, -1, 1, prng),
                Tensor::uniform({2, 3}, -1, 1, prng)});
    cache.reset();
    cache.reset();  // idempotent
    Tensor cur = Tensor::uniform({3, 3}, -1, 1, prng);
    Tensor ext = extend_context(cache.view(0), cur);
    bool ok = cache.length() == 0 && ext.data() == cur.data() &&
              cache.view(1).dim(0) == 0;
    results.push_back(check("memory", "reset_then_extend_identity", ok,
                            ok ? "identity" : "reset failed"));
  }
  CachedMemory::test_disable_detach(false);
  return results;
}

std::vector<CheckResult> run_causal_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  Rng rng(opts.seed + 40);
  STransformer model(tiny_config(), opts.seed + 41);
  const auto& c = model.config();

  int bad = 0;
  for (int probe = 0; probe < opts.causal_cases; ++probe) {
    int64_t lp = 3 + rng.uniform_int(6);
    int64_t l = 2 + rng.uniform_int(4);
    std::vector<int64_t> ids;
    for (int64_t i = 0; i < l; ++i) ids.push_back(rng.uniform_int(c.n_phonemes));
    Tensor y = Tensor::uniform({lp, c.n_mels}, -1, 1, rng);
    int64_t t = rng.uniform_int(lp - 1);
    int64_t tp = t + 1 + rng.uniform_int(lp - t - 1);  // strictly in the future

    // identical fresh caches, optionally pre-filled by one prior segment
    auto run = [&](const Tensor& input) {
      CachedMemory enc = model.make_encoder_cache();
      CachedMemory dec = model.make_decoder_cache();
      if (probe % 2 == 0) {
        Rng fill(opts.seed + 100 + probe);
        std::vector<int64_t> ids0 = {1, 2};
        Tensor y0 = Tensor::uniform({3, c.n_mels}, -1, 1, fill);
        EncodeResult e0 = model.encode_segment(ids0, 0, 0.5, enc);
        model.decode_segment_teacher_forced(y0, e0.out, dec);
      }
      EncodeResult e = model.encode_segment(ids, 0, 0.5, enc);
      return model.decode_segment_teacher_forced(input, e.out, dec);
    };
    DecodeResult base = run(y);
    Tensor y2 = Tensor::from_data(y.shape(), y.data());
    y2.mutable_data()[tp * c.n_mels + rng.uniform_int(c.n_mels)] += 0.37;
    DecodeResult pert = run(y2);

    bool ok = true;
    for (int64_t r = 0; r <= t && ok; ++r) {
      for (int64_t j = 0; j < c.n_mels; ++j) {
        if (base.mel.data()[r * c.n_mels + j] != pert.mel.data()[r * c.n_mels + j]) {
          ok = false;
          break;
        }
      }
      if (base.stop_chunk_logits.data()[r] != pert.stop_chunk_logits.data()[r] ||
          base.stop_utt_logits.data()[r] != pert.stop_utt_logits.data()[r]) {
        ok = false;
      }
    }
    if (!ok) ++bad;
  }
  results.push_back(check("causal", "future_frame_isolation", bad == 0,
                          std::to_string(opts.causal_cases) + " probes, " +
                              std::to_string(bad) + " leaks"));

  {
    // mask geometry spot checks
    MaskBias m1 = build_causal_mask(3, 0);
    bool ok = m1.values.at({0, 1}) == -kInf && m1.values.at({1, 1}) == 0.0 &&
              m1.values.at({2, 0}) == 0.0;
    MaskBias m2 = build_causal_mask(2, 3);
    for (int64_t j = 0; j <= 3; ++j) ok = ok && m2.values.at({0, j}) == 0.0;
    ok = ok && m2.values.at({0, 4}) == -kInf;
    MaskBias m3 = build_padding_mask(3, 3, 2);
    for (int64_t i = 0; i < 3; ++i) {
      for (int64_t j = 0; j < 5; ++j) ok = ok && m3.values.at({i, j}) == 0.0;
    }
    results.push_back(check("causal", "mask_geometry", ok,
                            ok ? "causal + padding rules hold" : "bad mask"));
  }
  return results;
}

std::vector<CheckResult> run_chunker_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  Rng rng(opts.seed + 50);

  int partition_bad = 0, bound_bad = 0, prefer_bad = 0, determinism_bad = 0;
  for (int c = 0; c < opts.chunker_cases; ++c) {
    int64_t chunk = 6 + rng.uniform_int(7);
    int64_t window = 2 + rng.uniform_int(std::min<int64_t>(4, chunk - 3));
    int64_t n = 1 + rng.uniform_int(80);
    AlignedUtterance u;
    u.utt_id = "fuzz_" + std::to_string(c);
    u.n_mels = 1;
    for (int64_t i = 0; i < n; ++i) {
      int64_t kind = rng.uniform_int(10);
      if (kind == 0) {
        u.symbols.push_back(",");
        u.durations.push_back(rng.uniform_int(3));
      } else if (kind <= 2) {
        u.symbols.push_back("_");
        u.durations.push_back(0);
      } else {
        u.symbols.push_back("p" + std::to_string(rng.uniform_int(5)));
        u.durations.push_back(1 + rng.uniform_int(6));
      }
    }
    for (int64_t i = 0; i < n; ++i) u.n_frames += u.durations[i];
    for (int64_t f = 0; f < u.n_frames; ++f) u.mel.push_back(static_cast<double>(f));
    if (u.n_frames == 0) continue;  // degenerate, no aligned frames at all

    SymbolTable vocab = SymbolTable::from_corpus({u});
    auto segs = segment_utterance(u, vocab, chunk, window);
    auto segs2 = segment_utterance(u, vocab, chunk, window);

    // partition: phoneme ids and mel frames concatenate back exactly
    std::vector<int64_t> all_ids;
    std::vector<double> all_mel;
    for (const auto& s : segs) {
      all_ids.insert(all_ids.end(), s.phoneme_ids.begin(), s.phoneme_ids.end());
      all_mel.insert(all_mel.end(), s.mel.begin(), s.mel.end());
    }
    std::vector<int64_t> want_ids;
    for (const auto& sym : u.symbols) want_ids.push_back(vocab.id_of(sym));
    if (all_ids != want_ids || all_mel != u.mel) ++partition_bad;

    for (const auto& s : segs) {
      if (s.n_phonemes() < 1 || s.n_phonemes() > chunk + window) ++bound_bad;
    }

    // punctuation preference on the raw spans (before zero-frame merging)
    std::vector<SymbolClass> classes(u.symbols.size());
    for (size_t i = 0; i < u.symbols.size(); ++i) {
      classes[i] = classify_symbol(u.symbols[i]);
    }
    auto spans = chunk_spans(classes, chunk, window);
    int64_t cursor = 0;
    for (const auto& sp : spans) {
      int64_t nominal = cursor + chunk;
      if (nominal < n) {
        bool punct_in_window = false;
        for (int64_t p = std::max(cursor, nominal - window);
             p <= std::min(n - 1, nominal + window - 1); ++p) {
          if (classes[p] == SymbolClass::kPunctuation) punct_in_window = true;
        }
        if (punct_in_window && sp.kind != BoundaryKind::kPunctuation) ++prefer_bad;
      }
      cursor = sp.end;
    }

    if (segs.size() != segs2.size()) ++determinism_bad;
  }
  results.push_back(check("chunker", "exact_partition", partition_bad == 0,
                          std::to_string(partition_bad) + " violations"));
  results.push_back(check("chunker", "length_bound", bound_bad == 0,
                          std::to_string(bound_bad) + " violations"));
  results.push_back(check("chunker", "punctuation_preference", prefer_bad == 0,
                          std::to_string(prefer_bad) + " violations"));
  results.push_back(check("chunker", "deterministic", determinism_bad == 0,
                          std::to_string(determinism_bad) + " violations"));
  return results;
}

std::vector<CheckResult> run_verify_suite(const std::string& suite,
                                          const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  auto append = [&out](std::vector<CheckResult> r) {
    out.insert(out.end(), r.begin(), r.end());
  };
  if (suite == "grad" || suite == "all") append(run_grad_suite(opts));
  if (suite == "oracle" || suite == "all") append(run_oracle_suite(opts));
  if (suite == "memory" || suite == "all") append(run_memory_suite(opts));
  if (suite == "causal" || suite == "all") append(run_causal_suite(opts));
  if (suite == "chunker" || suite == "all") append(run_chunker_suite(opts));
  if (out.empty()) {
    throw ValueError("verify: unknown suite '" + suite +
                     "' (grad|oracle|memory|causal|chunker|all)");
  }
  return out;
}

}  // namespace stf
