#pragma once

#include "stransformer/model.h"

namespace stf {

// Property suites behind `verify --suite ...`. Each check returns pass/fail
// plus a short detail string; the reference computations in here are plain
// double loops, independent of the Tensor op implementations they check.

struct CheckResult {
  std::string suite;
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyOptions {
  uint64_t seed = 99;
  int oracle_cases = 100;
  int memory_cases = 1000;
  int causal_cases = 100;
  int chunker_cases = 1000;
  bool break_stop_gradient = false;  // --break-sg mutation hook
};

std::vector<CheckResult> run_grad_suite(const VerifyOptions& opts);
std::vector<CheckResult> run_oracle_suite(const VerifyOptions& opts);
std::vector<CheckResult> run_memory_suite(const VerifyOptions& opts);
std::vector<CheckResult> run_causal_suite(const VerifyOptions& opts);
std::vector<CheckResult> run_chunker_suite(const VerifyOptions& opts);

// suite in {grad, oracle, memory, causal, chunker, all}
std::vector<CheckResult> run_verify_suite(const std::string& suite,
                                          const VerifyOptions& opts);

// Plain-loop multi-head attention reference used by the oracle suite and the
// acceptance tests. b_rel may be empty; mask entries are additive (-inf ok).
std::vector<double> reference_attention(
    const std::vector<double>& q, const std::vector<double>& k,
    const std::vector<double>& v, int64_t l, int64_t lm, int64_t d, int n_heads,
    const std::vector<double>* b_rel,  // [n_heads, l, lm-l], memory columns
    const std::vector<double>* mask,   // [l, lm]
    const std::vector<double>& w_o);

// Full single-layer reference (attention + residual + LN + FFN + residual +
// LN) over an extended context, mirroring transformer_layer's arithmetic.
std::vector<double> reference_transformer_layer(
    const std::vector<double>& cur, const std::vector<double>& mem, int64_t l,
    int64_t m, int64_t d, const TransformerLayerParams& p,
    const std::vector<double>* mask);

}  // namespace stf
