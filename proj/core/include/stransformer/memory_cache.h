#pragma once

#include "stransformer/ops.h"

namespace stf {

// Fixed-capacity FIFO of gradient-detached per-layer hidden states: the
// cached memory a segment reuses as extended attention context. Owned by one
// utterance stream; reset at every utterance start. "Zero initialized" is
// realized as an empty memory so absent history injects no spurious keys.
class CachedMemory {
 public:
  CachedMemory(int n_layers, int64_t capacity, int64_t d_model);

  void reset();

  // Appends one [L, d_model] state per layer (same L across layers), detached
  // via stop_gradient, then trims to the newest `capacity` positions.
  void push(const std::vector<Tensor>& layer_states);

  // Read-only detached snapshot, [length(), d_model]; never carries gradient.
  Tensor view(int layer) const;

  // Replaces the buffers wholesale (checkpoint resume). One [L, d_model]
  // tensor per layer with a common L <= capacity; contents are detached.
  void restore(const std::vector<Tensor>& per_layer);

  int n_layers() const { return static_cast<int>(per_layer_.size()); }
  int64_t capacity() const { return capacity_; }
  int64_t d_model() const { return d_model_; }
  int64_t length() const { return length_; }

  // Test hook for the verify CLI's --break-sg mutation: skips the detach on
  // push so the stop-gradient suites can prove they would catch a violation.
  static void test_disable_detach(bool broken) { break_stop_gradient_ = broken; }

 private:
  int64_t capacity_;
  int64_t d_model_;
  int64_t length_ = 0;
  std::vector<Tensor> per_layer_;
  static bool break_stop_gradient_;
};

}  // namespace stf
