#include "stransformer/memory_cache.h"

namespace stf {

bool CachedMemory::break_stop_gradient_ = false;

CachedMemory::CachedMemory(int n_layers, int64_t capacity, int64_t d_model)
    : capacity_(capacity), d_model_(d_model) {
  if (n_layers <= 0) throw StructureError("CachedMemory: need at least 1 layer");
  if (capacity < 0) throw ValueError("CachedMemory: negative capacity");
  per_layer_.resize(n_layers);
  reset();
}

void CachedMemory::reset() {
  for (auto& buf : per_layer_) buf = Tensor::zeros({0, d_model_});
  length_ = 0;
}

void CachedMemory::push(const std::vector<Tensor>& layer_states) {
  if (layer_states.size() != per_layer_.size()) {
    throw StructureError("CachedMemory::push: got " +
                         std::to_string(layer_states.size()) + " states for " +
                         std::to_string(per_layer_.size()) + " layers");
  }
  int64_t l = layer_states.empty() ? 0 : layer_states[0].dim(0);
  for (const auto& s : layer_states) {
    if (s.rank() != 2 || s.dim(1) != d_model_ || s.dim(0) != l) {
      throw StructureError("CachedMemory::push: state " + shape_str(s.shape()) +
                           " does not match [L," + std::to_string(d_model_) + "]");
    }
  }
  for (size_t i = 0; i < per_layer_.size(); ++i) {
    Tensor incoming =
        break_stop_gradient_ ? layer_states[i] : stop_gradient(layer_states[i]);
    Tensor merged = concat_rows(per_layer_[i], incoming);
    int64_t total = merged.dim(0);
    if (total > capacity_) {
      merged = slice_rows(merged, total - capacity_, capacity_);
    }
    per_layer_[i] = merged;
  }
  length_ = std::min(length_ + l, capacity_);
}

void CachedMemory::restore(const std::vector<Tensor>& per_layer) {
  if (per_layer.size() != per_layer_.size()) {
    throw StructureError("CachedMemory::restore: layer count mismatch");
  }
  int64_t l = per_layer.empty() ? 0 : per_layer[0].dim(0);
  if (l > capacity_) {
    throw StructureError("CachedMemory::restore: length exceeds capacity");
  }
  for (const auto& t : per_layer) {
    if (t.rank() != 2 || t.dim(0) != l || t.dim(1) != d_model_) {
      throw StructureError("CachedMemory::restore: bad buffer shape " +
                           shape_str(t.shape()));
    }
  }
  for (size_t i = 0; i < per_layer_.size(); ++i) {
    per_layer_[i] = per_layer[i].detach();
  }
  length_ = l;
}

Tensor CachedMemory::view(int layer) const {
  if (layer < 0 || layer >= n_layers()) {
    throw IndexError("CachedMemory::view: layer " + std::to_string(layer) +
                     " out of range [0," + std::to_string(n_layers()) + ")");
  }
  return per_layer_[layer];
}

}  // namespace stf
