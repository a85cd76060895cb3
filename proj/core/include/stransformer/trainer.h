#pragma once

#include <memory>

#include "stransformer/config.h"

namespace stf {

struct StepLog {
  int64_t step = 0;
  double mel = 0.0;
  double stop = 0.0;
  double chunk_stop = 0.0;
  double rate = 0.0;
  double lr = 0.0;
  double total = 0.0;
  int active_lanes = 0;
};

// Segment-batch training driver: batch_size utterance lanes, caches reset on
// utterance-first segments, one optimizer update per segment batch. Dropout
// masks derive from (seed, step, lane), so a resumed run replays the exact
// loss curve of an uninterrupted one.
class Trainer {
 public:
  Trainer(STransformer* model, AdamState* adam,
          const std::vector<AlignedUtterance>* corpus, const SymbolTable* vocab,
          TrainConfig cfg, uint64_t seed);

  StepLog step();  // throws DivergenceError on a non-finite loss

  int64_t steps_done() const { return adam_->step; }

  // Lane caches, seed frames and data-stream position as checkpoint records
  // ("train.*"); import fast-forwards the iterator deterministically.
  std::vector<std::pair<std::string, Tensor>> export_state() const;
  void import_state(const std::vector<std::pair<std::string, Tensor>>& records);

 private:
  struct Lane {
    CachedMemory enc;
    CachedMemory dec;
    std::vector<double> prev_frame;
    bool has_prev = false;
  };

  SegmentBatch next_batch();
  void rebuild_iterator();

  STransformer* model_;
  AdamState* adam_;
  const std::vector<AlignedUtterance>* corpus_;
  const SymbolTable* vocab_;
  TrainConfig cfg_;
  uint64_t seed_;
  std::vector<Lane> lanes_;
  std::unique_ptr<BatchIterator> iter_;
  int64_t epoch_ = 0;
  int64_t batch_in_epoch_ = 0;
};

}  // namespace stf
