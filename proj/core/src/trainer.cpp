#include "stransformer/trainer.h"

#include <cmath>

namespace stf {

Trainer::Trainer(STransformer* model, AdamState* adam,
                 const std::vector<AlignedUtterance>* corpus,
                 const SymbolTable* vocab, TrainConfig cfg, uint64_t seed)
    : model_(model),
      adam_(adam),
      corpus_(corpus),
      vocab_(vocab),
      cfg_(cfg),
      seed_(seed) {
  if (corpus_->empty()) throw ValueError("Trainer: empty corpus");
  if (cfg_.batch_size <= 0) throw ValueError("Trainer: batch_size must be > 0");
  for (int i = 0; i < cfg_.batch_size; ++i) {
    lanes_.push_back(Lane{model_->make_encoder_cache(),
                          model_->make_decoder_cache(),
                          {},
                          false});
  }
  rebuild_iterator();
}

void Trainer::rebuild_iterator() {
  iter_ = std::make_unique<BatchIterator>(corpus_, vocab_, cfg_.batch_size,
                                          model_->config().chunk_size,
                                          model_->config().chunk_window);
}

SegmentBatch Trainer::next_batch() {
  auto batch = iter_->next();
  if (!batch) {
    ++epoch_;
    batch_in_epoch_ = 0;
    rebuild_iterator();
    batch = iter_->next();
    if (!batch) throw ValueError("Trainer: corpus yields no segments");
  }
  ++batch_in_epoch_;
  return *batch;
}

StepLog Trainer::step() {
  SegmentBatch batch = next_batch();
  int64_t this_step = adam_->step + 1;

  model_->params().zero_grad();
  Tensor total;
  StepLog log;
  for (size_t li = 0; li < batch.lanes.size(); ++li) {
    const LaneItem& item = batch.lanes[li];
    if (item.padding) continue;
    const Segment& seg = item.segment;
    Lane& lane = lanes_[li];
    if (seg.is_first) {
      lane.enc.reset();
      lane.dec.reset();
      lane.has_prev = false;
    }

    Rng dropout_rng = Rng(seed_).fork(
        static_cast<uint64_t>(this_step) * lanes_.size() + li);
    Tensor y_shifted = model_->make_shifted_input(
        seg, lane.has_prev ? &lane.prev_frame : nullptr);
    EncodeResult enc = model_->encode_segment(
        seg.phoneme_ids, seg.sentence_feature_id, chunk_speaking_rate(seg),
        lane.enc);
    DecodeResult dec = model_->decode_segment_teacher_forced(
        y_shifted, enc.out, lane.dec, &dropout_rng);
    LossComponents loss = model_->segment_loss(dec, enc, seg);

    total = total.defined() ? add(total, loss.total) : loss.total;
    log.mel += loss.mel;
    log.stop += loss.stop;
    log.chunk_stop += loss.chunk_stop;
    log.rate += loss.rate;
    ++log.active_lanes;

    lane.prev_frame.assign(seg.mel.end() - seg.n_mels, seg.mel.end());
    lane.has_prev = true;
  }
  if (log.active_lanes == 0) throw ValueError("Trainer: empty segment batch");

  double inv = 1.0 / static_cast<double>(log.active_lanes);
  total = scale(total, inv);
  log.mel *= inv;
  log.stop *= inv;
  log.chunk_stop *= inv;
  log.rate *= inv;
  log.total = total.item();
  if (!std::isfinite(log.total)) {
    throw DivergenceError("training diverged: non-finite loss at step " +
                          std::to_string(this_step));
  }
  total.backward();
  clip_grad_norm(model_->params(), cfg_.grad_clip);
  log.lr = adam_step(model_->params(), *adam_);
  log.step = adam_->step;
  return log;
}

std::vector<std::pair<std::string, Tensor>> Trainer::export_state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("train.epoch",
                   Tensor::from_data({1}, {static_cast<double>(epoch_)}));
  out.emplace_back("train.batch_in_epoch",
                   Tensor::from_data({1}, {static_cast<double>(batch_in_epoch_)}));
  for (size_t li = 0; li < lanes_.size(); ++li) {
    const Lane& lane = lanes_[li];
    std::string base = "train.lane" + std::to_string(li);
    for (int layer = 0; layer < lane.enc.n_layers(); ++layer) {
      out.emplace_back(base + ".enc." + std::to_string(layer),
                       lane.enc.view(layer));
    }
    for (int layer = 0; layer < lane.dec.n_layers(); ++layer) {
      out.emplace_back(base + ".dec." + std::to_string(layer),
                       lane.dec.view(layer));
    }
    out.emplace_back(base + ".has_prev",
                     Tensor::from_data({1}, {lane.has_prev ? 1.0 : 0.0}));
    out.emplace_back(
        base + ".prev_frame",
        lane.has_prev
            ? Tensor::from_data({model_->config().n_mels}, lane.prev_frame)
            : Tensor::zeros({model_->config().n_mels}));
  }
  return out;
}

void Trainer::import_state(
    const std::vector<std::pair<std::string, Tensor>>& records) {
  auto find = [&records](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : records) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  const Tensor* epoch = find("train.epoch");
  const Tensor* batch = find("train.batch_in_epoch");
  if (epoch == nullptr || batch == nullptr) {
    throw StructureError("checkpoint has no trainer state to resume from");
  }
  epoch_ = static_cast<int64_t>(epoch->data()[0]);
  batch_in_epoch_ = static_cast<int64_t>(batch->data()[0]);

  // replay the current epoch's data stream up to the recorded position
  rebuild_iterator();
  for (int64_t i = 0; i < batch_in_epoch_; ++i) {
    if (!iter_->next()) {
      throw StructureError("trainer state is inconsistent with the corpus");
    }
  }

  for (size_t li = 0; li < lanes_.size(); ++li) {
    Lane& lane = lanes_[li];
    std::string base = "train.lane" + std::to_string(li);
    std::vector<Tensor> enc_bufs, dec_bufs;
    for (int layer = 0; layer < lane.enc.n_layers(); ++layer) {
      const Tensor* t = find(base + ".enc." + std::to_string(layer));
      if (t == nullptr) throw StructureError("missing cache record " + base);
      enc_bufs.push_back(*t);
    }
    for (int layer = 0; layer < lane.dec.n_layers(); ++layer) {
      const Tensor* t = find(base + ".dec." + std::to_string(layer));
      if (t == nullptr) throw StructureError("missing cache record " + base);
      dec_bufs.push_back(*t);
    }
    lane.enc.restore(enc_bufs);
    lane.dec.restore(dec_bufs);
    const Tensor* has_prev = find(base + ".has_prev");
    const Tensor* prev = find(base + ".prev_frame");
    if (has_prev == nullptr || prev == nullptr) {
      throw StructureError("missing lane state record " + base);
    }
    lane.has_prev = has_prev->data()[0] != 0.0;
    lane.prev_frame = prev->data();
  }
}

}  // namespace stf
