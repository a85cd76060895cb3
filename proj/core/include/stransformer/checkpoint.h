#pragma once

#include "stransformer/adam.h"
#include "stransformer/model.h"

namespace stf {

// Versioned binary checkpoint: magic string, format version, canonical config
// text block, then named tensor records (name length, name, rank, dims,
// little-endian f64 payload). Round-trips bit-exactly.

struct CheckpointData {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> records;
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor>>& records);
CheckpointData load_checkpoint(const std::string& path);

// Record-name conventions: model parameters "model.<name>", optimizer state
// "opt.{m,v}.<name>" + "opt.step", trainer resume state "train.*".
std::vector<std::pair<std::string, Tensor>> model_records(const STransformer& m);
std::vector<std::pair<std::string, Tensor>> adam_records(const STransformer& m,
                                                         const AdamState& st);

// Copies matching records back in place; throws StructureError on a missing
// or misshapen parameter.
void restore_model(STransformer* m, const CheckpointData& ckpt);
void restore_adam(const STransformer& m, AdamState* st, const CheckpointData& ckpt);

}  // namespace stf
