#pragma once

#include <optional>
#include <string>

#include "stransformer/common.h"

namespace stf {

enum class SymbolClass { kPhone, kWordBoundary, kPunctuation, kDelimiter };

// Class is carried by the symbol spelling itself so manifests stay plain text.
SymbolClass classify_symbol(const std::string& symbol);

enum class BoundaryKind { kPunctuation, kWord, kHard };

// One aligned segment: the unit the model trains on.
struct Segment {
  std::string utt_id;
  int64_t index = 0;  // position within the utterance
  std::vector<int64_t> phoneme_ids;
  std::vector<double> mel;  // [n_frames x n_mels], row-major
  int64_t n_frames = 0;
  int64_t n_mels = 0;
  bool is_first = false;
  bool is_last = false;  // utt_end indicator
  int64_t sentence_feature_id = 0;
  BoundaryKind boundary_kind = BoundaryKind::kHard;

  int64_t n_phonemes() const { return static_cast<int64_t>(phoneme_ids.size()); }
};

struct AlignedUtterance {
  std::string utt_id;
  std::vector<std::string> symbols;
  std::vector<int64_t> durations;  // frames per symbol, >= 0
  std::vector<double> mel;         // [n_frames x n_mels]
  int64_t n_frames = 0;
  int64_t n_mels = 0;
  int64_t sentence_feature_id = 0;

  void validate() const;  // sum(durations) == n_frames, sizes agree
};

// Stable symbol <-> id mapping. Training derives it from the corpus (sorted
// unique) and freezes it into the checkpoint config.
class SymbolTable {
 public:
  SymbolTable() = default;
  explicit SymbolTable(std::vector<std::string> symbols);
  static SymbolTable from_corpus(const std::vector<AlignedUtterance>& corpus);

  std::optional<int64_t> try_id(const std::string& symbol) const;
  int64_t id_of(const std::string& symbol) const;  // throws DataError
  const std::string& symbol_of(int64_t id) const;
  int64_t size() const { return static_cast<int64_t>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }

 private:
  std::vector<std::string> symbols_;
};

// Half-open symbol span of one chunk plus how its right edge was chosen.
struct ChunkSpan {
  int64_t begin = 0;
  int64_t end = 0;  // exclusive
  BoundaryKind kind = BoundaryKind::kHard;
};

// Boundary search: nominal cut after chunk_size symbols, scanned +-window
// around the nominal center, punctuation preferred over word boundaries over
// a hard cut, nearest-to-nominal wins, earlier position on an exact tie. The
// chosen boundary symbol closes the left chunk.
std::vector<ChunkSpan> chunk_spans(const std::vector<SymbolClass>& classes,
                                   int64_t chunk_size, int64_t window);

// Splits an aligned utterance into ordered segments. Mel boundaries follow
// duration sums; a zero-frame segment is merged into its predecessor.
std::vector<Segment> segment_utterance(const AlignedUtterance& u,
                                       const SymbolTable& vocab,
                                       int64_t chunk_size, int64_t window);

// --- corpus files ---
// Manifest: one record per line,
//   utt_id | space-separated symbols | space-separated durations | sentence_feature_id | mel path
// Mel file: "MEL1" magic, version, n_frames, n_mels (LE u32) + row-major LE f32.

void write_mel_file(const std::string& path, const std::vector<double>& mel,
                    int64_t n_frames, int64_t n_mels);
void read_mel_file(const std::string& path, std::vector<double>* mel,
                   int64_t* n_frames, int64_t* n_mels);

void write_manifest(const std::string& path,
                    const std::vector<AlignedUtterance>& corpus,
                    const std::vector<std::string>& mel_paths);
// Loads manifest + referenced mel files; relative mel paths resolve against
// the manifest's directory.
std::vector<AlignedUtterance> load_corpus(const std::string& manifest_path);

// Batched segment stream: batch_size parallel lanes, each emitting one
// utterance's segments strictly in order; finished lanes pull the next
// utterance; exhausted lanes emit padding items.
struct LaneItem {
  Segment segment;
  bool padding = true;
};

struct SegmentBatch {
  std::vector<LaneItem> lanes;
  bool any_active() const {
    for (const auto& l : lanes) {
      if (!l.padding) return true;
    }
    return false;
  }
};

class BatchIterator {
 public:
  BatchIterator(const std::vector<AlignedUtterance>* corpus,
                const SymbolTable* vocab, int batch_size, int64_t chunk_size,
                int64_t window);

  std::optional<SegmentBatch> next();  // nullopt once every lane is drained
  int64_t batches_emitted() const { return batches_emitted_; }

 private:
  struct Lane {
    std::vector<Segment> segs;
    size_t cursor = 0;
    bool active = false;
  };
  bool refill(Lane& lane);

  const std::vector<AlignedUtterance>* corpus_;
  const SymbolTable* vocab_;
  int64_t chunk_size_, window_;
  std::vector<Lane> lanes_;
  size_t next_utt_ = 0;
  int64_t batches_emitted_ = 0;
  bool primed_ = false;
};

}  // namespace stf
