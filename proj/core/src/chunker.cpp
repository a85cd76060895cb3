#include "stransformer/chunker.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace stf {

namespace fs = std::filesystem;

SymbolClass classify_symbol(const std::string& symbol) {
  static const std::set<std::string> kPunct = {".", ",", "!", "?", ";", ":"};
  if (kPunct.count(symbol)) return SymbolClass::kPunctuation;
  if (symbol == "_") return SymbolClass::kWordBoundary;
  if (symbol == "~") return SymbolClass::kDelimiter;
  return SymbolClass::kPhone;
}

void AlignedUtterance::validate() const {
  if (symbols.size() != durations.size()) {
    throw DataError("utterance " + utt_id + ": " + std::to_string(symbols.size()) +
                    " symbols vs " + std::to_string(durations.size()) +
                    " durations");
  }
  int64_t total = 0;
  for (int64_t d : durations) {
    if (d < 0) throw DataError("utterance " + utt_id + ": negative duration");
    total += d;
  }
  if (total != n_frames) {
    throw DataError("utterance " + utt_id + ": durations sum to " +
                    std::to_string(total) + " but mel has " +
                    std::to_string(n_frames) + " frames");
  }
  if (n_frames * n_mels != static_cast<int64_t>(mel.size())) {
    throw DataError("utterance " + utt_id + ": mel buffer size mismatch");
  }
}

SymbolTable::SymbolTable(std::vector<std::string> symbols)
    : symbols_(std::move(symbols)) {
  std::set<std::string> seen;
  for (const auto& s : symbols_) {
    if (s.empty()) throw DataError("SymbolTable: empty symbol");
    if (!seen.insert(s).second) {
      throw DataError("SymbolTable: duplicate symbol '" + s + "'");
    }
  }
}

SymbolTable SymbolTable::from_corpus(const std::vector<AlignedUtterance>& corpus) {
  std::set<std::string> uniq;
  for (const auto& u : corpus) uniq.insert(u.symbols.begin(), u.symbols.end());
  return SymbolTable(std::vector<std::string>(uniq.begin(), uniq.end()));
}

std::optional<int64_t> SymbolTable::try_id(const std::string& symbol) const {
  auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end()) return std::nullopt;
  return static_cast<int64_t>(it - symbols_.begin());
}

int64_t SymbolTable::id_of(const std::string& symbol) const {
  auto id = try_id(symbol);
  if (!id) throw DataError("SymbolTable: unknown symbol '" + symbol + "'");
  return *id;
}

const std::string& SymbolTable::symbol_of(int64_t id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("SymbolTable: id " + std::to_string(id) + " out of range");
  }
  return symbols_[id];
}

std::vector<ChunkSpan> chunk_spans(const std::vector<SymbolClass>& classes,
                                   int64_t chunk_size, int64_t window) {
  if (chunk_size <= window || window <= 0) {
    throw ValueError("chunk_spans: requires chunk_size > window > 0");
  }
  int64_t n = static_cast<int64_t>(classes.size());
  std::vector<ChunkSpan> spans;
  int64_t cursor = 0;
  while (cursor < n) {
    int64_t nominal = cursor + chunk_size;  // exclusive cut after chunk_size symbols
    if (nominal >= n) {
      spans.push_back({cursor, n, BoundaryKind::kHard});
      break;
    }
    // candidate boundary symbols: indices that close the left chunk; the
    // right edge stops one short of nominal+window so the segment-length
    // bound chunk_size + window holds
    int64_t lo = std::max(cursor, nominal - window);
    int64_t hi = std::min(n - 1, nominal + window - 1);
    int64_t best = -1;
    int rank_best = 99;  // 0 punctuation, 1 word boundary
    int64_t dist_best = 0;
    for (int64_t p = lo; p <= hi; ++p) {
      int rank;
      switch (classes[p]) {
        case SymbolClass::kPunctuation:
          rank = 0;
          break;
        case SymbolClass::kWordBoundary:
          rank = 1;
          break;
        default:
          continue;
      }
      int64_t dist = std::llabs(p - nominal);
      if (rank < rank_best ||
          (rank == rank_best && (best == -1 || dist < dist_best))) {
        best = p;
        rank_best = rank;
        dist_best = dist;
      }
    }
    ChunkSpan span;
    span.begin = cursor;
    if (best >= 0) {
      span.end = best + 1;  // boundary symbol belongs to the left chunk
      span.kind = rank_best == 0 ? BoundaryKind::kPunctuation : BoundaryKind::kWord;
    } else {
      span.end = nominal;  // hard cut at nominal
      span.kind = BoundaryKind::kHard;
    }
    spans.push_back(span);
    cursor = span.end;
  }
  return spans;
}

std::vector<Segment> segment_utterance(const AlignedUtterance& u,
                                       const SymbolTable& vocab,
                                       int64_t chunk_size, int64_t window) {
  u.validate();
  if (u.symbols.empty()) return {};
  std::vector<SymbolClass> classes(u.symbols.size());
  for (size_t i = 0; i < u.symbols.size(); ++i) classes[i] = classify_symbol(u.symbols[i]);
  std::vector<ChunkSpan> spans = chunk_spans(classes, chunk_size, window);

  // frame prefix sums
  std::vector<int64_t> frame_end(u.symbols.size() + 1, 0);
  for (size_t i = 0; i < u.durations.size(); ++i) {
    frame_end[i + 1] = frame_end[i] + u.durations[i];
  }

  // merge zero-frame spans into their predecessor; a leading zero-frame span
  // folds forward into its successor instead
  std::vector<ChunkSpan> merged;
  for (const auto& s : spans) {
    int64_t frames = frame_end[s.end] - frame_end[s.begin];
    bool prev_zero = !merged.empty() && frame_end[merged.back().end] ==
                                            frame_end[merged.back().begin];
    if (!merged.empty() && (frames == 0 || prev_zero)) {
      merged.back().end = s.end;
      merged.back().kind = s.kind;
    } else {
      merged.push_back(s);
    }
  }

  std::vector<Segment> out;
  for (size_t i = 0; i < merged.size(); ++i) {
    const auto& s = merged[i];
    Segment seg;
    seg.utt_id = u.utt_id;
    seg.index = static_cast<int64_t>(i);
    seg.is_first = (i == 0);
    seg.is_last = (i + 1 == merged.size());
    seg.sentence_feature_id = u.sentence_feature_id;
    seg.boundary_kind = s.kind;
    seg.n_mels = u.n_mels;
    for (int64_t p = s.begin; p < s.end; ++p) {
      seg.phoneme_ids.push_back(vocab.id_of(u.symbols[p]));
    }
    int64_t f0 = frame_end[s.begin], f1 = frame_end[s.end];
    seg.n_frames = f1 - f0;
    seg.mel.assign(u.mel.begin() + f0 * u.n_mels, u.mel.begin() + f1 * u.n_mels);
    out.push_back(std::move(seg));
  }
  return out;
}

// --- mel files ---

namespace {
constexpr uint32_t kMelMagic = 0x314C454Du;  // "MEL1"
constexpr uint32_t kMelVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("unexpected end of file in " + path);
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void write_mel_file(const std::string& path, const std::vector<double>& mel,
                    int64_t n_frames, int64_t n_mels) {
  if (n_frames * n_mels != static_cast<int64_t>(mel.size())) {
    throw ShapeError("write_mel_file: buffer does not match header dims");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  put_u32(os, kMelMagic);
  put_u32(os, kMelVersion);
  put_u32(os, static_cast<uint32_t>(n_frames));
  put_u32(os, static_cast<uint32_t>(n_mels));
  for (double v : mel) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
  if (!os) throw IoError("write failed for " + path);
}

void read_mel_file(const std::string& path, std::vector<double>* mel,
                   int64_t* n_frames, int64_t* n_mels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  if (get_u32(is, path) != kMelMagic) throw DataError("bad magic in " + path);
  uint32_t version = get_u32(is, path);
  if (version != kMelVersion) {
    throw DataError("unsupported mel version " + std::to_string(version) +
                    " in " + path);
  }
  uint32_t frames = get_u32(is, path);
  uint32_t mels = get_u32(is, path);
  mel->resize(static_cast<size_t>(frames) * mels);
  for (auto& v : *mel) {
    uint32_t bits = get_u32(is, path);
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<double>(f);
  }
  *n_frames = frames;
  *n_mels = mels;
}

void write_manifest(const std::string& path,
                    const std::vector<AlignedUtterance>& corpus,
                    const std::vector<std::string>& mel_paths) {
  if (corpus.size() != mel_paths.size()) {
    throw ValueError("write_manifest: path count mismatch");
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& u = corpus[i];
    os << u.utt_id << "|";
    for (size_t j = 0; j < u.symbols.size(); ++j) {
      if (j) os << " ";
      os << u.symbols[j];
    }
    os << "|";
    for (size_t j = 0; j < u.durations.size(); ++j) {
      if (j) os << " ";
      os << u.durations[j];
    }
    os << "|" << u.sentence_feature_id << "|" << mel_paths[i] << "\n";
  }
  if (!os) throw IoError("write failed for " + path);
}

namespace {
std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}
}  // namespace

std::vector<AlignedUtterance> load_corpus(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<AlignedUtterance> corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split(line, '|');
    std::string utt_id = fields.empty() ? ("line " + std::to_string(line_no))
                                        : fields[0];
    if (fields.size() != 5) {
      throw DataError("corrupt record for utt '" + utt_id + "' (line " +
                      std::to_string(line_no) + "): expected 5 fields, got " +
                      std::to_string(fields.size()));
    }
    AlignedUtterance u;
    u.utt_id = fields[0];
    u.symbols = split_ws(fields[1]);
    for (const auto& tok : split_ws(fields[2])) {
      try {
        u.durations.push_back(std::stoll(tok));
      } catch (const std::exception&) {
        throw DataError("corrupt record for utt '" + u.utt_id +
                        "': bad duration '" + tok + "'");
      }
    }
    try {
      u.sentence_feature_id = std::stoll(fields[3]);
    } catch (const std::exception&) {
      throw DataError("corrupt record for utt '" + u.utt_id +
                      "': bad sentence feature '" + fields[3] + "'");
    }
    fs::path mel_path(fields[4]);
    if (mel_path.is_relative()) mel_path = base / mel_path;
    read_mel_file(mel_path.string(), &u.mel, &u.n_frames, &u.n_mels);
    try {
      u.validate();
    } catch (const Error& e) {
      throw DataError("corrupt record for utt '" + u.utt_id + "': " + e.what());
    }
    corpus.push_back(std::move(u));
  }
  return corpus;
}

BatchIterator::BatchIterator(const std::vector<AlignedUtterance>* corpus,
                             const SymbolTable* vocab, int batch_size,
                             int64_t chunk_size, int64_t window)
    : corpus_(corpus),
      vocab_(vocab),
      chunk_size_(chunk_size),
      window_(window),
      lanes_(batch_size) {
  if (batch_size <= 0) throw ValueError("BatchIterator: batch_size must be > 0");
}

bool BatchIterator::refill(Lane& lane) {
  while (next_utt_ < corpus_->size()) {
    const auto& u = (*corpus_)[next_utt_++];
    auto segs = segment_utterance(u, *vocab_, chunk_size_, window_);
    if (segs.empty()) continue;  // empty utterance, skip
    lane.segs = std::move(segs);
    lane.cursor = 0;
    lane.active = true;
    return true;
  }
  lane.active = false;
  return false;
}

std::optional<SegmentBatch> BatchIterator::next() {
  if (!primed_) {
    for (auto& lane : lanes_) refill(lane);
    primed_ = true;
  }
  SegmentBatch batch;
  batch.lanes.resize(lanes_.size());
  bool any = false;
  for (size_t i = 0; i < lanes_.size(); ++i) {
    Lane& lane = lanes_[i];
    if (!lane.active) continue;
    batch.lanes[i].segment = lane.segs[lane.cursor];
    batch.lanes[i].padding = false;
    any = true;
    if (++lane.cursor >= lane.segs.size()) refill(lane);
  }
  if (!any) return std::nullopt;
  ++batches_emitted_;
  return batch;
}

}  // namespace stf
