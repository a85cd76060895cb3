#include "stransformer/checkpoint.h"

#include <cstring>
#include <fstream>

namespace stf {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("truncated checkpoint " + path);
  }
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw IoError("truncated checkpoint " + path);
  }
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void put_f64(std::ostream& os, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

double get_f64(std::istream& is, const std::string& path) {
  uint64_t bits = get_u64(is, path);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor>>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u64(os, config_text.size());
  os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  put_u64(os, records.size());
  for (const auto& [name, t] : records) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
      put_u64(os, static_cast<uint64_t>(t.dim(i)));
    }
    for (double v : t.data()) put_f64(os, v);
  }
  if (!os) throw IoError("write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("bad checkpoint magic in " + path);
  }
  uint32_t version = get_u32(is, path);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData out;
  uint64_t cfg_len = get_u64(is, path);
  out.config_text.resize(cfg_len);
  if (cfg_len > 0 &&
      !is.read(out.config_text.data(), static_cast<std::streamsize>(cfg_len))) {
    throw IoError("truncated checkpoint " + path);
  }
  uint64_t n_records = get_u64(is, path);
  for (uint64_t r = 0; r < n_records; ++r) {
    uint32_t name_len = get_u32(is, path);
    std::string name(name_len, '\0');
    if (name_len > 0 && !is.read(name.data(), name_len)) {
      throw IoError("truncated checkpoint " + path);
    }
    uint32_t rank = get_u32(is, path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int64_t>(get_u64(is, path));
    }
    int64_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (int64_t i = 0; i < n; ++i) data[i] = get_f64(is, path);
    out.records.emplace_back(std::move(name),
                             Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> model_records(const STransformer& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : m.params().entries()) {
    out.emplace_back("model." + name, t);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> adam_records(const STransformer& m,
                                                         const AdamState& st) {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto& entries = m.params().entries();
  out.emplace_back("opt.step",
                   Tensor::from_data({1}, {static_cast<double>(st.step)}));
  for (size_t i = 0; i < entries.size(); ++i) {
    out.emplace_back("opt.m." + entries[i].first,
                     Tensor::from_data(entries[i].second.shape(), st.m[i]));
    out.emplace_back("opt.v." + entries[i].first,
                     Tensor::from_data(entries[i].second.shape(), st.v[i]));
  }
  return out;
}

namespace {
const Tensor* find_record(const CheckpointData& ckpt, const std::string& name) {
  for (const auto& [n, t] : ckpt.records) {
    if (n == name) return &t;
  }
  return nullptr;
}
}  // namespace

void restore_model(STransformer* m, const CheckpointData& ckpt) {
  for (auto& [name, t] : m->params().entries()) {
    const Tensor* rec = find_record(ckpt, "model." + name);
    if (rec == nullptr) {
      throw StructureError("checkpoint is missing parameter '" + name + "'");
    }
    if (rec->shape() != t.shape()) {
      throw StructureError("checkpoint parameter '" + name + "' has shape " +
                           shape_str(rec->shape()) + ", model expects " +
                           shape_str(t.shape()));
    }
    t.mutable_data() = rec->data();
  }
}

void restore_adam(const STransformer& m, AdamState* st,
                  const CheckpointData& ckpt) {
  const Tensor* step = find_record(ckpt, "opt.step");
  if (step == nullptr) throw StructureError("checkpoint has no optimizer state");
  st->step = static_cast<int64_t>(step->data()[0]);
  const auto& entries = m.params().entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    const Tensor* mm = find_record(ckpt, "opt.m." + entries[i].first);
    const Tensor* vv = find_record(ckpt, "opt.v." + entries[i].first);
    if (mm == nullptr || vv == nullptr) {
      throw StructureError("checkpoint is missing optimizer moments for '" +
                           entries[i].first + "'");
    }
    st->m[i] = mm->data();
    st->v[i] = vv->data();
  }
}

}  // namespace stf
