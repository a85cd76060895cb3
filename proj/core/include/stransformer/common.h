#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stf {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Error hierarchy. Every throwing contract in the library uses one of these
// so callers can distinguish bad shapes from bad files from bad configs.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };        // dimension mismatch
struct IndexError : Error { using Error::Error; };        // out-of-range access
struct MaskError : Error { using Error::Error; };         // fully masked softmax row
struct StructureError : Error { using Error::Error; };    // layer-count / layout mismatch
struct ValueError : Error { using Error::Error; };        // bad argument value
struct ContractError : Error { using Error::Error; };     // violated op precondition
struct ConfigError : Error { using Error::Error; };       // bad RunConfig / model config
struct DivergenceError : Error { using Error::Error; };   // non-finite gradient or loss
struct IoError : Error { using Error::Error; };           // file read/write failure
struct DataError : Error { using Error::Error; };         // corrupt corpus record

// Deterministic splitmix64 generator. Self-contained so generated corpora
// and parameter inits are byte-identical across platforms and stdlibs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform double in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // [0, n)
  int64_t uniform_int(int64_t n);

  double normal(double mean, double sd);

  // Independent child stream; advancing the child never touches the parent.
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0x632BE59BD9B4E019ull * (stream + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

}  // namespace stf
