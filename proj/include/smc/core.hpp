#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace smc {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kCtuSize   = 64;
inline constexpr int kBlockSize = 8;
inline constexpr int kQpMin     = 0;
inline constexpr int kQpMax     = 51;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class CodecError   : public Error { public: using Error::Error; };
class DecodeError  : public Error { public: using Error::Error; };
class IoError      : public Error { public: using Error::Error; };
class ConfigError  : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class UsageError   : public Error { public: using Error::Error; };

// 8-bit grayscale raster, row major. Coded dimensions are positive multiples
// of the CTU size.
struct Frame {
  int width  = 0;
  int height = 0;
  std::vector<uint8_t> samples;

  Frame() = default;
  Frame(int w, int h, uint8_t fill = 0)
      : width(w), height(h), samples(static_cast<size_t>(w) * h, fill) {}

  uint8_t  at(int x, int y) const { return samples[static_cast<size_t>(y) * width + x]; }
  uint8_t& at(int x, int y)       { return samples[static_cast<size_t>(y) * width + x]; }
  size_t   pixel_count() const    { return static_cast<size_t>(width) * height; }
  bool     same_size(const Frame& o) const { return width == o.width && height == o.height; }
  bool     operator==(const Frame& o) const = default;
};

inline bool ctu_aligned(int w, int h) {
  return w > 0 && h > 0 && w % kCtuSize == 0 && h % kCtuSize == 0;
}

inline void validate_frame(const Frame& f) {
  if (!ctu_aligned(f.width, f.height))
    throw CodecError("frame dimensions must be positive multiples of " +
                     std::to_string(kCtuSize) + ", got " + std::to_string(f.width) + "x" +
                     std::to_string(f.height));
  if (f.samples.size() != f.pixel_count())
    throw CodecError("sample buffer size does not match frame dimensions");
}

struct Sequence {
  std::string id;
  std::vector<Frame> frames;

  int width() const  { return frames.empty() ? 0 : frames.front().width; }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int n_frames() const { return static_cast<int>(frames.size()); }
};

inline void validate_sequence(const Sequence& s) {
  if (s.frames.empty()) throw CodecError("sequence must contain at least one frame");
  for (const Frame& f : s.frames) {
    validate_frame(f);
    if (!f.same_size(s.frames.front()))
      throw CodecError("all frames of a sequence must share dimensions");
  }
}

// Per-CTU quantization parameters, row major over the CTU grid.
struct QpMap {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<int> qp;

  static QpMap uniform(int gw, int gh, int q) {
    QpMap m;
    m.grid_w = gw;
    m.grid_h = gh;
    m.qp.assign(static_cast<size_t>(gw) * gh, q);
    return m;
  }
  int  at(int cx, int cy) const { return qp[static_cast<size_t>(cy) * grid_w + cx]; }
  int& at(int cx, int cy)       { return qp[static_cast<size_t>(cy) * grid_w + cx]; }
  size_t size() const { return qp.size(); }
};

inline int clamp_qp(int qp) {
  return qp < kQpMin ? kQpMin : (qp > kQpMax ? kQpMax : qp);
}

inline void validate_qp_map(const QpMap& m, int frame_w, int frame_h) {
  const int gw = frame_w / kCtuSize, gh = frame_h / kCtuSize;
  if (m.grid_w != gw || m.grid_h != gh)
    throw CodecError("QP map grid " + std::to_string(m.grid_w) + "x" + std::to_string(m.grid_h) +
                     " does not match frame CTU grid " + std::to_string(gw) + "x" +
                     std::to_string(gh));
  if (m.qp.size() != static_cast<size_t>(gw) * gh)
    throw CodecError("QP map entry count does not match its grid");
  for (int q : m.qp)
    if (q < kQpMin || q > kQpMax)
      throw CodecError("QP " + std::to_string(q) + " out of range [0,51]");
}

// Deterministic RNG wrapper. mt19937_64 is bit-exact across platforms and the
// derived draws below avoid implementation-defined distributions.
struct Rng {
  std::mt19937_64 gen;

  explicit Rng(uint64_t seed) : gen(seed) {}

  uint64_t next() { return gen(); }

  // Uniform in [0,1) with 53 bits of mantissa.
  double u01() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our n.
  int uniform_int(int n) { return static_cast<int>(gen() % static_cast<uint64_t>(n)); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }
};

// SplitMix64; used to derive independent seeds and for coordinate hashing.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

inline uint64_t fnv1a64(const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace smc
