#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "smc/core.hpp"
#include "smc/semantics.hpp"

namespace smc {

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path);
  return data;
}

inline void write_file(const std::string& path, const void* data, size_t len) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw IoError("write failed for " + path);
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& data) {
  write_file(path, data.data(), data.size());
}

inline void write_text_file(const std::string& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

// Shortest-ish deterministic decimal rendering used by every CSV we emit.
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// 1 bit per pixel, LSB first; mask dimensions here are multiples of 8.
inline std::vector<uint8_t> pack_mask(const SemanticMask& mask) {
  std::vector<uint8_t> out((mask.bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < mask.bits.size(); ++i)
    if (mask.bits[i]) out[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  return out;
}

inline SemanticMask unpack_mask(const std::vector<uint8_t>& packed, size_t offset_bytes, int w,
                                int h) {
  SemanticMask mask(w, h);
  const size_t need = (mask.bits.size() + 7) / 8;
  if (offset_bytes + need > packed.size())
    throw IoError("packed mask buffer too small: need " + std::to_string(offset_bytes + need) +
                  " bytes, have " + std::to_string(packed.size()));
  for (size_t i = 0; i < mask.bits.size(); ++i)
    mask.bits[i] = (packed[offset_bytes + i / 8] >> (i % 8)) & 1u;
  return mask;
}

inline void write_pgm(const std::string& path, const Frame& frame) {
  std::string header = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) +
                       "\n255\n";
  std::vector<uint8_t> data(header.begin(), header.end());
  data.insert(data.end(), frame.samples.begin(), frame.samples.end());
  write_file(path, data);
}

inline void write_mask_pgm(const std::string& path, const SemanticMask& mask) {
  Frame f(mask.width, mask.height);
  for (size_t i = 0; i < mask.bits.size(); ++i) f.samples[i] = mask.bits[i] ? 255 : 0;
  write_pgm(path, f);
}

}  // namespace smc
