#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "smc/core.hpp"

namespace smc {

// MSB-first bit packing. The writer tracks the exact number of bits emitted;
// bytes() zero-pads the final partial byte.
class BitWriter {
public:
  void put_bit(uint32_t b) {
    if (shift_ == 0) {
      buf_.push_back(0);
      shift_ = 8;
    }
    --shift_;
    if (b & 1) buf_.back() |= static_cast<uint8_t>(1u << shift_);
    ++bits_;
  }

  void put_bits(uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) put_bit(static_cast<uint32_t>(v >> i));
  }

  // Exp-Golomb order 0, unsigned.
  void put_ue(uint64_t v) {
    const uint64_t x = v + 1;
    const int n = std::bit_width(x);
    for (int i = 0; i < n - 1; ++i) put_bit(0);
    put_bits(x, n);
  }

  // Exp-Golomb order 0, signed: 0, 1, -1, 2, -2, ...
  void put_se(int64_t v) {
    put_ue(v > 0 ? static_cast<uint64_t>(2 * v - 1) : static_cast<uint64_t>(-2 * v));
  }

  uint64_t bit_count() const { return bits_; }
  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take_bytes() { return std::move(buf_); }

private:
  std::vector<uint8_t> buf_;
  uint64_t bits_ = 0;
  int shift_ = 0;  // unused bit slots in the last byte
};

class BitReader {
public:
  explicit BitReader(std::span<const uint8_t> data) : data_(data) {}

  uint32_t get_bit() {
    if (pos_ >= data_.size() * 8)
      throw DecodeError("bitstream exhausted at byte offset " + std::to_string(pos_ / 8));
    const uint32_t b = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return b;
  }

  uint64_t get_bits(int n) {
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | get_bit();
    return v;
  }

  uint64_t get_ue() {
    int zeros = 0;
    while (get_bit() == 0) {
      if (++zeros > 63)
        throw DecodeError("malformed exp-Golomb code at byte offset " + std::to_string(pos_ / 8));
    }
    uint64_t x = 1;
    for (int i = 0; i < zeros; ++i) x = (x << 1) | get_bit();
    return x - 1;
  }

  int64_t get_se() {
    const uint64_t k = get_ue();
    return (k & 1) ? static_cast<int64_t>((k + 1) / 2) : -static_cast<int64_t>(k / 2);
  }

  uint64_t bits_consumed() const { return pos_; }
  uint64_t bits_left() const { return data_.size() * 8 - pos_; }

private:
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace smc
