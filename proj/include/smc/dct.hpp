#pragma once

#include <array>
#include <cmath>

#include "smc/core.hpp"

namespace smc {

namespace detail {

// Orthonormal DCT-II basis for N=8: c[u][x] = a(u) cos((2x+1)u pi / 16).
struct DctBasis {
  double c[kBlockSize][kBlockSize];
  DctBasis() {
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < kBlockSize; ++u) {
      const double a = (u == 0) ? std::sqrt(1.0 / kBlockSize) : std::sqrt(2.0 / kBlockSize);
      for (int x = 0; x < kBlockSize; ++x)
        c[u][x] = a * std::cos((2 * x + 1) * u * pi / (2.0 * kBlockSize));
    }
  }
};

inline const DctBasis& dct_basis() {
  static const DctBasis basis;
  return basis;
}

}  // namespace detail

// 8x8 forward DCT-II, separable, fixed operation order.
inline void fdct8x8(const double in[64], double out[64]) {
  const auto& B = detail::dct_basis();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += in[y * 8 + x] * B.c[u][x];
      tmp[y * 8 + u] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += tmp[y * 8 + u] * B.c[v][y];
      out[v * 8 + u] = s;
    }
}

inline void idct8x8(const double in[64], double out[64]) {
  const auto& B = detail::dct_basis();
  double tmp[64];
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += in[v * 8 + u] * B.c[u][x];
      tmp[v * 8 + x] = s;
    }
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += tmp[v * 8 + x] * B.c[v][y];
      out[y * 8 + x] = s;
    }
}

// Classic diagonal zigzag over an 8x8 block.
inline const std::array<int, 64>& zigzag_order() {
  static const std::array<int, 64> order = [] {
    std::array<int, 64> o{};
    int x = 0, y = 0;
    for (int i = 0; i < 64; ++i) {
      o[i] = y * 8 + x;
      if ((x + y) % 2 == 0) {  // moving up-right
        if (x == 7) ++y;
        else if (y == 0) ++x;
        else { ++x; --y; }
      } else {  // moving down-left
        if (y == 7) ++x;
        else if (x == 0) ++y;
        else { --x; ++y; }
      }
    }
    return o;
  }();
  return order;
}

}  // namespace smc
