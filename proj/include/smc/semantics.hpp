#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "smc/core.hpp"

namespace smc {

// Binary task-relevance map, one byte per pixel (0/1).
struct SemanticMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;

  SemanticMask() = default;
  SemanticMask(int w, int h, uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<size_t>(w) * h, fill) {}

  uint8_t  at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x]; }
  uint8_t& at(int x, int y)       { return bits[static_cast<size_t>(y) * width + x]; }
  size_t   foreground_count() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
  }
  bool operator==(const SemanticMask& o) const = default;
};

struct CtuLabels {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<uint8_t> fg;      // 1 = foreground CTU
  std::vector<double> ratio;    // mask-pixel fraction per CTU

  bool   is_fg(int cx, int cy) const { return fg[static_cast<size_t>(cy) * grid_w + cx] != 0; }
  double ratio_at(int cx, int cy) const { return ratio[static_cast<size_t>(cy) * grid_w + cx]; }
};

inline constexpr double kDefaultFgThreshold = 0.01;

namespace detail {

inline void gaussian5_blur(const std::vector<double>& in, std::vector<double>& out, int w, int h) {
  // 5-tap kernel, sigma 1.0, normalized.
  static const std::array<double, 5> k = [] {
    std::array<double, 5> t{};
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
      t[i + 2] = std::exp(-0.5 * i * i);
      sum += t[i + 2];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  std::vector<double> tmp(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -2; i <= 2; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        s += k[i + 2] * in[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  out.resize(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -2; i <= 2; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        s += k[i + 2] * tmp[static_cast<size_t>(yy) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = s;
    }
}

// Running min/max over a 7-wide window, clamped at the borders. The square
// structuring element separates into two 1-D passes.
template <typename Cmp>
inline void window7_1d(const std::vector<double>& in, std::vector<double>& out, int w, int h,
                       bool horizontal, Cmp cmp) {
  out.resize(in.size());
  const int r = 3;
  if (horizontal) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = in[static_cast<size_t>(y) * w + std::max(0, x - r)];
        for (int i = std::max(0, x - r) + 1; i <= std::min(w - 1, x + r); ++i) {
          const double u = in[static_cast<size_t>(y) * w + i];
          if (cmp(u, v)) v = u;
        }
        out[static_cast<size_t>(y) * w + x] = v;
      }
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = in[static_cast<size_t>(std::max(0, y - r)) * w + x];
        for (int i = std::max(0, y - r) + 1; i <= std::min(h - 1, y + r); ++i) {
          const double u = in[static_cast<size_t>(i) * w + x];
          if (cmp(u, v)) v = u;
        }
        out[static_cast<size_t>(y) * w + x] = v;
      }
  }
}

inline void remove_small_components(SemanticMask& mask, int min_pixels) {
  const int w = mask.width, h = mask.height;
  std::vector<int32_t> label(static_cast<size_t>(w) * h, -1);
  std::vector<size_t> stack;
  int32_t next = 0;
  std::vector<size_t> sizes;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t idx = static_cast<size_t>(y) * w + x;
      if (!mask.bits[idx] || label[idx] >= 0) continue;
      const int32_t id = next++;
      size_t count = 0;
      stack.clear();
      stack.push_back(idx);
      label[idx] = id;
      while (!stack.empty()) {
        const size_t cur = stack.back();
        stack.pop_back();
        ++count;
        const int cx = static_cast<int>(cur % w), cy = static_cast<int>(cur / w);
        const int nx[4] = {cx - 1, cx + 1, cx, cx};
        const int ny[4] = {cy, cy, cy - 1, cy + 1};
        for (int i = 0; i < 4; ++i) {
          if (nx[i] < 0 || nx[i] >= w || ny[i] < 0 || ny[i] >= h) continue;
          const size_t n = static_cast<size_t>(ny[i]) * w + nx[i];
          if (mask.bits[n] && label[n] < 0) {
            label[n] = id;
            stack.push_back(n);
          }
        }
      }
      sizes.push_back(count);
    }
  for (size_t i = 0; i < label.size(); ++i)
    if (label[i] >= 0 && sizes[static_cast<size_t>(label[i])] < static_cast<size_t>(min_pixels))
      mask.bits[i] = 0;
}

}  // namespace detail

// Deterministic surrogate for the diagnosis network: Gaussian blur, white
// top-hat with a 7x7 square, global threshold at mean + 1.5 sigma, then
// removal of connected components under 20 px (4-connectivity).
inline SemanticMask segment(const Frame& frame) {
  const int w = frame.width, h = frame.height;
  std::vector<double> gray(frame.pixel_count());
  for (size_t i = 0; i < gray.size(); ++i) gray[i] = frame.samples[i];

  std::vector<double> blurred;
  detail::gaussian5_blur(gray, blurred, w, h);

  std::vector<double> tmp, eroded, opened;
  detail::window7_1d(blurred, tmp, w, h, true, std::less<double>());
  detail::window7_1d(tmp, eroded, w, h, false, std::less<double>());
  detail::window7_1d(eroded, tmp, w, h, true, std::greater<double>());
  detail::window7_1d(tmp, opened, w, h, false, std::greater<double>());

  std::vector<double> tophat(gray.size());
  for (size_t i = 0; i < gray.size(); ++i) tophat[i] = blurred[i] - opened[i];

  double mean = 0.0;
  for (double v : tophat) mean += v;
  mean /= static_cast<double>(tophat.size());
  double var = 0.0;
  for (double v : tophat) var += (v - mean) * (v - mean);
  var /= static_cast<double>(tophat.size());
  const double thr = mean + 1.5 * std::sqrt(var);

  SemanticMask mask(w, h);
  for (size_t i = 0; i < tophat.size(); ++i) mask.bits[i] = tophat[i] > thr ? 1 : 0;
  detail::remove_small_components(mask, 20);
  return mask;
}

// Intersection over union of the foreground; both-empty counts as 1.
inline double miou(const SemanticMask& a, const SemanticMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw Error("mask dimensions differ: " + std::to_string(a.width) + "x" +
                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                std::to_string(b.height));
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// 1 - mIOU between the segmentations of the reconstruction and the original.
inline double task_distortion(const Frame& recon, const Frame& original) {
  if (!recon.same_size(original)) throw Error("frame dimensions differ");
  return 1.0 - miou(segment(recon), segment(original));
}

inline CtuLabels ctu_labels(const SemanticMask& mask, int ctu_size = kCtuSize,
                            double fg_threshold = kDefaultFgThreshold) {
  if (fg_threshold < 0.0 || fg_threshold > 1.0)
    throw Error("fg_threshold must lie in [0,1]");
  CtuLabels out;
  out.grid_w = (mask.width + ctu_size - 1) / ctu_size;
  out.grid_h = (mask.height + ctu_size - 1) / ctu_size;
  out.fg.resize(static_cast<size_t>(out.grid_w) * out.grid_h);
  out.ratio.resize(out.fg.size());
  for (int cy = 0; cy < out.grid_h; ++cy)
    for (int cx = 0; cx < out.grid_w; ++cx) {
      const int x1 = std::min(mask.width, (cx + 1) * ctu_size);
      const int y1 = std::min(mask.height, (cy + 1) * ctu_size);
      size_t count = 0;
      for (int y = cy * ctu_size; y < y1; ++y)
        for (int x = cx * ctu_size; x < x1; ++x) count += mask.at(x, y);
      const size_t area =
          static_cast<size_t>(x1 - cx * ctu_size) * static_cast<size_t>(y1 - cy * ctu_size);
      const double ratio = static_cast<double>(count) / static_cast<double>(area);
      const size_t idx = static_cast<size_t>(cy) * out.grid_w + cx;
      out.ratio[idx] = ratio;
      out.fg[idx] = ratio >= fg_threshold ? 1 : 0;
    }
  return out;
}

}  // namespace smc
