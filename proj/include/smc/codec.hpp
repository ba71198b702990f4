#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "smc/bitio.hpp"
#include "smc/core.hpp"
#include "smc/dct.hpp"

namespace smc {

// HEVC-style quantizer law: doubles every 6 QP, unity at QP 4.
inline double qstep(int qp) {
  if (qp < kQpMin || qp > kQpMax)
    throw CodecError("qp out of range [0,51]: " + std::to_string(qp));
  return std::pow(2.0, (qp - 4) / 6.0);
}

// IntraNoPred is a test mode: every block predicts from a flat 128 so CTUs
// are fully independent within the frame.
enum class FrameType : uint8_t { Intra = 0, Inter = 1, IntraNoPred = 2 };

inline constexpr double kDeadZoneIntra = 1.0 / 3.0;
inline constexpr double kDeadZoneInter = 1.0 / 6.0;

// Single-frame container.
//
// Layout (little endian):
//   magic "SMC1"
//   u16 width, u16 height, u8 frame_type, u8 base_qp, u16 grid_w, u16 grid_h
//   i8 qp_offset per CTU (row major), effective CTU QP = base_qp + offset
//   bit-packed payload, zero-padded to a byte boundary
struct Bitstream {
  uint16_t width = 0;
  uint16_t height = 0;
  FrameType frame_type = FrameType::Intra;
  uint8_t base_qp = 0;
  uint16_t grid_w = 0;
  uint16_t grid_h = 0;
  std::vector<int8_t> qp_offset;
  std::vector<uint8_t> payload;
  uint64_t payload_bits = 0;  // exact count; payload is padded to bytes

  int ctu_qp(size_t idx) const { return base_qp + qp_offset[idx]; }
  size_t header_bytes() const { return 14 + qp_offset.size(); }

  std::vector<uint8_t> serialize() const {
    std::vector<uint8_t> out;
    out.reserve(header_bytes() + payload.size());
    out.insert(out.end(), {'S', 'M', 'C', '1'});
    auto u16 = [&out](uint16_t v) {
      out.push_back(static_cast<uint8_t>(v & 0xff));
      out.push_back(static_cast<uint8_t>(v >> 8));
    };
    u16(width);
    u16(height);
    out.push_back(static_cast<uint8_t>(frame_type));
    out.push_back(base_qp);
    u16(grid_w);
    u16(grid_h);
    for (int8_t o : qp_offset) out.push_back(static_cast<uint8_t>(o));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
  }

  static Bitstream deserialize(std::span<const uint8_t> data) {
    if (data.size() < 14)
      throw DecodeError("bitstream shorter than fixed header (" + std::to_string(data.size()) +
                        " bytes)");
    if (!(data[0] == 'S' && data[1] == 'M' && data[2] == 'C' && data[3] == '1'))
      throw DecodeError("bad magic bytes at offset 0");
    auto u16 = [&data](size_t off) {
      return static_cast<uint16_t>(data[off] | (data[off + 1] << 8));
    };
    Bitstream bs;
    bs.width = u16(4);
    bs.height = u16(6);
    const uint8_t ft = data[8];
    if (ft > 2) throw DecodeError("unknown frame type " + std::to_string(ft) + " at offset 8");
    bs.frame_type = static_cast<FrameType>(ft);
    bs.base_qp = data[9];
    bs.grid_w = u16(10);
    bs.grid_h = u16(12);
    if (!ctu_aligned(bs.width, bs.height))
      throw DecodeError("header dimensions are not CTU aligned");
    if (bs.grid_w != bs.width / kCtuSize || bs.grid_h != bs.height / kCtuSize)
      throw DecodeError("header CTU grid does not match frame dimensions");
    const size_t n_ctus = static_cast<size_t>(bs.grid_w) * bs.grid_h;
    if (data.size() < 14 + n_ctus)
      throw DecodeError("bitstream truncated inside QP offset table at byte offset " +
                        std::to_string(data.size()));
    bs.qp_offset.resize(n_ctus);
    for (size_t i = 0; i < n_ctus; ++i) {
      bs.qp_offset[i] = static_cast<int8_t>(data[14 + i]);
      const int qp = bs.ctu_qp(i);
      if (qp < kQpMin || qp > kQpMax)
        throw DecodeError("CTU QP " + std::to_string(qp) + " out of range in header");
    }
    bs.payload.assign(data.begin() + 14 + n_ctus, data.end());
    bs.payload_bits = bs.payload.size() * 8;
    return bs;
  }
};

struct EncodeStats {
  uint64_t total_bits = 0;
  std::vector<uint64_t> per_ctu_bits;
  double bpp = 0.0;
};

namespace detail {

inline int dc_predictor(const Frame& recon, int x0, int y0) {
  int sum = 0, count = 0;
  if (y0 > 0) {
    for (int x = x0; x < x0 + kBlockSize; ++x) sum += recon.at(x, y0 - 1);
    count += kBlockSize;
  }
  if (x0 > 0) {
    for (int y = y0; y < y0 + kBlockSize; ++y) sum += recon.at(x0 - 1, y);
    count += kBlockSize;
  }
  if (count == 0) return 128;
  return (sum + count / 2) / count;
}

inline void block_predictor(FrameType type, const Frame* ref, const Frame& recon, int x0, int y0,
                            double pred[64]) {
  switch (type) {
    case FrameType::Intra: {
      const double dc = dc_predictor(recon, x0, y0);
      for (int i = 0; i < 64; ++i) pred[i] = dc;
      break;
    }
    case FrameType::IntraNoPred:
      for (int i = 0; i < 64; ++i) pred[i] = 128.0;
      break;
    case FrameType::Inter:
      for (int y = 0; y < kBlockSize; ++y)
        for (int x = 0; x < kBlockSize; ++x)
          pred[y * kBlockSize + x] = ref->at(x0 + x, y0 + y);
      break;
  }
}

// Dequantize + inverse transform + clamp. Shared by encoder and decoder so
// reconstructions are bit-identical by construction.
inline void reconstruct_block(const int32_t levels_zz[64], double qs, const double pred[64],
                              Frame& recon, int x0, int y0) {
  const auto& zz = zigzag_order();
  double coeff[64] = {0.0};
  for (int i = 0; i < 64; ++i) coeff[zz[i]] = levels_zz[i] * qs;
  double res[64];
  idct8x8(coeff, res);
  for (int y = 0; y < kBlockSize; ++y)
    for (int x = 0; x < kBlockSize; ++x) {
      const long v = std::lround(pred[y * kBlockSize + x] + res[y * kBlockSize + x]);
      recon.at(x0 + x, y0 + y) = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
}

inline void encode_block(const Frame& src, Frame& recon, FrameType type, const Frame* ref, int x0,
                         int y0, double qs, BitWriter& bw) {
  double pred[64];
  block_predictor(type, ref, recon, x0, y0, pred);

  double res[64];
  for (int y = 0; y < kBlockSize; ++y)
    for (int x = 0; x < kBlockSize; ++x)
      res[y * kBlockSize + x] = src.at(x0 + x, y0 + y) - pred[y * kBlockSize + x];

  double coeff[64];
  fdct8x8(res, coeff);

  const double dz = (type == FrameType::Inter) ? kDeadZoneInter : kDeadZoneIntra;
  const auto& zz = zigzag_order();
  int32_t levels[64];
  int last_nz = -1;
  for (int i = 0; i < 64; ++i) {
    const double c = coeff[zz[i]];
    const int32_t m = static_cast<int32_t>(std::floor(std::abs(c) / qs + 0.5 * dz));
    levels[i] = c < 0 ? -m : m;
    if (levels[i] != 0) last_nz = i;
  }

  bw.put_ue(static_cast<uint64_t>(last_nz + 1));
  for (int i = 0; i <= last_nz; ++i) bw.put_se(levels[i]);

  reconstruct_block(levels, qs, pred, recon, x0, y0);
}

inline void decode_block(BitReader& br, Frame& recon, FrameType type, const Frame* ref, int x0,
                         int y0, double qs) {
  double pred[64];
  block_predictor(type, ref, recon, x0, y0, pred);

  const uint64_t n = br.get_ue();
  if (n > 64) throw DecodeError("invalid last-nonzero index " + std::to_string(n));
  int32_t levels[64] = {0};
  for (uint64_t i = 0; i < n; ++i) {
    const int64_t v = br.get_se();
    if (v < -(1 << 20) || v > (1 << 20))
      throw DecodeError("coefficient level " + std::to_string(v) + " out of range");
    levels[i] = static_cast<int32_t>(v);
  }
  reconstruct_block(levels, qs, pred, recon, x0, y0);
}

inline void check_reference(FrameType type, const Frame* ref, int w, int h) {
  if (type == FrameType::Inter) {
    if (ref == nullptr) throw CodecError("inter frame requires a reference");
    if (ref->width != w || ref->height != h)
      throw CodecError("reference dimensions do not match frame");
  } else if (ref != nullptr) {
    throw CodecError("intra frame must not carry a reference");
  }
}

}  // namespace detail

struct EncodeResult {
  Bitstream bitstream;
  Frame recon;
  EncodeStats stats;
};

inline EncodeResult encode_frame(const Frame& frame, const Frame* reference, const QpMap& qp_map,
                                 FrameType type) {
  validate_frame(frame);
  validate_qp_map(qp_map, frame.width, frame.height);
  detail::check_reference(type, reference, frame.width, frame.height);

  EncodeResult r;
  r.recon = Frame(frame.width, frame.height);
  Bitstream& bs = r.bitstream;
  bs.width = static_cast<uint16_t>(frame.width);
  bs.height = static_cast<uint16_t>(frame.height);
  bs.frame_type = type;
  bs.base_qp = static_cast<uint8_t>(qp_map.qp[0]);
  bs.grid_w = static_cast<uint16_t>(qp_map.grid_w);
  bs.grid_h = static_cast<uint16_t>(qp_map.grid_h);
  bs.qp_offset.resize(qp_map.size());
  for (size_t i = 0; i < qp_map.size(); ++i)
    bs.qp_offset[i] = static_cast<int8_t>(qp_map.qp[i] - bs.base_qp);

  BitWriter bw;
  r.stats.per_ctu_bits.reserve(qp_map.size());
  for (int cy = 0; cy < qp_map.grid_h; ++cy)
    for (int cx = 0; cx < qp_map.grid_w; ++cx) {
      const uint64_t before = bw.bit_count();
      const double qs = qstep(qp_map.at(cx, cy));
      for (int by = 0; by < kCtuSize; by += kBlockSize)
        for (int bx = 0; bx < kCtuSize; bx += kBlockSize)
          detail::encode_block(frame, r.recon, type, reference, cx * kCtuSize + bx,
                               cy * kCtuSize + by, qs, bw);
      r.stats.per_ctu_bits.push_back(bw.bit_count() - before);
    }

  bs.payload_bits = bw.bit_count();
  bs.payload = bw.take_bytes();
  r.stats.total_bits = bs.header_bytes() * 8 + bs.payload_bits;
  r.stats.bpp = static_cast<double>(r.stats.total_bits) / frame.pixel_count();
  return r;
}

inline Frame decode_frame(const Bitstream& bs, const Frame* reference) {
  if (!ctu_aligned(bs.width, bs.height))
    throw DecodeError("header dimensions are not CTU aligned");
  if (bs.grid_w != bs.width / kCtuSize || bs.grid_h != bs.height / kCtuSize)
    throw DecodeError("header CTU grid does not match frame dimensions");
  if (bs.qp_offset.size() != static_cast<size_t>(bs.grid_w) * bs.grid_h)
    throw DecodeError("QP offset table size does not match CTU grid");
  detail::check_reference(bs.frame_type, reference, bs.width, bs.height);

  Frame recon(bs.width, bs.height);
  BitReader br(bs.payload);
  for (int cy = 0; cy < bs.grid_h; ++cy)
    for (int cx = 0; cx < bs.grid_w; ++cx) {
      const int qp = bs.ctu_qp(static_cast<size_t>(cy) * bs.grid_w + cx);
      if (qp < kQpMin || qp > kQpMax)
        throw DecodeError("CTU QP " + std::to_string(qp) + " out of range");
      const double qs = qstep(qp);
      for (int by = 0; by < kCtuSize; by += kBlockSize)
        for (int bx = 0; bx < kCtuSize; bx += kBlockSize)
          detail::decode_block(br, recon, bs.frame_type, reference, cx * kCtuSize + bx,
                               cy * kCtuSize + by, qs);
    }
  if (br.bits_left() >= 8)
    throw DecodeError("trailing bytes after payload at byte offset " +
                      std::to_string(br.bits_consumed() / 8));
  return recon;
}

// P-frame QP offset relative to QP_I, binned by QP_I.
inline int delta_for(int qp_i) {
  if (qp_i < 14 || qp_i > 37)
    throw CodecError("QP_I out of range [14,37]: " + std::to_string(qp_i));
  if (qp_i <= 21) return 6;
  if (qp_i <= 29) return 7;
  return 8;
}

// Low-delay GOP-8 QP structure: QP_I, then a repeating loop of
// {+d, +d-1, +d, +d-1, +d, +d-1, +d, QP_I+2} where the final entry is
// absolute and d = delta_for(QP_I).
inline std::vector<int> frame_qp_schedule(int qp_i, int n_frames) {
  if (n_frames < 1) throw CodecError("n_frames must be >= 1");
  const int d = delta_for(qp_i);
  std::vector<int> qps(static_cast<size_t>(n_frames));
  qps[0] = qp_i;
  for (int i = 1; i < n_frames; ++i) {
    const int k = (i - 1) % 8;
    if (k == 7) qps[i] = qp_i + 2;
    else qps[i] = qp_i + d - (k % 2);
  }
  return qps;
}

struct SequenceEncodeResult {
  std::vector<Bitstream> bitstreams;
  std::vector<Frame> recons;
  EncodeStats aggregate;
};

// Low-delay P: frame 0 intra, every later frame predicts from the previous
// reconstruction. Effective CTU QP = clamp(frame_qp + offset, 0, 51).
// ctu_offsets may be empty (all zero) or carry one offset list per frame.
inline SequenceEncodeResult encode_sequence(const Sequence& seq, const std::vector<int>& frame_qps,
                                            const std::vector<std::vector<int>>& ctu_offsets = {}) {
  validate_sequence(seq);
  if (frame_qps.size() != seq.frames.size())
    throw CodecError("frame QP list length does not match frame count");
  if (!ctu_offsets.empty() && ctu_offsets.size() != seq.frames.size())
    throw CodecError("CTU offset list length does not match frame count");

  const int gw = seq.width() / kCtuSize, gh = seq.height() / kCtuSize;
  const size_t n_ctus = static_cast<size_t>(gw) * gh;

  SequenceEncodeResult r;
  for (size_t f = 0; f < seq.frames.size(); ++f) {
    if (frame_qps[f] < kQpMin || frame_qps[f] > kQpMax)
      throw CodecError("frame QP " + std::to_string(frame_qps[f]) + " out of range [0,51]");
    QpMap map = QpMap::uniform(gw, gh, frame_qps[f]);
    if (!ctu_offsets.empty()) {
      if (ctu_offsets[f].size() != n_ctus)
        throw CodecError("CTU offset count does not match grid for frame " + std::to_string(f));
      for (size_t i = 0; i < n_ctus; ++i) map.qp[i] = clamp_qp(frame_qps[f] + ctu_offsets[f][i]);
    }
    const FrameType type = (f == 0) ? FrameType::Intra : FrameType::Inter;
    const Frame* ref = (f == 0) ? nullptr : &r.recons[f - 1];
    EncodeResult er = encode_frame(seq.frames[f], ref, map, type);
    r.aggregate.total_bits += er.stats.total_bits;
    r.aggregate.per_ctu_bits.insert(r.aggregate.per_ctu_bits.end(), er.stats.per_ctu_bits.begin(),
                                    er.stats.per_ctu_bits.end());
    r.bitstreams.push_back(std::move(er.bitstream));
    r.recons.push_back(std::move(er.recon));
  }
  r.aggregate.bpp = static_cast<double>(r.aggregate.total_bits) /
                    (seq.frames.front().pixel_count() * seq.frames.size());
  return r;
}

}  // namespace smc
