#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "smc/codec.hpp"
#include "smc/core.hpp"
#include "smc/io.hpp"
#include "smc/semantics.hpp"
#include "smc/training.hpp"

namespace smc {

struct RdPoint {
  double rate = 0.0;     // bpp
  double quality = 0.0;  // mIOU
  std::string label;
};

struct RdCurve {
  std::vector<RdPoint> points;  // sorted, strictly increasing rate
};

// Sorts by rate and merges exact rate ties (mean quality) so the strict
// ordering invariant survives degenerate sweeps.
inline RdCurve make_rd_curve(std::vector<RdPoint> points) {
  for (const RdPoint& p : points) {
    if (!(p.rate > 0.0) || !std::isfinite(p.rate)) throw Error("RD point rate must be positive");
    if (!std::isfinite(p.quality)) throw Error("RD point quality must be finite");
  }
  std::sort(points.begin(), points.end(),
            [](const RdPoint& a, const RdPoint& b) { return a.rate < b.rate; });
  RdCurve c;
  for (RdPoint& p : points) {
    if (!c.points.empty() && c.points.back().rate == p.rate) {
      RdPoint& last = c.points.back();
      last.quality = 0.5 * (last.quality + p.quality);
      last.label += "+" + p.label;
    } else {
      c.points.push_back(std::move(p));
    }
  }
  return c;
}

struct BdResult {
  double bd_rate = 0.0;     // percent; negative = rate savings
  double bd_quality = 0.0;  // mIOU delta
};

namespace detail {

// Least-squares cubic fit (exact interpolation at 4 points) via the normal
// equations, abscissa centered for conditioning.
struct Poly3 {
  double x0 = 0.0;
  double c[4] = {0, 0, 0, 0};

  double integral(double lo, double hi) const {
    auto F = [this](double x) {
      const double u = x - x0;
      return c[0] * u + c[1] * u * u / 2.0 + c[2] * u * u * u / 3.0 + c[3] * u * u * u * u / 4.0;
    };
    return F(hi) - F(lo);
  }
};

inline Poly3 polyfit3(const std::vector<double>& xs, const std::vector<double>& ys) {
  const size_t n = xs.size();
  Poly3 p;
  for (double x : xs) p.x0 += x;
  p.x0 /= static_cast<double>(n);

  double sx[7] = {0};
  double sy[4] = {0};
  for (size_t i = 0; i < n; ++i) {
    const double u = xs[i] - p.x0;
    double uk = 1.0;
    for (int k = 0; k < 7; ++k) {
      sx[k] += uk;
      if (k < 4) sy[k] += uk * ys[i];
      uk *= u;
    }
  }
  double m[4][5];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m[r][c] = sx[r + c];
    m[r][4] = sy[r];
  }
  // Gaussian elimination, partial pivoting.
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    if (std::abs(m[piv][col]) < 1e-30) throw Error("degenerate RD curve, cannot fit");
    if (piv != col)
      for (int c = 0; c < 5; ++c) std::swap(m[piv][c], m[col][c]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 5; ++c) m[r][c] -= f * m[col][c];
    }
  }
  for (int r = 0; r < 4; ++r) p.c[r] = m[r][4] / m[r][r];
  return p;
}

inline void check_bd_inputs(const RdCurve& a, const RdCurve& b) {
  if (a.points.size() < 4 || b.points.size() < 4)
    throw Error("bd_metric needs at least 4 points per curve, got " +
                std::to_string(a.points.size()) + " and " + std::to_string(b.points.size()));
}

}  // namespace detail

// Classic Bjontegaard deltas: cubic fit of log10(rate) against quality
// (and the transpose), averaged over the overlapping interval.
inline BdResult bd_metric(const RdCurve& anchor, const RdCurve& test) {
  detail::check_bd_inputs(anchor, test);

  std::vector<double> qa, ra, qt, rt;
  for (const RdPoint& p : anchor.points) {
    qa.push_back(p.quality);
    ra.push_back(std::log10(p.rate));
  }
  for (const RdPoint& p : test.points) {
    qt.push_back(p.quality);
    rt.push_back(std::log10(p.rate));
  }

  BdResult out;
  {
    const double lo = std::max(*std::min_element(qa.begin(), qa.end()),
                               *std::min_element(qt.begin(), qt.end()));
    const double hi = std::min(*std::max_element(qa.begin(), qa.end()),
                               *std::max_element(qt.begin(), qt.end()));
    if (!(hi > lo)) throw Error("RD curves have no quality overlap");
    const auto fa = detail::polyfit3(qa, ra);
    const auto ft = detail::polyfit3(qt, rt);
    const double avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    out.bd_rate = (std::pow(10.0, avg) - 1.0) * 100.0;
  }
  {
    const double lo = std::max(*std::min_element(ra.begin(), ra.end()),
                               *std::min_element(rt.begin(), rt.end()));
    const double hi = std::min(*std::max_element(ra.begin(), ra.end()),
                               *std::max_element(rt.begin(), rt.end()));
    if (!(hi > lo)) throw Error("RD curves have no rate overlap");
    const auto fa = detail::polyfit3(ra, qa);
    const auto ft = detail::polyfit3(rt, qt);
    out.bd_quality = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace detail {

inline void check_distinct(const std::vector<double>& v, const char* what) {
  for (size_t i = 0; i < v.size(); ++i)
    for (size_t j = i + 1; j < v.size(); ++j)
      if (v[i] == v[j]) throw Error(std::string("duplicate ") + what + " " + fmt_double(v[i]));
}

inline void check_qps(const std::vector<int>& qps) {
  if (qps.empty()) throw Error("QP list must be nonempty");
  for (size_t i = 0; i < qps.size(); ++i) {
    if (qps[i] < kQpMin || qps[i] > kQpMax)
      throw Error("QP " + std::to_string(qps[i]) + " out of range [0,51]");
    for (size_t j = i + 1; j < qps.size(); ++j)
      if (qps[i] == qps[j]) throw Error("duplicate QP " + std::to_string(qps[i]));
  }
}

struct SeqEval {
  double bpp = 0.0;
  double miou_mean = 0.0;
};

inline SeqEval eval_encode(const PreparedSequence& p, const std::vector<int>& frame_qps,
                           const std::vector<std::vector<int>>& offsets) {
  const auto enc = encode_sequence(p.seq, frame_qps, offsets);
  SeqEval e;
  e.bpp = enc.aggregate.bpp;
  for (size_t f = 0; f < enc.recons.size(); ++f)
    e.miou_mean += miou(segment(enc.recons[f]), p.masks[f]);
  e.miou_mean /= static_cast<double>(enc.recons.size());
  return e;
}

}  // namespace detail

// Constant-QP anchor: flat QP over all frames and CTUs (low-delay P
// structure retained).
inline RdCurve anchor_sweep(const std::vector<const PreparedSequence*>& seqs,
                            const std::vector<int>& qps) {
  if (seqs.empty()) throw Error("anchor sweep needs sequences");
  detail::check_qps(qps);
  std::vector<RdPoint> points;
  for (int q : qps) {
    double rate = 0.0, quality = 0.0;
    for (const PreparedSequence* p : seqs) {
      const auto e = detail::eval_encode(*p, std::vector<int>(static_cast<size_t>(p->seq.n_frames()), q), {});
      rate += e.bpp;
      quality += e.miou_mean;
    }
    points.push_back({rate / static_cast<double>(seqs.size()),
                      quality / static_cast<double>(seqs.size()), "qp" + std::to_string(q)});
  }
  return make_rd_curve(std::move(points));
}

// Greedy policy episodes, one RD point per lambda.
inline RdCurve policy_sweep(const Checkpoint& ck, const std::vector<const PreparedSequence*>& seqs,
                            const std::vector<double>& lambdas) {
  if (seqs.empty()) throw Error("policy sweep needs sequences");
  if (lambdas.empty()) throw Error("lambda list must be nonempty");
  detail::check_distinct(lambdas, "lambda");
  Rng rng(0);
  std::vector<RdPoint> points;
  for (double lam : lambdas) {
    double rate = 0.0, quality = 0.0;
    for (const PreparedSequence* p : seqs) {
      const Episode ep =
          run_episode(*p, ck.frame_net, ck.ctu_net, {lam, ck.bpp_norm}, RolloutMode::Greedy, rng);
      rate += ep.stats.bpp;
      double q = 0.0;
      for (double d : ep.distortions) q += 1.0 - d;
      quality += q / static_cast<double>(ep.distortions.size());
    }
    points.push_back({rate / static_cast<double>(seqs.size()),
                      quality / static_cast<double>(seqs.size()), "lambda" + fmt_double(lam)});
  }
  return make_rd_curve(std::move(points));
}

// ---------------------------------------------------------------------------
// Hand-crafted QP maps: offset = round(span * f(1 - mask ratio)), f fixed to
// hit f(0)=0 and f(1)=1 for every kind.

enum class MapKind { Linear, Exp, Square, Log, Sqrt };

inline const char* kind_name(MapKind k) {
  switch (k) {
    case MapKind::Linear: return "linear";
    case MapKind::Exp: return "exp";
    case MapKind::Square: return "square";
    case MapKind::Log: return "log";
    case MapKind::Sqrt: return "sqrt";
  }
  return "?";
}

inline MapKind parse_kind(const std::string& s) {
  for (MapKind k : {MapKind::Linear, MapKind::Exp, MapKind::Square, MapKind::Log, MapKind::Sqrt})
    if (s == kind_name(k)) return k;
  throw Error("unknown QP map kind '" + s + "' (linear, exp, square, log, sqrt)");
}

inline double kind_f(MapKind k, double x) {
  switch (k) {
    case MapKind::Linear: return x;
    case MapKind::Exp: return std::expm1(x) / std::expm1(1.0);
    case MapKind::Square: return x * x;
    case MapKind::Log: return std::log1p(x) / std::log1p(1.0);
    case MapKind::Sqrt: return std::sqrt(x);
  }
  throw Error("unknown QP map kind");
}

inline QpMap handcrafted_qp_map(const CtuLabels& labels, int frame_qp, MapKind kind,
                                int qp_span = 8) {
  if (qp_span < 0) throw Error("qp_span must be >= 0");
  QpMap m;
  m.grid_w = labels.grid_w;
  m.grid_h = labels.grid_h;
  m.qp.resize(labels.ratio.size());
  for (size_t i = 0; i < labels.ratio.size(); ++i) {
    const int off = static_cast<int>(std::llround(qp_span * kind_f(kind, 1.0 - labels.ratio[i])));
    m.qp[i] = clamp_qp(frame_qp + off);
  }
  return m;
}

// Per-kind RD curves over flat frame QPs with hand-crafted CTU offsets.
inline std::map<MapKind, RdCurve> baseline_sweep(const std::vector<const PreparedSequence*>& seqs,
                                                 const std::vector<MapKind>& kinds,
                                                 const std::vector<int>& frame_qps,
                                                 int qp_span = 8) {
  if (seqs.empty()) throw Error("baseline sweep needs sequences");
  if (kinds.empty()) throw Error("kind list must be nonempty");
  for (size_t i = 0; i < kinds.size(); ++i)
    for (size_t j = i + 1; j < kinds.size(); ++j)
      if (kinds[i] == kinds[j])
        throw Error(std::string("duplicate QP map kind ") + kind_name(kinds[i]));
  detail::check_qps(frame_qps);

  std::map<MapKind, RdCurve> out;
  for (MapKind kind : kinds) {
    std::vector<RdPoint> points;
    for (int q : frame_qps) {
      double rate = 0.0, quality = 0.0;
      for (const PreparedSequence* p : seqs) {
        std::vector<std::vector<int>> offsets(static_cast<size_t>(p->seq.n_frames()));
        for (int f = 0; f < p->seq.n_frames(); ++f) {
          const QpMap m = handcrafted_qp_map(p->labels[static_cast<size_t>(f)], q, kind, qp_span);
          offsets[static_cast<size_t>(f)].resize(m.qp.size());
          for (size_t i = 0; i < m.qp.size(); ++i)
            offsets[static_cast<size_t>(f)][i] = m.qp[i] - q;
        }
        const auto e = detail::eval_encode(
            *p, std::vector<int>(static_cast<size_t>(p->seq.n_frames()), q), offsets);
        rate += e.bpp;
        quality += e.miou_mean;
      }
      points.push_back({rate / static_cast<double>(seqs.size()),
                        quality / static_cast<double>(seqs.size()),
                        std::string(kind_name(kind)) + ":qp" + std::to_string(q)});
    }
    out[kind] = make_rd_curve(std::move(points));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RD curve CSV and BD JSON

inline void write_rd_csv(const std::string& path, const RdCurve& curve) {
  std::string csv = "label,rate_bpp,quality_miou\n";
  for (const RdPoint& p : curve.points)
    csv += p.label + "," + fmt_double(p.rate) + "," + fmt_double(p.quality) + "\n";
  write_text_file(path, csv);
}

inline RdCurve read_rd_csv(const std::string& path) {
  const auto bytes = read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  std::vector<RdPoint> points;
  size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "label,rate_bpp,quality_miou")
        throw IoError("unexpected RD CSV header in " + path + ": " + line);
      header = false;
      continue;
    }
    const size_t c1 = line.find(',');
    const size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw IoError("malformed RD CSV row in " + path + ": " + line);
    RdPoint p;
    p.label = line.substr(0, c1);
    try {
      p.rate = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      p.quality = std::stod(line.substr(c2 + 1));
    } catch (const std::exception&) {
      throw IoError("non-numeric RD CSV row in " + path + ": " + line);
    }
    points.push_back(std::move(p));
  }
  if (points.empty()) throw IoError("RD CSV has no data rows: " + path);
  return make_rd_curve(std::move(points));
}

inline std::string bd_json(const BdResult& r) {
  nlohmann::json j = {{"bd_rate", r.bd_rate}, {"bd_quality", r.bd_quality}};
  return j.dump(2) + "\n";
}

}  // namespace smc
