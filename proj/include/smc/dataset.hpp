#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "smc/core.hpp"
#include "smc/io.hpp"
#include "smc/semantics.hpp"

namespace smc {

enum class Domain { A, B };

inline char domain_letter(Domain d) { return d == Domain::A ? 'a' : 'b'; }

inline Domain parse_domain(const std::string& s) {
  if (s == "A" || s == "a") return Domain::A;
  if (s == "B" || s == "b") return Domain::B;
  throw ConfigError("unknown domain '" + s + "' (expected A or B)");
}

// Domain B: dark background, low-frequency texture, Gaussian noise and thin
// bright curvilinear vessels drifting frame to frame. Domain A: the same
// machinery with wide high-contrast blobs and a different texture spectrum.
struct PhantomConfig {
  uint64_t seed = 0;
  int width = 512;
  int height = 512;
  int n_frames = 33;
  Domain domain = Domain::B;
  double noise_sigma = 3.0;
  int n_vessels = 5;
  double vessel_width_min = 2.5;
  double vessel_width_max = 5.0;
  double drift_px_per_frame = 1.0;
};

struct GeneratedSequence {
  Sequence seq;
  std::vector<SemanticMask> gt;
};

namespace detail {

inline double hash_u01(uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinear value noise on an integer lattice keyed entirely off hashes.
inline double value_noise(uint64_t seed, uint64_t octave, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const int64_t i0 = static_cast<int64_t>(std::floor(gx));
  const int64_t j0 = static_cast<int64_t>(std::floor(gy));
  const double tx = smoothstep(gx - static_cast<double>(i0));
  const double ty = smoothstep(gy - static_cast<double>(j0));
  auto node = [&](int64_t i, int64_t j) {
    uint64_t h = hash_combine(seed, 0x7e00 + octave);
    h = hash_combine(h, static_cast<uint64_t>(i));
    h = hash_combine(h, static_cast<uint64_t>(j));
    return hash_u01(h);
  };
  const double v00 = node(i0, j0), v10 = node(i0 + 1, j0);
  const double v01 = node(i0, j0 + 1), v11 = node(i0 + 1, j0 + 1);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return (a + (b - a) * ty) - 0.5;  // centered
}

inline double gaussian_noise(uint64_t seed, int frame, int x, int y) {
  uint64_t h = hash_combine(seed, 0x6e00);
  h = hash_combine(h, static_cast<uint64_t>(frame));
  h = hash_combine(h, (static_cast<uint64_t>(static_cast<uint32_t>(x)) << 32) |
                          static_cast<uint32_t>(y));
  const double u1 = std::max(hash_u01(h), 1e-12);
  const double u2 = hash_u01(mix64(h));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

struct Spline {
  std::vector<double> px, py;  // control points
  double width = 3.0;
  double amp = 90.0;
  double drift_dx = 0.0, drift_dy = 0.0;
};

inline void catmull_rom(const Spline& s, int seg, double t, double& x, double& y) {
  const int n = static_cast<int>(s.px.size());
  auto cp = [&](int i) {
    i = std::clamp(i, 0, n - 1);
    return std::pair<double, double>(s.px[static_cast<size_t>(i)], s.py[static_cast<size_t>(i)]);
  };
  const auto [x0, y0] = cp(seg - 1);
  const auto [x1, y1] = cp(seg);
  const auto [x2, y2] = cp(seg + 1);
  const auto [x3, y3] = cp(seg + 2);
  const double t2 = t * t, t3 = t2 * t;
  auto interp = [&](double p0, double p1, double p2, double p3) {
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
  };
  x = interp(x0, x1, x2, x3);
  y = interp(y0, y1, y2, y3);
}

inline constexpr int kSupersample = 4;  // 4x per axis, 16 subsamples per pixel

// Stamp one structure's intensity into the supersampled amplitude buffer.
inline void stamp_disc(std::vector<float>& amp_buf, int ss_w, int ss_h, double cx, double cy,
                       double radius, float amp) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1.0)));
  const int x1 = std::min(ss_w - 1, static_cast<int>(std::ceil(cx + radius + 1.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1.0)));
  const int y1 = std::min(ss_h - 1, static_cast<int>(std::ceil(cy + radius + 1.0)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
      if (dx * dx + dy * dy <= r2) {
        float& cell = amp_buf[static_cast<size_t>(y) * ss_w + x];
        if (amp > cell) cell = amp;
      }
    }
}

inline void rasterize_vessel(std::vector<float>& amp_buf, int ss_w, int ss_h, const Spline& s,
                             int frame_idx, double drift) {
  const double ox = s.drift_dx * drift * frame_idx;
  const double oy = s.drift_dy * drift * frame_idx;
  const double r_ss = 0.5 * s.width * kSupersample;
  const int n_seg = static_cast<int>(s.px.size()) - 1;
  for (int seg = 0; seg < n_seg; ++seg) {
    // Step finely enough that stamped discs overlap.
    double ax, ay, bx, by;
    catmull_rom(s, seg, 0.0, ax, ay);
    catmull_rom(s, seg, 1.0, bx, by);
    const double approx_len = std::hypot(bx - ax, by - ay) * 1.5 + 1.0;
    const int steps = std::max(4, static_cast<int>(approx_len * kSupersample / 0.7));
    for (int i = 0; i <= steps; ++i) {
      double x, y;
      catmull_rom(s, seg, static_cast<double>(i) / steps, x, y);
      stamp_disc(amp_buf, ss_w, ss_h, (x + ox) * kSupersample, (y + oy) * kSupersample, r_ss,
                 static_cast<float>(s.amp));
    }
  }
}

struct Blob {
  double cx = 0.0, cy = 0.0;
  double rx = 12.0, ry = 12.0;
  double angle = 0.0;
  double amp = 120.0;
  double drift_dx = 0.0, drift_dy = 0.0;
};

inline void rasterize_blob(std::vector<float>& amp_buf, int ss_w, int ss_h, const Blob& b,
                           int frame_idx, double drift) {
  const double cx = (b.cx + b.drift_dx * drift * frame_idx) * kSupersample;
  const double cy = (b.cy + b.drift_dy * drift * frame_idx) * kSupersample;
  const double rx = b.rx * kSupersample, ry = b.ry * kSupersample;
  const double ca = std::cos(b.angle), sa = std::sin(b.angle);
  const double rmax = std::max(rx, ry);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rmax)));
  const int x1 = std::min(ss_w - 1, static_cast<int>(std::ceil(cx + rmax)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - rmax)));
  const int y1 = std::min(ss_h - 1, static_cast<int>(std::ceil(cy + rmax)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
      const double u = (dx * ca + dy * sa) / rx;
      const double v = (-dx * sa + dy * ca) / ry;
      if (u * u + v * v <= 1.0) {
        float& cell = amp_buf[static_cast<size_t>(y) * ss_w + x];
        if (b.amp > cell) cell = static_cast<float>(b.amp);
      }
    }
}

}  // namespace detail

inline GeneratedSequence gen_phantom(const PhantomConfig& cfg) {
  if (!ctu_aligned(cfg.width, cfg.height))
    throw Error("phantom dimensions must be positive multiples of " + std::to_string(kCtuSize));
  if (cfg.n_frames < 1) throw Error("n_frames must be >= 1");
  if (cfg.n_vessels < 0) throw Error("n_vessels must be >= 0");

  const int w = cfg.width, h = cfg.height;
  const bool domain_b = cfg.domain == Domain::B;

  // Structure parameters come from a seeded stream; pixels come from hashes.
  std::vector<detail::Spline> vessels;
  std::vector<detail::Blob> blobs;
  for (int v = 0; v < cfg.n_vessels; ++v) {
    Rng rng(hash_combine(cfg.seed, 0xb10b + static_cast<uint64_t>(v)));
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    if (domain_b) {
      detail::Spline s;
      const bool horizontal = rng.u01() < 0.5;
      const int k = 6;
      const double m = 0.15 * (horizontal ? w : h);
      double along0 = -m, along_step = ((horizontal ? w : h) + 2.0 * m) / (k - 1);
      double across = rng.uniform(0.18, 0.82) * (horizontal ? h : w);
      for (int i = 0; i < k; ++i) {
        const double along = along0 + i * along_step;
        across = std::clamp(across + rng.uniform(-0.16, 0.16) * (horizontal ? h : w),
                            0.08 * (horizontal ? h : w), 0.92 * (horizontal ? h : w));
        s.px.push_back(horizontal ? along : across);
        s.py.push_back(horizontal ? across : along);
      }
      s.width = rng.uniform(cfg.vessel_width_min, cfg.vessel_width_max);
      s.amp = rng.uniform(60.0, 120.0);
      s.drift_dx = std::cos(theta);
      s.drift_dy = std::sin(theta);
      vessels.push_back(std::move(s));
    } else {
      detail::Blob b;
      b.cx = rng.uniform(0.12, 0.88) * w;
      b.cy = rng.uniform(0.12, 0.88) * h;
      b.rx = rng.uniform(8.0, 22.0);
      b.ry = rng.uniform(8.0, 22.0);
      b.angle = rng.uniform(0.0, 3.14159265358979323846);
      b.amp = rng.uniform(100.0, 160.0);
      b.drift_dx = std::cos(theta);
      b.drift_dy = std::sin(theta);
      blobs.push_back(b);
    }
  }

  const int ss = detail::kSupersample;
  const int ss_w = w * ss, ss_h = h * ss;
  std::vector<float> amp_buf(static_cast<size_t>(ss_w) * ss_h);

  const double base = domain_b ? 30.0 : 25.0;
  const double cell0 = domain_b ? 32.0 : 16.0;
  const double cell1 = domain_b ? 16.0 : 8.0;
  const double tex_amp0 = domain_b ? 24.0 : 36.0;
  const double tex_amp1 = domain_b ? 12.0 : 16.0;

  GeneratedSequence out;
  out.seq.frames.reserve(static_cast<size_t>(cfg.n_frames));
  out.gt.reserve(static_cast<size_t>(cfg.n_frames));

  for (int f = 0; f < cfg.n_frames; ++f) {
    std::fill(amp_buf.begin(), amp_buf.end(), 0.0f);
    for (const auto& s : vessels)
      detail::rasterize_vessel(amp_buf, ss_w, ss_h, s, f, cfg.drift_px_per_frame);
    for (const auto& b : blobs)
      detail::rasterize_blob(amp_buf, ss_w, ss_h, b, f, cfg.drift_px_per_frame);

    Frame frame(w, h);
    SemanticMask mask(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double add = 0.0;
        int inside = 0;
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const float a = amp_buf[static_cast<size_t>(y * ss + sy) * ss_w + (x * ss + sx)];
            add += a;
            if (a > 0.0f) ++inside;
          }
        add /= (ss * ss);
        const double tex = detail::value_noise(cfg.seed, 0, x, y, cell0) * tex_amp0 +
                           detail::value_noise(cfg.seed, 1, x, y, cell1) * tex_amp1;
        const double noise = detail::gaussian_noise(cfg.seed, f, x, y) * cfg.noise_sigma;
        const double v = base + tex + add + noise;
        const long q = std::lround(v);
        frame.at(x, y) = static_cast<uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
        mask.at(x, y) = inside * 2 >= ss * ss ? 1 : 0;  // majority of 16 subsamples
      }
    out.seq.frames.push_back(std::move(frame));
    out.gt.push_back(std::move(mask));
  }
  out.seq.id = std::string(1, domain_letter(cfg.domain)) + "_" + std::to_string(cfg.seed);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files: <out>/<domain>/<id>.y8 (raw planar frames), <id>.mask (packed
// ground truth), <id>.json (per-sequence manifest), plus manifest.json at the
// corpus root.

struct CorpusEntry {
  std::string id;
  Domain domain = Domain::B;
  std::string json_path;
  int width = 0, height = 0, n_frames = 0;
  uint64_t seed = 0;
};

struct LoadedSequence {
  Sequence seq;
  std::vector<SemanticMask> gt;
  bool has_gt = false;
  Domain domain = Domain::B;
  uint64_t seed = 0;
};

namespace detail {

inline std::string seq_id(Domain d, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c_%04d", domain_letter(d), index);
  return buf;
}

inline void rewrite_corpus_manifest(const std::string& out_dir) {
  namespace fs = std::filesystem;
  nlohmann::json entries = nlohmann::json::array();
  std::vector<std::string> paths;
  for (const char* sub : {"a", "b"}) {
    const fs::path dir = fs::path(out_dir) / sub;
    if (!fs::exists(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    nlohmann::json j = nlohmann::json::parse(read_file(p).begin(), read_file(p).end());
    entries.push_back({{"id", j.at("id")},
                       {"domain", j.at("domain")},
                       {"path", fs::relative(p, out_dir).generic_string()},
                       {"width", j.at("width")},
                       {"height", j.at("height")},
                       {"n_frames", j.at("n_frames")},
                       {"seed", j.at("seed")}});
  }
  nlohmann::json manifest = {{"tool_version", kVersion}, {"sequences", entries}};
  write_text_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

}  // namespace detail

inline std::vector<CorpusEntry> gen_corpus(int n, Domain domain, uint64_t base_seed,
                                           const std::string& out_dir,
                                           PhantomConfig base_cfg = {}) {
  namespace fs = std::filesystem;
  if (n < 1) throw Error("corpus size must be >= 1, got " + std::to_string(n));
  std::vector<CorpusEntry> entries;
  for (int i = 0; i < n; ++i) {
    PhantomConfig cfg = base_cfg;
    cfg.domain = domain;
    cfg.seed = base_seed + static_cast<uint64_t>(i);
    const std::string id = detail::seq_id(domain, i);
    const fs::path dir = fs::path(out_dir) / std::string(1, domain_letter(domain));
    GeneratedSequence g = gen_phantom(cfg);

    std::vector<uint8_t> y8;
    y8.reserve(g.seq.frames.size() * g.seq.frames.front().pixel_count());
    for (const Frame& f : g.seq.frames) y8.insert(y8.end(), f.samples.begin(), f.samples.end());
    write_file((dir / (id + ".y8")).string(), y8);

    std::vector<uint8_t> packed;
    for (const SemanticMask& m : g.gt) {
      const auto p = pack_mask(m);
      packed.insert(packed.end(), p.begin(), p.end());
    }
    write_file((dir / (id + ".mask")).string(), packed);

    nlohmann::json j = {{"id", id},
                        {"domain", std::string(1, domain_letter(domain))},
                        {"width", cfg.width},
                        {"height", cfg.height},
                        {"n_frames", cfg.n_frames},
                        {"seed", cfg.seed},
                        {"noise_sigma", cfg.noise_sigma},
                        {"n_vessels", cfg.n_vessels},
                        {"vessel_width_min", cfg.vessel_width_min},
                        {"vessel_width_max", cfg.vessel_width_max},
                        {"drift_px_per_frame", cfg.drift_px_per_frame},
                        {"y8", id + ".y8"},
                        {"mask", id + ".mask"}};
    const std::string json_path = (dir / (id + ".json")).string();
    write_text_file(json_path, j.dump(2) + "\n");

    entries.push_back({id, domain, json_path, cfg.width, cfg.height, cfg.n_frames, cfg.seed});
  }
  detail::rewrite_corpus_manifest(out_dir);
  return entries;
}

inline LoadedSequence load_sequence(const std::string& json_path) {
  namespace fs = std::filesystem;
  const auto bytes = read_file(json_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sequence manifest " + json_path + ": " + e.what());
  }
  LoadedSequence out;
  try {
    out.seq.id = j.at("id").get<std::string>();
    out.domain = parse_domain(j.at("domain").get<std::string>());
    out.seed = j.at("seed").get<uint64_t>();
    const int w = j.at("width").get<int>();
    const int h = j.at("height").get<int>();
    const int n = j.at("n_frames").get<int>();
    if (!ctu_aligned(w, h))
      throw IoError("manifest dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                    " are not CTU aligned in " + json_path);
    if (n < 1) throw IoError("manifest frame count must be >= 1 in " + json_path);

    const fs::path dir = fs::path(json_path).parent_path();
    const auto y8 = read_file((dir / j.at("y8").get<std::string>()).string());
    const size_t frame_bytes = static_cast<size_t>(w) * h;
    if (y8.size() != frame_bytes * static_cast<size_t>(n))
      throw IoError("raw sequence size mismatch for " + json_path + ": expected " +
                    std::to_string(frame_bytes * n) + " bytes, got " + std::to_string(y8.size()));
    for (int f = 0; f < n; ++f) {
      Frame frame(w, h);
      std::copy_n(y8.begin() + static_cast<std::ptrdiff_t>(f * frame_bytes), frame_bytes,
                  frame.samples.begin());
      out.seq.frames.push_back(std::move(frame));
    }
    if (j.contains("mask")) {
      const auto packed = read_file((dir / j.at("mask").get<std::string>()).string());
      const size_t mask_bytes = frame_bytes / 8;
      if (packed.size() != mask_bytes * static_cast<size_t>(n))
        throw IoError("mask size mismatch for " + json_path + ": expected " +
                      std::to_string(mask_bytes * n) + " bytes, got " +
                      std::to_string(packed.size()));
      for (int f = 0; f < n; ++f) out.gt.push_back(unpack_mask(packed, f * mask_bytes, w, h));
      out.has_gt = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid sequence manifest " + json_path + ": " + e.what());
  }
  return out;
}

inline std::vector<CorpusEntry> read_corpus_manifest(const std::string& corpus_dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(corpus_dir) / "manifest.json").string();
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed corpus manifest " + path + ": " + e.what());
  }
  std::vector<CorpusEntry> out;
  for (const auto& e : j.at("sequences")) {
    CorpusEntry c;
    c.id = e.at("id").get<std::string>();
    c.domain = parse_domain(e.at("domain").get<std::string>());
    c.json_path = (fs::path(corpus_dir) / e.at("path").get<std::string>()).string();
    c.width = e.at("width").get<int>();
    c.height = e.at("height").get<int>();
    c.n_frames = e.at("n_frames").get<int>();
    c.seed = e.at("seed").get<uint64_t>();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace smc
