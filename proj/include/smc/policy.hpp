#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "smc/core.hpp"
#include "smc/io.hpp"
#include "smc/semantics.hpp"

namespace smc {

// ---------------------------------------------------------------------------
// Parameter groups and action spaces

enum class Group : uint8_t { FE, FC, ACTOR, CRITIC, ADAPTER_V1, ADAPTER_A, ADAPTER_C };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::FE: return "FE";
    case Group::FC: return "FC";
    case Group::ACTOR: return "ACTOR";
    case Group::CRITIC: return "CRITIC";
    case Group::ADAPTER_V1: return "ADAPTER_V1";
    case Group::ADAPTER_A: return "ADAPTER_A";
    case Group::ADAPTER_C: return "ADAPTER_C";
  }
  return "?";
}

inline Group parse_group(const std::string& s) {
  for (Group g : {Group::FE, Group::FC, Group::ACTOR, Group::CRITIC, Group::ADAPTER_V1,
                  Group::ADAPTER_A, Group::ADAPTER_C})
    if (s == group_name(g)) return g;
  throw Error("unknown parameter group '" + s + "'");
}

// FrameQp: 24 actions mapping to QP_I in [14,37].
// CtuOffset: 7 actions; foreground CTUs pick from {-2,0,+2} (indices 0..2),
// background CTUs from {+2,+4,+6,+8} (indices 3..6). Illegal logits are
// masked to -inf before the softmax.
// Plain: unconstrained n-way head for fixtures.
enum class ActionLayout : uint8_t { FrameQp, CtuOffset, Plain };

inline constexpr int kFrameQpLo = 14;
inline constexpr int kFrameQpHi = 37;
inline constexpr int kFrameActionCount = kFrameQpHi - kFrameQpLo + 1;
inline constexpr std::array<int, 3> kFgOffsets = {-2, 0, 2};
inline constexpr std::array<int, 4> kBgOffsets = {2, 4, 6, 8};
inline constexpr int kCtuActionCount = 7;

inline int frame_action_qp(int action) { return kFrameQpLo + action; }
inline int ctu_action_offset(int action) {
  return action < 3 ? kFgOffsets[static_cast<size_t>(action)]
                    : kBgOffsets[static_cast<size_t>(action - 3)];
}

// [lo, hi) of legal action indices. label: 1 = foreground, 0 = background,
// -1 = not a CTU decision.
inline std::pair<int, int> legal_action_range(ActionLayout layout, int n_actions, int label) {
  if (layout == ActionLayout::CtuOffset) {
    if (label != 0 && label != 1)
      throw Error("CTU-level forward requires a foreground/background label");
    return label ? std::pair<int, int>{0, 3} : std::pair<int, int>{3, kCtuActionCount};
  }
  return {0, n_actions};
}

// ---------------------------------------------------------------------------
// Network definition

struct PolicyConfig {
  ActionLayout layout = ActionLayout::FrameQp;
  int in_channels = 3;
  int input_size = 64;
  std::array<int, 3> conv_channels = {8, 16, 32};
  int fc_width = 128;
  int n_extras = 0;
  int n_actions = kFrameActionCount;
  int adapter_v1_width = 16;
  int adapter_head_width = 8;
  uint64_t init_seed = 1;

  // Spatial sizes through the stride-2 stack (kernel 3, pad 1).
  static int conv_out(int n) { return (n - 1) / 2 + 1; }
  int s1() const { return conv_out(input_size); }
  int s2() const { return conv_out(s1()); }
  int s3() const { return conv_out(s2()); }
  bool pooled() const { return s3() >= 2 && s3() % 2 == 0; }
  int sp() const { return pooled() ? s3() / 2 : s3(); }
  int flat_dim() const { return conv_channels[2] * sp() * sp(); }
  int trunk_in() const { return flat_dim() + n_extras; }
};

inline PolicyConfig frame_agent_config(uint64_t init_seed) {
  PolicyConfig c;
  c.layout = ActionLayout::FrameQp;
  c.in_channels = 3;  // downsampled luma, downsampled mask, lambda
  c.n_extras = 0;
  c.n_actions = kFrameActionCount;
  c.init_seed = init_seed;
  return c;
}

inline PolicyConfig ctu_agent_config(uint64_t init_seed) {
  PolicyConfig c;
  c.layout = ActionLayout::CtuOffset;
  c.in_channels = 2;  // CTU luma crop, CTU mask crop
  c.n_extras = 3;     // frame QP / 51, label, mask ratio
  c.n_actions = kCtuActionCount;
  c.init_seed = init_seed;
  return c;
}

struct Tensor {
  std::string name;
  Group group = Group::FE;
  std::vector<int> shape;
  std::vector<double> w;
  std::vector<double> g;

  size_t size() const { return w.size(); }
};

struct PolicyNet {
  PolicyConfig cfg;
  bool has_adapter_v1 = false;
  bool has_adapter_a = false;
  bool has_adapter_c = false;
  std::vector<Tensor> tensors;

  const Tensor& t(const std::string& name) const {
    for (const Tensor& x : tensors)
      if (x.name == name) return x;
    throw Error("no tensor named '" + name + "'");
  }
  Tensor& t(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).t(name)); }

  size_t param_count() const {
    size_t n = 0;
    for (const Tensor& x : tensors) n += x.size();
    return n;
  }
};

namespace detail {

inline size_t shape_size(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

inline Tensor make_tensor(const std::string& name, Group group, std::vector<int> shape) {
  Tensor t;
  t.name = name;
  t.group = group;
  t.shape = std::move(shape);
  t.w.assign(shape_size(t.shape), 0.0);
  t.g.assign(t.w.size(), 0.0);
  return t;
}

inline void he_uniform(Tensor& t, size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.w) v = rng.uniform(-limit, limit);
}

inline void append_bottleneck(PolicyNet& net, const std::string& prefix, Group group, int width,
                              uint64_t seed) {
  const int fc = net.cfg.fc_width;
  Rng rng(seed);
  Tensor dw = make_tensor(prefix + ".down.w", group, {width, fc});
  he_uniform(dw, static_cast<size_t>(fc), rng);
  net.tensors.push_back(std::move(dw));
  net.tensors.push_back(make_tensor(prefix + ".down.b", group, {width}));
  // Zero up-projection: the freshly inserted adapter is an exact identity.
  net.tensors.push_back(make_tensor(prefix + ".up.w", group, {fc, width}));
  net.tensors.push_back(make_tensor(prefix + ".up.b", group, {fc}));
}

}  // namespace detail

inline PolicyNet create_policy(const PolicyConfig& cfg) {
  if (cfg.input_size < 8 || cfg.in_channels < 1 || cfg.fc_width < 1 || cfg.n_actions < 2)
    throw Error("invalid policy configuration");
  PolicyNet net;
  net.cfg = cfg;
  Rng rng(cfg.init_seed);
  const auto cc = cfg.conv_channels;

  auto conv = [&](const std::string& name, int in_c, int out_c) {
    Tensor w = detail::make_tensor(name + ".w", Group::FE, {out_c, in_c, 3, 3});
    detail::he_uniform(w, static_cast<size_t>(in_c) * 9, rng);
    net.tensors.push_back(std::move(w));
    net.tensors.push_back(detail::make_tensor(name + ".b", Group::FE, {out_c}));
  };
  conv("fe.conv1", cfg.in_channels, cc[0]);
  conv("fe.conv2", cc[0], cc[1]);
  conv("fe.conv3", cc[1], cc[2]);

  Tensor fcw = detail::make_tensor("fc.w", Group::FC, {cfg.fc_width, cfg.trunk_in()});
  detail::he_uniform(fcw, static_cast<size_t>(cfg.trunk_in()), rng);
  net.tensors.push_back(std::move(fcw));
  net.tensors.push_back(detail::make_tensor("fc.b", Group::FC, {cfg.fc_width}));

  Tensor aw = detail::make_tensor("actor.w", Group::ACTOR, {cfg.n_actions, cfg.fc_width});
  detail::he_uniform(aw, static_cast<size_t>(cfg.fc_width), rng);
  net.tensors.push_back(std::move(aw));
  net.tensors.push_back(detail::make_tensor("actor.b", Group::ACTOR, {cfg.n_actions}));

  Tensor cw = detail::make_tensor("critic.w", Group::CRITIC, {1, cfg.fc_width});
  detail::he_uniform(cw, static_cast<size_t>(cfg.fc_width), rng);
  net.tensors.push_back(std::move(cw));
  net.tensors.push_back(detail::make_tensor("critic.b", Group::CRITIC, {1}));
  return net;
}

inline void insert_adapter_v1(PolicyNet& net, uint64_t seed) {
  if (net.has_adapter_v1) throw Error("AdapterV1 already inserted");
  detail::append_bottleneck(net, "adapter_v1", Group::ADAPTER_V1, net.cfg.adapter_v1_width, seed);
  net.has_adapter_v1 = true;
}

inline void insert_adapter_a(PolicyNet& net, uint64_t seed) {
  if (net.has_adapter_a) throw Error("actor adapter already inserted");
  detail::append_bottleneck(net, "adapter_a", Group::ADAPTER_A, net.cfg.adapter_head_width, seed);
  net.has_adapter_a = true;
}

inline void insert_adapter_c(PolicyNet& net, uint64_t seed) {
  if (net.has_adapter_c) throw Error("critic adapter already inserted");
  detail::append_bottleneck(net, "adapter_c", Group::ADAPTER_C, net.cfg.adapter_head_width, seed);
  net.has_adapter_c = true;
}

// ---------------------------------------------------------------------------
// Group accounting

struct GroupCounts {
  std::map<Group, size_t> counts;
  size_t total = 0;
  size_t non_adapter = 0;
};

inline GroupCounts param_groups(const PolicyNet& net) {
  GroupCounts gc;
  for (const Tensor& t : net.tensors) {
    gc.counts[t.group] += t.size();
    gc.total += t.size();
    if (t.group == Group::FE || t.group == Group::FC || t.group == Group::ACTOR ||
        t.group == Group::CRITIC)
      gc.non_adapter += t.size();
  }
  return gc;
}

struct TrainableMask {
  std::vector<uint8_t> tensor_on;  // parallel to net.tensors
  bool fe_on = false;
  size_t trainable_params = 0;
};

inline TrainableMask trainable_mask(const PolicyNet& net, const std::set<Group>& groups) {
  TrainableMask m;
  m.tensor_on.resize(net.tensors.size());
  for (size_t i = 0; i < net.tensors.size(); ++i) {
    const bool on = groups.count(net.tensors[i].group) > 0;
    m.tensor_on[i] = on ? 1 : 0;
    if (on) m.trainable_params += net.tensors[i].size();
  }
  m.fe_on = groups.count(Group::FE) > 0;
  return m;
}

inline TrainableMask trainable_mask_by_name(const PolicyNet& net,
                                            const std::vector<std::string>& names) {
  std::set<Group> groups;
  for (const std::string& n : names) groups.insert(parse_group(n));
  return trainable_mask(net, groups);
}

// ---------------------------------------------------------------------------
// States

struct State {
  int channels = 0;
  int size = 0;
  std::vector<double> image;   // channel-major, values in [0,1]
  std::vector<double> extras;  // values in [0,1]
};

inline constexpr int kStateSize = 64;
inline constexpr double kLambdaNorm = 100.0;

namespace detail {

// Box-average a CTU-aligned plane down to kStateSize x kStateSize.
template <typename Src>
inline void box_downsample(Src&& src, int w, int h, double scale, std::vector<double>& out,
                           size_t out_off) {
  const int bx = w / kStateSize, by = h / kStateSize;
  for (int oy = 0; oy < kStateSize; ++oy)
    for (int ox = 0; ox < kStateSize; ++ox) {
      double sum = 0.0;
      for (int y = oy * by; y < (oy + 1) * by; ++y)
        for (int x = ox * bx; x < (ox + 1) * bx; ++x) sum += src(x, y);
      out[out_off + static_cast<size_t>(oy) * kStateSize + ox] =
          sum / (static_cast<double>(bx) * by) * scale;
    }
}

}  // namespace detail

inline State build_frame_state(const Frame& luma, const SemanticMask& mask, double lambda) {
  State s;
  s.channels = 3;
  s.size = kStateSize;
  s.image.assign(static_cast<size_t>(3) * kStateSize * kStateSize, 0.0);
  const size_t plane = static_cast<size_t>(kStateSize) * kStateSize;
  detail::box_downsample([&](int x, int y) { return static_cast<double>(luma.at(x, y)); },
                         luma.width, luma.height, 1.0 / 255.0, s.image, 0);
  detail::box_downsample([&](int x, int y) { return static_cast<double>(mask.at(x, y)); },
                         mask.width, mask.height, 1.0, s.image, plane);
  const double lam = lambda / kLambdaNorm;
  for (size_t i = 0; i < plane; ++i) s.image[2 * plane + i] = lam;
  return s;
}

inline State build_ctu_state(const Frame& frame, const SemanticMask& mask, int cx, int cy,
                             int frame_qp, bool fg, double ratio) {
  State s;
  s.channels = 2;
  s.size = kStateSize;
  s.image.assign(static_cast<size_t>(2) * kStateSize * kStateSize, 0.0);
  const size_t plane = static_cast<size_t>(kStateSize) * kStateSize;
  const int x0 = cx * kCtuSize, y0 = cy * kCtuSize;
  for (int y = 0; y < kCtuSize; ++y)
    for (int x = 0; x < kCtuSize; ++x) {
      s.image[static_cast<size_t>(y) * kStateSize + x] = frame.at(x0 + x, y0 + y) / 255.0;
      s.image[plane + static_cast<size_t>(y) * kStateSize + x] = mask.at(x0 + x, y0 + y);
    }
  s.extras = {frame_qp / static_cast<double>(kQpMax), fg ? 1.0 : 0.0, ratio};
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct Workspace {
  // forward activations
  std::vector<double> z1, a1, z2, a2, z3, a3, pooled, trunk, fc_pre, h;
  std::vector<double> v1_pre, v1_mid, h1;
  std::vector<double> a_pre, a_mid, h_a;
  std::vector<double> c_pre, c_mid, h_c;
  std::vector<double> logits;
  double value = 0.0;
  // backward scratch
  std::vector<double> d_h_a, d_h_c, d_h1, d_h, d_trunk, d_a3, d_z, d_a2, d_a1, d_img, d_pool;
  std::vector<double> d_logits;
};

namespace detail {

inline void conv2d_forward(const double* in, int in_c, int in_s, const Tensor& w, const Tensor& b,
                           double* out, int out_c, int out_s) {
  for (int oc = 0; oc < out_c; ++oc) {
    const double bias = b.w[static_cast<size_t>(oc)];
    for (int oy = 0; oy < out_s; ++oy)
      for (int ox = 0; ox < out_s; ++ox) {
        double s = bias;
        for (int ic = 0; ic < in_c; ++ic) {
          const double* wp = &w.w[((static_cast<size_t>(oc) * in_c + ic) * 9)];
          const double* ip = &in[static_cast<size_t>(ic) * in_s * in_s];
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 + ky - 1;
            if (iy < 0 || iy >= in_s) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 + kx - 1;
              if (ix < 0 || ix >= in_s) continue;
              s += wp[ky * 3 + kx] * ip[static_cast<size_t>(iy) * in_s + ix];
            }
          }
        }
        out[(static_cast<size_t>(oc) * out_s + oy) * out_s + ox] = s;
      }
  }
}

// Accumulates weight/bias grads and fills d_in (d_in may be null for the
// first layer).
inline void conv2d_backward(const double* in, int in_c, int in_s, Tensor& w, Tensor& b,
                            const double* d_out, int out_c, int out_s, double* d_in) {
  if (d_in) std::memset(d_in, 0, sizeof(double) * static_cast<size_t>(in_c) * in_s * in_s);
  for (int oc = 0; oc < out_c; ++oc) {
    for (int oy = 0; oy < out_s; ++oy)
      for (int ox = 0; ox < out_s; ++ox) {
        const double go = d_out[(static_cast<size_t>(oc) * out_s + oy) * out_s + ox];
        if (go == 0.0) continue;
        b.g[static_cast<size_t>(oc)] += go;
        for (int ic = 0; ic < in_c; ++ic) {
          double* wg = &w.g[((static_cast<size_t>(oc) * in_c + ic) * 9)];
          const double* wp = &w.w[((static_cast<size_t>(oc) * in_c + ic) * 9)];
          const double* ip = &in[static_cast<size_t>(ic) * in_s * in_s];
          double* dp = d_in ? &d_in[static_cast<size_t>(ic) * in_s * in_s] : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 + ky - 1;
            if (iy < 0 || iy >= in_s) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 + kx - 1;
              if (ix < 0 || ix >= in_s) continue;
              wg[ky * 3 + kx] += go * ip[static_cast<size_t>(iy) * in_s + ix];
              if (dp) dp[static_cast<size_t>(iy) * in_s + ix] += go * wp[ky * 3 + kx];
            }
          }
        }
      }
  }
}

inline void linear_forward(const std::vector<double>& x, const Tensor& w, const Tensor& b,
                           std::vector<double>& out) {
  const size_t out_n = b.size(), in_n = x.size();
  out.resize(out_n);
  for (size_t o = 0; o < out_n; ++o) {
    double s = b.w[o];
    const double* wp = &w.w[o * in_n];
    for (size_t i = 0; i < in_n; ++i) s += wp[i] * x[i];
    out[o] = s;
  }
}

inline void linear_backward(const std::vector<double>& x, Tensor& w, Tensor& b,
                            const std::vector<double>& d_out, std::vector<double>* d_x) {
  const size_t out_n = b.size(), in_n = x.size();
  if (d_x) d_x->assign(in_n, 0.0);
  for (size_t o = 0; o < out_n; ++o) {
    const double go = d_out[o];
    if (go == 0.0) continue;
    b.g[o] += go;
    double* wg = &w.g[o * in_n];
    const double* wp = &w.w[o * in_n];
    for (size_t i = 0; i < in_n; ++i) {
      wg[i] += go * x[i];
      if (d_x) (*d_x)[i] += go * wp[i];
    }
  }
}

inline void relu_inplace(std::vector<double>& v) {
  for (double& x : v)
    if (x < 0.0) x = 0.0;
}

// out = h + up(relu(down(h))). pre/mid retain the bottleneck activations.
inline void bottleneck_forward(const PolicyNet& net, const std::string& prefix,
                               const std::vector<double>& h, std::vector<double>& pre,
                               std::vector<double>& mid, std::vector<double>& out) {
  linear_forward(h, net.t(prefix + ".down.w"), net.t(prefix + ".down.b"), pre);
  mid = pre;
  relu_inplace(mid);
  linear_forward(mid, net.t(prefix + ".up.w"), net.t(prefix + ".up.b"), out);
  for (size_t i = 0; i < h.size(); ++i) out[i] += h[i];
}

inline void bottleneck_backward(PolicyNet& net, const std::string& prefix,
                                const std::vector<double>& h, const std::vector<double>& pre,
                                const std::vector<double>& mid, const std::vector<double>& d_out,
                                std::vector<double>& d_h) {
  std::vector<double> d_mid, d_pre;
  linear_backward(mid, net.t(prefix + ".up.w"), net.t(prefix + ".up.b"), d_out, &d_mid);
  d_pre.resize(d_mid.size());
  for (size_t i = 0; i < d_mid.size(); ++i) d_pre[i] = pre[i] > 0.0 ? d_mid[i] : 0.0;
  linear_backward(h, net.t(prefix + ".down.w"), net.t(prefix + ".down.b"), d_pre, &d_h);
  for (size_t i = 0; i < d_out.size(); ++i) d_h[i] += d_out[i];  // residual path
}

inline void validate_state(const PolicyNet& net, const State& s) {
  const PolicyConfig& c = net.cfg;
  if (s.channels != c.in_channels || s.size != c.input_size ||
      s.image.size() != static_cast<size_t>(c.in_channels) * c.input_size * c.input_size ||
      s.extras.size() != static_cast<size_t>(c.n_extras))
    throw Error("state shape does not match policy configuration");
}

}  // namespace detail

// Deterministic forward pass. At the CTU level logits outside the label's
// legal subset come back as -inf.
inline void forward(const PolicyNet& net, const State& state, int label, Workspace& ws) {
  detail::validate_state(net, state);
  const PolicyConfig& c = net.cfg;
  const auto cc = c.conv_channels;
  const int s1 = c.s1(), s2 = c.s2(), s3 = c.s3(), sp = c.sp();

  ws.z1.resize(static_cast<size_t>(cc[0]) * s1 * s1);
  detail::conv2d_forward(state.image.data(), c.in_channels, c.input_size, net.tensors[0],
                         net.tensors[1], ws.z1.data(), cc[0], s1);
  ws.a1 = ws.z1;
  detail::relu_inplace(ws.a1);

  ws.z2.resize(static_cast<size_t>(cc[1]) * s2 * s2);
  detail::conv2d_forward(ws.a1.data(), cc[0], s1, net.tensors[2], net.tensors[3], ws.z2.data(),
                         cc[1], s2);
  ws.a2 = ws.z2;
  detail::relu_inplace(ws.a2);

  ws.z3.resize(static_cast<size_t>(cc[2]) * s3 * s3);
  detail::conv2d_forward(ws.a2.data(), cc[1], s2, net.tensors[4], net.tensors[5], ws.z3.data(),
                         cc[2], s3);
  ws.a3 = ws.z3;
  detail::relu_inplace(ws.a3);

  if (c.pooled()) {
    ws.pooled.resize(static_cast<size_t>(cc[2]) * sp * sp);
    for (int ch = 0; ch < cc[2]; ++ch)
      for (int y = 0; y < sp; ++y)
        for (int x = 0; x < sp; ++x) {
          const double* p = &ws.a3[(static_cast<size_t>(ch) * s3 + 2 * y) * s3 + 2 * x];
          ws.pooled[(static_cast<size_t>(ch) * sp + y) * sp + x] =
              0.25 * (p[0] + p[1] + p[s3] + p[s3 + 1]);
        }
  } else {
    ws.pooled = ws.a3;
  }

  ws.trunk.resize(static_cast<size_t>(c.trunk_in()));
  std::copy(ws.pooled.begin(), ws.pooled.end(), ws.trunk.begin());
  std::copy(state.extras.begin(), state.extras.end(), ws.trunk.begin() + ws.pooled.size());

  detail::linear_forward(ws.trunk, net.t("fc.w"), net.t("fc.b"), ws.fc_pre);
  ws.h = ws.fc_pre;
  detail::relu_inplace(ws.h);

  if (net.has_adapter_v1)
    detail::bottleneck_forward(net, "adapter_v1", ws.h, ws.v1_pre, ws.v1_mid, ws.h1);
  else
    ws.h1 = ws.h;

  if (net.has_adapter_a)
    detail::bottleneck_forward(net, "adapter_a", ws.h1, ws.a_pre, ws.a_mid, ws.h_a);
  else
    ws.h_a = ws.h1;

  if (net.has_adapter_c)
    detail::bottleneck_forward(net, "adapter_c", ws.h1, ws.c_pre, ws.c_mid, ws.h_c);
  else
    ws.h_c = ws.h1;

  detail::linear_forward(ws.h_a, net.t("actor.w"), net.t("actor.b"), ws.logits);
  std::vector<double> v;
  detail::linear_forward(ws.h_c, net.t("critic.w"), net.t("critic.b"), v);
  ws.value = v[0];

  const auto [lo, hi] = legal_action_range(c.layout, c.n_actions, label);
  for (int i = 0; i < c.n_actions; ++i)
    if (i < lo || i >= hi) ws.logits[static_cast<size_t>(i)] = -std::numeric_limits<double>::infinity();
}

struct ForwardOut {
  std::vector<double> logits;
  double value = 0.0;
};

inline ForwardOut forward(const PolicyNet& net, const State& state, int label = -1) {
  Workspace ws;
  forward(net, state, label, ws);
  return {ws.logits, ws.value};
}

// ---------------------------------------------------------------------------
// Action selection

struct ActionDecision {
  int action = -1;
  double log_prob = 0.0;
  double value = 0.0;
  double entropy = 0.0;
};

namespace detail {

struct Softmax {
  std::vector<double> p;  // zero on illegal entries
  double entropy = 0.0;
};

inline Softmax softmax_legal(const std::vector<double>& logits) {
  Softmax sm;
  sm.p.assign(logits.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  if (!std::isfinite(mx)) throw Error("all actions are illegal");
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i)
    if (std::isfinite(logits[i])) {
      sm.p[i] = std::exp(logits[i] - mx);
      sum += sm.p[i];
    }
  for (size_t i = 0; i < logits.size(); ++i) {
    sm.p[i] /= sum;
    if (sm.p[i] > 0.0) sm.entropy -= sm.p[i] * std::log(sm.p[i]);
  }
  return sm;
}

}  // namespace detail

inline ActionDecision sample_action(const std::vector<double>& logits, double value, Rng& rng) {
  const auto sm = detail::softmax_legal(logits);
  const double u = rng.u01();
  double cum = 0.0;
  int pick = -1;
  for (size_t i = 0; i < sm.p.size(); ++i) {
    if (sm.p[i] <= 0.0) continue;
    cum += sm.p[i];
    pick = static_cast<int>(i);
    if (u < cum) break;
  }
  ActionDecision d;
  d.action = pick;
  d.log_prob = std::log(sm.p[static_cast<size_t>(pick)]);
  d.value = value;
  d.entropy = sm.entropy;
  return d;
}

inline ActionDecision greedy_action(const std::vector<double>& logits, double value) {
  const auto sm = detail::softmax_legal(logits);
  int best = -1;
  double best_z = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < logits.size(); ++i)
    if (std::isfinite(logits[i]) && logits[i] > best_z) {
      best_z = logits[i];
      best = static_cast<int>(i);
    }
  ActionDecision d;
  d.action = best;
  d.log_prob = std::log(sm.p[static_cast<size_t>(best)]);
  d.value = value;
  d.entropy = sm.entropy;
  return d;
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct LossParts {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;  // H(pi), not the weighted term
  double v_estimate = 0.0;
  double log_prob = 0.0;
};

inline void zero_grads(PolicyNet& net) {
  for (Tensor& t : net.tensors) std::fill(t.g.begin(), t.g.end(), 0.0);
}

inline void apply_grad_mask(PolicyNet& net, const TrainableMask& mask) {
  for (size_t i = 0; i < net.tensors.size(); ++i)
    if (!mask.tensor_on[i]) std::fill(net.tensors[i].g.begin(), net.tensors[i].g.end(), 0.0);
}

namespace detail {

// Accumulates scale * dL into tensor grads. Loss:
//   L = -log pi(a|s) * advantage + 0.5 * (V - value_target)^2 - ec * H(pi)
inline LossParts backward_accumulate(PolicyNet& net, const State& state, int label, int action,
                                     double advantage, double value_target, double entropy_coef,
                                     double scale, bool need_fe_grads, Workspace& ws) {
  forward(net, state, label, ws);
  const PolicyConfig& c = net.cfg;
  if (action < 0 || action >= c.n_actions || !std::isfinite(ws.logits[static_cast<size_t>(action)]))
    throw Error("action " + std::to_string(action) + " is illegal for this state");

  const auto sm = softmax_legal(ws.logits);
  const double logp = std::log(sm.p[static_cast<size_t>(action)]);

  LossParts parts;
  parts.policy = -logp * advantage;
  parts.value = 0.5 * (ws.value - value_target) * (ws.value - value_target);
  parts.entropy = sm.entropy;
  parts.v_estimate = ws.value;
  parts.log_prob = logp;
  parts.total = parts.policy + parts.value - entropy_coef * sm.entropy;
  if (!std::isfinite(parts.total))
    throw NumericError("non-finite loss: policy=" + std::to_string(parts.policy) +
                       " value=" + std::to_string(parts.value) +
                       " entropy=" + std::to_string(sm.entropy));

  // d logits
  ws.d_logits.assign(static_cast<size_t>(c.n_actions), 0.0);
  for (int i = 0; i < c.n_actions; ++i) {
    const double p = sm.p[static_cast<size_t>(i)];
    if (!std::isfinite(ws.logits[static_cast<size_t>(i)])) continue;
    double g = advantage * (p - (i == action ? 1.0 : 0.0));
    g += entropy_coef * p * (std::log(std::max(p, 1e-300)) + sm.entropy);
    ws.d_logits[static_cast<size_t>(i)] = g * scale;
  }
  const std::vector<double> d_value = {(ws.value - value_target) * scale};

  linear_backward(ws.h_a, net.t("actor.w"), net.t("actor.b"), ws.d_logits, &ws.d_h_a);
  linear_backward(ws.h_c, net.t("critic.w"), net.t("critic.b"), d_value, &ws.d_h_c);

  if (net.has_adapter_a) {
    std::vector<double> d_tmp;
    bottleneck_backward(net, "adapter_a", ws.h1, ws.a_pre, ws.a_mid, ws.d_h_a, d_tmp);
    ws.d_h1 = d_tmp;
  } else {
    ws.d_h1 = ws.d_h_a;
  }
  if (net.has_adapter_c) {
    std::vector<double> d_tmp;
    bottleneck_backward(net, "adapter_c", ws.h1, ws.c_pre, ws.c_mid, ws.d_h_c, d_tmp);
    for (size_t i = 0; i < ws.d_h1.size(); ++i) ws.d_h1[i] += d_tmp[i];
  } else {
    for (size_t i = 0; i < ws.d_h1.size(); ++i) ws.d_h1[i] += ws.d_h_c[i];
  }

  if (net.has_adapter_v1) {
    bottleneck_backward(net, "adapter_v1", ws.h, ws.v1_pre, ws.v1_mid, ws.d_h1, ws.d_h);
  } else {
    ws.d_h = ws.d_h1;
  }

  // back through the fc ReLU
  for (size_t i = 0; i < ws.d_h.size(); ++i)
    if (ws.fc_pre[i] <= 0.0) ws.d_h[i] = 0.0;
  linear_backward(ws.trunk, net.t("fc.w"), net.t("fc.b"), ws.d_h, &ws.d_trunk);

  if (!need_fe_grads) return parts;  // conv grads are masked out anyway

  const auto cc = c.conv_channels;
  const int s1 = c.s1(), s2 = c.s2(), s3 = c.s3(), sp = c.sp();

  ws.d_a3.assign(static_cast<size_t>(cc[2]) * s3 * s3, 0.0);
  if (c.pooled()) {
    for (int ch = 0; ch < cc[2]; ++ch)
      for (int y = 0; y < sp; ++y)
        for (int x = 0; x < sp; ++x) {
          const double g = 0.25 * ws.d_trunk[(static_cast<size_t>(ch) * sp + y) * sp + x];
          double* p = &ws.d_a3[(static_cast<size_t>(ch) * s3 + 2 * y) * s3 + 2 * x];
          p[0] += g;
          p[1] += g;
          p[s3] += g;
          p[s3 + 1] += g;
        }
  } else {
    std::copy(ws.d_trunk.begin(), ws.d_trunk.begin() + ws.d_a3.size(), ws.d_a3.begin());
  }
  for (size_t i = 0; i < ws.d_a3.size(); ++i)
    if (ws.z3[i] <= 0.0) ws.d_a3[i] = 0.0;

  ws.d_a2.resize(static_cast<size_t>(cc[1]) * s2 * s2);
  conv2d_backward(ws.a2.data(), cc[1], s2, net.tensors[4], net.tensors[5], ws.d_a3.data(), cc[2],
                  s3, ws.d_a2.data());
  for (size_t i = 0; i < ws.d_a2.size(); ++i)
    if (ws.z2[i] <= 0.0) ws.d_a2[i] = 0.0;

  ws.d_a1.resize(static_cast<size_t>(cc[0]) * s1 * s1);
  conv2d_backward(ws.a1.data(), cc[0], s1, net.tensors[2], net.tensors[3], ws.d_a2.data(), cc[1],
                  s2, ws.d_a1.data());
  for (size_t i = 0; i < ws.d_a1.size(); ++i)
    if (ws.z1[i] <= 0.0) ws.d_a1[i] = 0.0;

  conv2d_backward(state.image.data(), c.in_channels, c.input_size, net.tensors[0], net.tensors[1],
                  ws.d_a1.data(), cc[0], s1, nullptr);
  return parts;
}

}  // namespace detail

// Single-decision loss + exact gradients; parameters outside the mask keep
// zero gradient. A null mask trains everything.
inline LossParts forward_backward(PolicyNet& net, const State& state, int label, int action,
                                  double advantage, double value_target, double entropy_coef,
                                  const TrainableMask* mask = nullptr) {
  zero_grads(net);
  Workspace ws;
  const bool need_fe = mask == nullptr || mask->fe_on;
  const LossParts parts = detail::backward_accumulate(net, state, label, action, advantage,
                                                      value_target, entropy_coef, 1.0, need_fe, ws);
  if (mask) apply_grad_mask(net, *mask);
  return parts;
}

inline void sgd_step(PolicyNet& net, const TrainableMask& mask, double lr) {
  for (size_t i = 0; i < net.tensors.size(); ++i) {
    if (!mask.tensor_on[i]) continue;
    Tensor& t = net.tensors[i];
    for (size_t j = 0; j < t.w.size(); ++j) t.w[j] -= lr * t.g[j];
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "SMCK" | u32 version | u64 json length | metadata JSON |
// raw tensor doubles in directory order.

struct Checkpoint {
  PolicyNet frame_net;
  PolicyNet ctu_net;
  double bpp_norm = 1.0;
  std::vector<double> lambda_set;
  uint64_t seed = 0;
};

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json config_json(const PolicyNet& net) {
  const PolicyConfig& c = net.cfg;
  return {{"layout", static_cast<int>(c.layout)},
          {"in_channels", c.in_channels},
          {"input_size", c.input_size},
          {"conv_channels", {c.conv_channels[0], c.conv_channels[1], c.conv_channels[2]}},
          {"fc_width", c.fc_width},
          {"n_extras", c.n_extras},
          {"n_actions", c.n_actions},
          {"adapter_v1_width", c.adapter_v1_width},
          {"adapter_head_width", c.adapter_head_width},
          {"adapters",
           {{"v1", net.has_adapter_v1}, {"a", net.has_adapter_a}, {"c", net.has_adapter_c}}}};
}

inline std::string arch_hash(const PolicyNet& net) {
  const std::string s = config_json(net).dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

inline nlohmann::json net_meta(const PolicyNet& net) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const Tensor& t : net.tensors)
    tensors.push_back({{"name", t.name}, {"group", group_name(t.group)}, {"shape", t.shape}});
  return {{"config", config_json(net)}, {"arch_hash", arch_hash(net)}, {"tensors", tensors}};
}

inline PolicyNet net_from_meta(const nlohmann::json& meta) {
  const auto& jc = meta.at("config");
  PolicyConfig c;
  c.layout = static_cast<ActionLayout>(jc.at("layout").get<int>());
  c.in_channels = jc.at("in_channels").get<int>();
  c.input_size = jc.at("input_size").get<int>();
  const auto& cv = jc.at("conv_channels");
  c.conv_channels = {cv.at(0).get<int>(), cv.at(1).get<int>(), cv.at(2).get<int>()};
  c.fc_width = jc.at("fc_width").get<int>();
  c.n_extras = jc.at("n_extras").get<int>();
  c.n_actions = jc.at("n_actions").get<int>();
  c.adapter_v1_width = jc.at("adapter_v1_width").get<int>();
  c.adapter_head_width = jc.at("adapter_head_width").get<int>();
  PolicyNet net = create_policy(c);
  const auto& ad = jc.at("adapters");
  if (ad.at("v1").get<bool>()) insert_adapter_v1(net, 0);
  if (ad.at("a").get<bool>()) insert_adapter_a(net, 0);
  if (ad.at("c").get<bool>()) insert_adapter_c(net, 0);
  if (meta.at("arch_hash").get<std::string>() != arch_hash(net))
    throw IoError("checkpoint architecture hash mismatch");
  const auto& jt = meta.at("tensors");
  if (jt.size() != net.tensors.size()) throw IoError("checkpoint tensor directory mismatch");
  for (size_t i = 0; i < net.tensors.size(); ++i) {
    if (jt.at(i).at("name").get<std::string>() != net.tensors[i].name)
      throw IoError("checkpoint tensor name mismatch at index " + std::to_string(i));
    if (jt.at(i).at("group").get<std::string>() != group_name(net.tensors[i].group))
      throw IoError("checkpoint group tag mismatch for " + net.tensors[i].name);
  }
  return net;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json meta = {{"version", kCheckpointVersion},
                         {"seed", ck.seed},
                         {"bpp_norm", ck.bpp_norm},
                         {"lambda_set", ck.lambda_set},
                         {"frame_net", detail::net_meta(ck.frame_net)},
                         {"ctu_net", detail::net_meta(ck.ctu_net)}};
  const std::string js = meta.dump();
  std::vector<uint8_t> out;
  out.insert(out.end(), {'S', 'M', 'C', 'K'});
  auto put32 = [&out](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
  };
  auto put64 = [&out](uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
  };
  put32(kCheckpointVersion);
  put64(js.size());
  out.insert(out.end(), js.begin(), js.end());
  for (const PolicyNet* net : {&ck.frame_net, &ck.ctu_net})
    for (const Tensor& t : net->tensors) {
      const size_t off = out.size();
      out.resize(off + t.w.size() * sizeof(double));
      std::memcpy(out.data() + off, t.w.data(), t.w.size() * sizeof(double));
    }
  write_file(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto data = read_file(path);
  if (data.size() < 16 || data[0] != 'S' || data[1] != 'M' || data[2] != 'C' || data[3] != 'K')
    throw IoError("not a checkpoint file: " + path);
  uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<uint32_t>(data[4 + i]) << (8 * i);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  uint64_t jlen = 0;
  for (int i = 0; i < 8; ++i) jlen |= static_cast<uint64_t>(data[8 + i]) << (8 * i);
  if (data.size() < 16 + jlen) throw IoError("checkpoint metadata truncated");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(data.begin() + 16, data.begin() + 16 + jlen);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint metadata malformed: ") + e.what());
  }
  Checkpoint ck;
  ck.seed = meta.at("seed").get<uint64_t>();
  ck.bpp_norm = meta.at("bpp_norm").get<double>();
  ck.lambda_set = meta.at("lambda_set").get<std::vector<double>>();
  ck.frame_net = detail::net_from_meta(meta.at("frame_net"));
  ck.ctu_net = detail::net_from_meta(meta.at("ctu_net"));
  size_t off = 16 + jlen;
  for (PolicyNet* net : {&ck.frame_net, &ck.ctu_net})
    for (Tensor& t : net->tensors) {
      const size_t bytes = t.w.size() * sizeof(double);
      if (off + bytes > data.size()) throw IoError("checkpoint tensor data truncated");
      std::memcpy(t.w.data(), data.data() + off, bytes);
      off += bytes;
    }
  if (off != data.size()) throw IoError("trailing bytes in checkpoint");
  return ck;
}

inline std::string tensor_hash(const Tensor& t) {
  return hex64(fnv1a64(t.w.data(), t.w.size() * sizeof(double)));
}

}  // namespace smc
