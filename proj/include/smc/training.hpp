#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "smc/codec.hpp"
#include "smc/core.hpp"
#include "smc/io.hpp"
#include "smc/policy.hpp"
#include "smc/semantics.hpp"

namespace smc {

struct RewardConfig {
  double lambda = 0.0;
  double bpp_norm = 1.0;  // reference bpp of the training corpus at QP 22
};

// Larger is better: reward = -(mean task distortion + lambda * bpp / bpp_norm).
inline double reward(const EncodeStats& stats, const std::vector<double>& distortions,
                     const RewardConfig& cfg) {
  if (cfg.bpp_norm <= 0.0) throw Error("bpp_norm must be positive");
  if (cfg.lambda < 0.0 || cfg.lambda > 100.0) throw Error("lambda must lie in [0,100]");
  double mean_d = 0.0;
  for (double d : distortions) mean_d += d;
  if (!distortions.empty()) mean_d /= static_cast<double>(distortions.size());
  return -(mean_d + cfg.lambda * stats.bpp / cfg.bpp_norm);
}

struct TrainConfig {
  int iterations = 1000;
  int batch_size = 2;  // tuning overrides this with the shot count
  double lr_frame = 1e-3;
  double lr_ctu = 1e-4;
  double entropy_coef = 0.01;
  uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.iterations < 1 || c.batch_size < 1 || c.lr_frame <= 0.0 || c.lr_ctu <= 0.0 ||
      c.entropy_coef < 0.0)
    throw ConfigError("train config fields must be positive");
}

// A sequence with everything the agents and the reward need precomputed:
// original-frame segmentations, per-frame CTU labels, and the frame-level
// state planes (lambda channel filled per episode).
struct PreparedSequence {
  std::string id;
  Sequence seq;
  std::vector<SemanticMask> masks;
  std::vector<CtuLabels> labels;
  State frame_state_proto;
  int grid_w = 0, grid_h = 0;
};

inline PreparedSequence prepare_sequence(Sequence seq) {
  validate_sequence(seq);
  PreparedSequence p;
  p.id = seq.id;
  p.grid_w = seq.width() / kCtuSize;
  p.grid_h = seq.height() / kCtuSize;
  for (const Frame& f : seq.frames) {
    p.masks.push_back(segment(f));
    p.labels.push_back(ctu_labels(p.masks.back()));
  }
  p.frame_state_proto = build_frame_state(seq.frames.front(), p.masks.front(), 0.0);
  p.seq = std::move(seq);
  return p;
}

enum class RolloutMode { Sample, Greedy };

struct Decision {
  State state;
  int label = -1;  // -1: frame-level decision
  ActionDecision act;
};

struct Episode {
  std::string seq_id;
  double lambda = 0.0;
  std::optional<Decision> frame_decision;
  std::vector<Decision> ctu_decisions;  // frame-major, CTU raster order
  EncodeStats stats;
  std::vector<double> distortions;  // per frame
  double reward_value = 0.0;
};

// One full sequence under one (QP_I, CTU offsets) assignment.
inline Episode run_episode(const PreparedSequence& prep, const PolicyNet& frame_net,
                           const PolicyNet& ctu_net, const RewardConfig& reward_cfg,
                           RolloutMode mode, Rng& rng) {
  Episode ep;
  ep.seq_id = prep.id;
  ep.lambda = reward_cfg.lambda;

  Workspace ws;

  Decision fd;
  fd.state = prep.frame_state_proto;
  {
    const size_t plane = static_cast<size_t>(kStateSize) * kStateSize;
    const double lam = reward_cfg.lambda / kLambdaNorm;
    for (size_t i = 0; i < plane; ++i) fd.state.image[2 * plane + i] = lam;
  }
  forward(frame_net, fd.state, -1, ws);
  fd.act = (mode == RolloutMode::Sample) ? sample_action(ws.logits, ws.value, rng)
                                         : greedy_action(ws.logits, ws.value);
  const int qp_i = frame_action_qp(fd.act.action);
  ep.frame_decision = std::move(fd);

  const int n_frames = prep.seq.n_frames();
  const std::vector<int> schedule = frame_qp_schedule(qp_i, n_frames);

  std::vector<std::vector<int>> offsets(static_cast<size_t>(n_frames));
  ep.ctu_decisions.reserve(static_cast<size_t>(n_frames) * prep.grid_w * prep.grid_h);
  for (int f = 0; f < n_frames; ++f) {
    const CtuLabels& labels = prep.labels[static_cast<size_t>(f)];
    offsets[static_cast<size_t>(f)].resize(static_cast<size_t>(prep.grid_w) * prep.grid_h);
    for (int cy = 0; cy < prep.grid_h; ++cy)
      for (int cx = 0; cx < prep.grid_w; ++cx) {
        Decision d;
        d.label = labels.is_fg(cx, cy) ? 1 : 0;
        d.state = build_ctu_state(prep.seq.frames[static_cast<size_t>(f)],
                                  prep.masks[static_cast<size_t>(f)], cx, cy, schedule[f],
                                  d.label == 1, labels.ratio_at(cx, cy));
        forward(ctu_net, d.state, d.label, ws);
        d.act = (mode == RolloutMode::Sample) ? sample_action(ws.logits, ws.value, rng)
                                              : greedy_action(ws.logits, ws.value);
        offsets[static_cast<size_t>(f)][static_cast<size_t>(cy) * prep.grid_w + cx] =
            ctu_action_offset(d.act.action);
        ep.ctu_decisions.push_back(std::move(d));
      }
  }

  SequenceEncodeResult enc = encode_sequence(prep.seq, schedule, offsets);
  ep.stats = std::move(enc.aggregate);
  ep.distortions.reserve(static_cast<size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f)
    ep.distortions.push_back(
        1.0 - miou(segment(enc.recons[static_cast<size_t>(f)]), prep.masks[static_cast<size_t>(f)]));
  ep.reward_value = reward(ep.stats, ep.distortions, reward_cfg);
  return ep;
}

struct StepReport {
  double mean_reward = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double entropy = 0.0;
  double mean_bpp = 0.0;
  double mean_distortion = 0.0;
};

// Single-step-return A2C update over a batch of episodes. The episode reward
// is the value target; advantage = reward - V(s) with V from the rollout.
// Per-CTU terms are averaged within an episode before batch averaging.
inline StepReport a2c_step(PolicyNet& frame_net, PolicyNet& ctu_net,
                           const std::vector<Episode>& episodes, const TrainableMask& frame_mask,
                           const TrainableMask& ctu_mask, const TrainConfig& cfg) {
  if (episodes.empty()) throw Error("a2c_step needs a nonempty batch");
  zero_grads(frame_net);
  zero_grads(ctu_net);

  Workspace ws;
  StepReport rep;
  const double en = static_cast<double>(episodes.size());

  for (const Episode& ep : episodes) {
    const double target = ep.reward_value;
    rep.mean_reward += target / en;
    rep.mean_bpp += ep.stats.bpp / en;
    double mean_d = 0.0;
    for (double d : ep.distortions) mean_d += d;
    if (!ep.distortions.empty()) mean_d /= static_cast<double>(ep.distortions.size());
    rep.mean_distortion += mean_d / en;

    if (ep.frame_decision) {
      const Decision& d = *ep.frame_decision;
      const double adv = target - d.act.value;
      const LossParts parts =
          detail::backward_accumulate(frame_net, d.state, d.label, d.act.action, adv, target,
                                      cfg.entropy_coef, 1.0 / en, frame_mask.fe_on, ws);
      rep.actor_loss += parts.policy / en;
      rep.critic_loss += parts.value / en;
      rep.entropy += parts.entropy / en;
    }
    if (!ep.ctu_decisions.empty()) {
      const double cn = static_cast<double>(ep.ctu_decisions.size());
      double a = 0.0, c = 0.0, h = 0.0;
      for (const Decision& d : ep.ctu_decisions) {
        const double adv = target - d.act.value;
        const LossParts parts =
            detail::backward_accumulate(ctu_net, d.state, d.label, d.act.action, adv, target,
                                        cfg.entropy_coef, 1.0 / (en * cn), ctu_mask.fe_on, ws);
        a += parts.policy / cn;
        c += parts.value / cn;
        h += parts.entropy / cn;
      }
      rep.actor_loss += a / en;
      rep.critic_loss += c / en;
      rep.entropy += h / en;
    }
  }

  apply_grad_mask(frame_net, frame_mask);
  apply_grad_mask(ctu_net, ctu_mask);
  sgd_step(frame_net, frame_mask, cfg.lr_frame);
  sgd_step(ctu_net, ctu_mask, cfg.lr_ctu);
  return rep;
}

struct TrainLogRow {
  int iteration = 0;
  StepReport report;
  double val_reward = std::numeric_limits<double>::quiet_NaN();
};

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows,
                            bool with_val = false) {
  std::string csv = "iteration,mean_reward,actor_loss,critic_loss,entropy,mean_bpp,mean_distortion";
  if (with_val) csv += ",val_reward";
  csv += "\n";
  for (const TrainLogRow& r : rows) {
    csv += std::to_string(r.iteration) + "," + fmt_double(r.report.mean_reward) + "," +
           fmt_double(r.report.actor_loss) + "," + fmt_double(r.report.critic_loss) + "," +
           fmt_double(r.report.entropy) + "," + fmt_double(r.report.mean_bpp) + "," +
           fmt_double(r.report.mean_distortion);
    if (with_val) csv += "," + (std::isnan(r.val_reward) ? std::string() : fmt_double(r.val_reward));
    csv += "\n";
  }
  write_text_file(path, csv);
}

// Mean aggregate bpp of the corpus under the QP-22 GOP schedule with flat
// CTU offsets; the reward's rate normalizer.
inline double reference_bpp(const std::vector<PreparedSequence>& corpus) {
  if (corpus.empty()) throw Error("reference_bpp needs a nonempty corpus");
  double sum = 0.0;
  for (const PreparedSequence& p : corpus) {
    const auto enc = encode_sequence(p.seq, frame_qp_schedule(22, p.seq.n_frames()));
    sum += enc.aggregate.bpp;
  }
  return sum / static_cast<double>(corpus.size());
}

inline double greedy_mean_reward(const PolicyNet& frame_net, const PolicyNet& ctu_net,
                                 const std::vector<const PreparedSequence*>& seqs,
                                 const std::vector<double>& lambdas, double bpp_norm) {
  if (seqs.empty() || lambdas.empty()) throw Error("greedy evaluation needs sequences and lambdas");
  Rng rng(0);  // unused in greedy mode
  double sum = 0.0;
  for (const PreparedSequence* p : seqs)
    for (double lam : lambdas) {
      const Episode ep = run_episode(*p, frame_net, ctu_net, {lam, bpp_norm}, RolloutMode::Greedy,
                                     rng);
      sum += ep.reward_value;
    }
  return sum / (static_cast<double>(seqs.size()) * static_cast<double>(lambdas.size()));
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
};

// Trains both agents from scratch; lambda is drawn per episode from the
// sweep set so a single policy serves the whole rate range.
inline PretrainResult pretrain(const std::vector<PreparedSequence>& corpus, const TrainConfig& cfg,
                               const std::vector<double>& lambda_set) {
  validate_train_config(cfg);
  if (corpus.size() < 20)
    throw Error("pretraining needs at least 20 sequences, got " + std::to_string(corpus.size()));
  if (lambda_set.empty()) throw Error("lambda sweep set must be nonempty");
  for (double l : lambda_set)
    if (l < 0.0 || l > 100.0) throw Error("lambda must lie in [0,100]");

  PretrainResult out;
  Checkpoint& ck = out.checkpoint;
  ck.seed = cfg.seed;
  ck.lambda_set = lambda_set;
  ck.bpp_norm = reference_bpp(corpus);
  ck.frame_net = create_policy(frame_agent_config(hash_combine(cfg.seed, 0xF1)));
  ck.ctu_net = create_policy(ctu_agent_config(hash_combine(cfg.seed, 0xC1)));

  const std::set<Group> all = {Group::FE, Group::FC, Group::ACTOR, Group::CRITIC};
  const TrainableMask frame_mask = trainable_mask(ck.frame_net, all);
  const TrainableMask ctu_mask = trainable_mask(ck.ctu_net, all);

  Rng rng(hash_combine(cfg.seed, 0x401));
  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<Episode> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const PreparedSequence& p = corpus[static_cast<size_t>(rng.uniform_int(
          static_cast<int>(corpus.size())))];
      const double lam = lambda_set[static_cast<size_t>(rng.uniform_int(
          static_cast<int>(lambda_set.size())))];
      batch.push_back(run_episode(p, ck.frame_net, ck.ctu_net, {lam, ck.bpp_norm},
                                  RolloutMode::Sample, rng));
    }
    const StepReport rep = a2c_step(ck.frame_net, ck.ctu_net, batch, frame_mask, ctu_mask, cfg);
    out.log.push_back({it, rep, std::numeric_limits<double>::quiet_NaN()});
  }
  return out;
}

}  // namespace smc
