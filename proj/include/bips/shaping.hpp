#pragma once

// Training objectives: exact KL over option slots, verifiable reward,
// group-relative advantages, the clipped GRPO surrogate with reference KL,
// the gated consistency constraint, the separation constraint, and their
// stage compositions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bips/autodiff.hpp"
#include "bips/config.hpp"
#include "bips/errors.hpp"
#include "bips/policy.hpp"

namespace bips {

struct TrainConfig {
  double alpha = 0.01;    // consistency coefficient
  double beta = 0.02;     // separation coefficient
  double c_cons = 1.0;    // consistency clip
  double c_sep = 0.2;     // separation clip
  double epsilon = 0.2;   // surrogate ratio clip
  double gamma = 0.01;    // reference-KL coefficient
  int group_size = 8;
  double temperature = 0.85;
  double lr = 1e-6;
  double weight_decay = 0.01;
  int batch = 32;
  int stage1_epochs = 5;
  int stage2_epochs = 3;
  int hidden = 64;
  int pooled = 16;
  std::string init = "uniform";  // or "zero"
  // Desk-scale corpus settings used when the trainer generates its own data.
  int train_items = 500;
  int heldout_items = 200;
  double pres_ratio = 0.54;
  double mask_fraction = 0.6;
  int mask_patch = 8;

  void check() const {
    if (alpha < 0 || beta < 0 || gamma < 0 || epsilon < 0)
      throw ConfigError("coefficients must be non-negative");
    if (!(c_cons > 0) || !(c_sep > 0)) throw ConfigError("clip thresholds must be positive");
    if (group_size < 1) throw ConfigError("group_size must be positive");
    if (!(temperature > 0)) throw ConfigError("temperature must be positive");
    if (batch < 1) throw ConfigError("batch must be positive");
    if (stage1_epochs < 1 || stage2_epochs < 1) throw ConfigError("epochs must be >= 1");
    if (hidden < 1) throw ConfigError("hidden must be positive");
    if (init != "uniform" && init != "zero") throw ConfigError("init must be uniform or zero");
    if (train_items < 1 || heldout_items < 1) throw ConfigError("corpus sizes must be positive");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.weight_decay = weight_decay;
    return a;
  }

  static TrainConfig from_map(const KeyValueMap& kv) {
    TrainConfig c;
    ConfigReader r(kv);
    r.get("alpha", c.alpha);
    r.get("beta", c.beta);
    r.get("c_cons", c.c_cons);
    r.get("c_sep", c.c_sep);
    r.get("epsilon", c.epsilon);
    r.get("gamma", c.gamma);
    r.get("group_size", c.group_size);
    r.get("temperature", c.temperature);
    r.get("lr", c.lr);
    r.get("weight_decay", c.weight_decay);
    r.get("batch", c.batch);
    r.get("stage1_epochs", c.stage1_epochs);
    r.get("stage2_epochs", c.stage2_epochs);
    r.get("hidden", c.hidden);
    r.get("pooled", c.pooled);
    r.get("init", c.init);
    r.get("train_items", c.train_items);
    r.get("heldout_items", c.heldout_items);
    r.get("pres_ratio", c.pres_ratio);
    r.get("mask_fraction", c.mask_fraction);
    r.get("mask_patch", c.mask_patch);
    r.finish();
    c.check();
    return c;
  }

  // Canonical text; from_map(parse_key_values(to_text())) round-trips.
  std::string to_text() const {
    std::string out;
    auto num = [&](const char* k, double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%.17g\n", k, v);
      out += buf;
    };
    auto integer = [&](const char* k, long long v) {
      out += std::string(k) + "=" + std::to_string(v) + "\n";
    };
    num("alpha", alpha);
    num("beta", beta);
    num("c_cons", c_cons);
    num("c_sep", c_sep);
    num("epsilon", epsilon);
    num("gamma", gamma);
    integer("group_size", group_size);
    num("temperature", temperature);
    num("lr", lr);
    num("weight_decay", weight_decay);
    integer("batch", batch);
    integer("stage1_epochs", stage1_epochs);
    integer("stage2_epochs", stage2_epochs);
    integer("hidden", hidden);
    integer("pooled", pooled);
    out += "init=" + init + "\n";
    integer("train_items", train_items);
    integer("heldout_items", heldout_items);
    num("pres_ratio", pres_ratio);
    num("mask_fraction", mask_fraction);
    integer("mask_patch", mask_patch);
    return out;
  }

  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------

// KL(p || q) = sum_i p_i (ln p_i - ln q_i) over the option slots.
inline double kl_divergence(const AnswerDistribution& p, const AnswerDistribution& q) {
  double kl = 0.0;
  for (int i = 0; i < kNumOptions; ++i) {
    if (p.probs[i] == 0.0) continue;
    if (q.probs[i] == 0.0 || !std::isfinite(q.logprobs[i]))
      throw DomainError("KL undefined: q has no mass where p does");
    kl += p.probs[i] * (p.logprobs[i] - q.logprobs[i]);
  }
  return std::max(kl, 0.0);
}

// Differentiable KL from log-probability vectors.
inline ad::Var kl_divergence(ad::Tape& t, ad::Var logp, ad::Var logq) {
  return t.dot(t.exp(logp), t.sub(logp, logq));
}

struct Reward {
  bool format_ok = false;
  bool correct = false;
  double value = 0.0;
};

// 0.1 for a well-formed answer plus 0.9 for the correct one. An option index
// outside the live slots is malformed and earns nothing.
inline Reward compute_reward(int option_index, int answer_index,
                             int live_options = kNumOptions) {
  Reward r;
  r.format_ok = option_index >= 0 && option_index < live_options;
  r.correct = r.format_ok && option_index == answer_index;
  r.value = 0.1 * (r.format_ok ? 1.0 : 0.0) + 0.9 * (r.correct ? 1.0 : 0.0);
  return r;
}

// (r - mean) / (population std + 1e-8); all zeros when the group has no
// reward variance.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw GroupTooSmall("advantages need at least 2 rollouts");
  std::vector<double> adv(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return adv;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    adv[i] = (rewards[i] - mean) / (sd + 1e-8);
  return adv;
}

struct Rollout {
  int option = 0;
  double old_logprob = 0.0;
  Reward reward;
};

struct RolloutGroup {
  std::string item_id;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;
};

// Fills rewards and advantages for sampled rollouts.
inline void score_group(RolloutGroup& g, int answer_index) {
  std::vector<double> rewards;
  for (auto& r : g.rollouts) {
    r.reward = compute_reward(r.option, answer_index);
    rewards.push_back(r.reward.value);
  }
  g.advantages = rewards.size() >= 2 ? group_advantages(rewards)
                                     : std::vector<double>(rewards.size(), 0.0);
}

// ---------------------------------------------------------------------------

struct GrpoFragment {
  ad::Var loss;
  double kl_to_ref = 0.0;
  double clip_fraction = 0.0;
};

// -mean_j min(r_j A_j, clip(r_j, 1-eps, 1+eps) A_j) + gamma KL(pi_theta || pi_ref)
// with r_j = exp(logprob_theta(a_j) - old_logprob_j). `logp` is the
// differentiable policy log-distribution on the original view and
// `ref_logp` the reference policy's on the same input.
inline GrpoFragment grpo_loss(ad::Tape& t, ad::Var logp, const RolloutGroup& g,
                              ad::Var ref_logp, const TrainConfig& cfg) {
  if (g.rollouts.empty() || g.advantages.size() != g.rollouts.size())
    throw DataError("rollout group without advantages");
  std::vector<ad::Var> terms;
  std::size_t clipped = 0;
  for (std::size_t j = 0; j < g.rollouts.size(); ++j) {
    const auto& r = g.rollouts[j];
    const auto ratio =
        t.exp(t.sub(t.pick(logp, static_cast<std::size_t>(r.option)),
                    t.constant(r.old_logprob)));
    const double rv = t.scalar(ratio);
    if (rv < 1.0 - cfg.epsilon || rv > 1.0 + cfg.epsilon) ++clipped;
    const auto adv = t.constant(g.advantages[j]);
    const auto unclipped = t.mul(ratio, adv);
    const auto clipped_term =
        t.mul(t.clip(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon), adv);
    terms.push_back(t.minimum(unclipped, clipped_term));
  }
  const auto surrogate = t.mean(t.stack(terms));
  const auto kl_ref = kl_divergence(t, logp, t.stop_gradient(ref_logp));
  GrpoFragment f;
  f.loss = t.add(t.scale(surrogate, -1.0), t.scale(kl_ref, cfg.gamma));
  f.kl_to_ref = t.scalar(kl_ref);
  f.clip_fraction = static_cast<double>(clipped) / static_cast<double>(g.rollouts.size());
  return f;
}

// Stop-gradient target distribution computed with the current parameters.
inline ad::Var target_logprobs(ad::Tape& t, const ParamVars& pv, const FeatureVector& f,
                               double temperature) {
  return t.stop_gradient(policy_logprobs(t, pv, f, temperature));
}

// Per-rollout consistency term: 0 unless the rollout was correct and a
// preserving view exists, else min(c_cons, KL(pi(.|I) || sg[pi(.|I_pres)])).
inline ad::Var consistency_loss(ad::Tape& t, ad::Var logp,
                                std::optional<ad::Var> pres_target,
                                bool rollout_correct, const TrainConfig& cfg) {
  if (!rollout_correct || !pres_target) return t.constant(0.0);
  return t.min_const(kl_divergence(t, logp, t.stop_gradient(*pres_target)), cfg.c_cons);
}

// min(c_sep, KL(pi(.|I) || sg[pi(.|I_abl)])); no correctness gate.
inline ad::Var separation_term(ad::Tape& t, ad::Var logp, ad::Var abl_target,
                               const TrainConfig& cfg) {
  return t.min_const(kl_divergence(t, logp, t.stop_gradient(abl_target)), cfg.c_sep);
}

// ---------------------------------------------------------------------------

enum class Stage { stage1, stage2, joint };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
    case Stage::joint: return "joint";
  }
  return "stage1";
}

inline bool uses_consistency(Stage s) { return s != Stage::stage2; }
inline bool uses_separation(Stage s) { return s != Stage::stage1; }

struct LossReport {
  double l_grpo = 0.0;
  double l_cons = 0.0;
  double l_sep = 0.0;
  double l_total = 0.0;
  double kl_to_ref = 0.0;
  double kl_to_pres = 0.0;
  double kl_to_abl = 0.0;
  double clip_fraction = 0.0;
  Stage stage = Stage::stage1;
};

struct Fragments {
  std::optional<double> l_grpo;
  std::optional<double> l_cons;
  std::optional<double> l_sep;
};

// stage1: grpo + alpha cons; stage2: grpo - beta sep; joint: both.
inline LossReport stage_objective(Stage stage, const Fragments& f, const TrainConfig& cfg) {
  if (!f.l_grpo) throw MissingFragment("stage objective needs l_grpo");
  if (uses_consistency(stage) && !f.l_cons)
    throw MissingFragment(std::string(to_string(stage)) + " needs l_cons");
  if (uses_separation(stage) && !f.l_sep)
    throw MissingFragment(std::string(to_string(stage)) + " needs l_sep");
  LossReport r;
  r.stage = stage;
  r.l_grpo = *f.l_grpo;
  r.l_total = r.l_grpo;
  if (uses_consistency(stage)) {
    r.l_cons = *f.l_cons;
    r.l_total += cfg.alpha * r.l_cons;
  }
  if (uses_separation(stage)) {
    r.l_sep = *f.l_sep;
    r.l_total -= cfg.beta * r.l_sep;
  }
  return r;
}

// Same composition on the tape.
inline ad::Var stage_objective(ad::Tape& t, Stage stage, ad::Var grpo,
                               std::optional<ad::Var> cons, std::optional<ad::Var> sep,
                               const TrainConfig& cfg) {
  auto total = grpo;
  if (uses_consistency(stage)) {
    if (!cons) throw MissingFragment(std::string(to_string(stage)) + " needs l_cons");
    total = t.add(total, t.scale(*cons, cfg.alpha));
  }
  if (uses_separation(stage)) {
    if (!sep) throw MissingFragment(std::string(to_string(stage)) + " needs l_sep");
    total = t.sub(total, t.scale(*sep, cfg.beta));
  }
  return total;
}

}  // namespace bips
