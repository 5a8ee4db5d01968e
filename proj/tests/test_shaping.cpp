#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bips/shaping.hpp"
#include "objective_fixture.hpp"

using namespace bips;

namespace {

AnswerDistribution dist(std::array<double, 4> p) {
  AnswerDistribution d;
  d.probs = p;
  for (int i = 0; i < 4; ++i) d.logprobs[i] = std::log(p[i]);
  return d;
}

std::vector<double> logs(std::array<double, 4> p) {
  std::vector<double> out;
  for (double v : p) out.push_back(std::log(v));
  return out;
}

RolloutGroup single(int option, double old_logprob, double advantage) {
  RolloutGroup g;
  g.rollouts.push_back({option, old_logprob, {}});
  g.advantages = {advantage};
  return g;
}

// Distribution q over 4 options with KL(p || q) hitting `target`: moves mass
// from slot 0 toward the rest by bisection on a mixing weight.
std::vector<double> q_with_kl(const std::vector<double>& logp, double target) {
  double lo = 0, hi = 1;
  std::vector<double> q(4);
  for (int it = 0; it < 200; ++it) {
    const double m = 0.5 * (lo + hi);
    std::array<double, 4> raw = {1 - m + 1e-9, m / 3 + 1e-9, m / 3 + 1e-9, m / 3 + 1e-9};
    double s = 0;
    for (double v : raw) s += v;
    for (int i = 0; i < 4; ++i) q[i] = std::log(raw[i] / s);
    const double kl = fixture::kl_values(logp, q);
    (kl < target ? lo : hi) = m;
  }
  return q;
}

}  // namespace

TEST(Kl, IdentityAsymmetryAndLimit) {
  const auto p = dist({0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  const auto q = dist({0.4, 0.3, 0.2, 0.1});
  const auto r = dist({0.7, 0.1, 0.1, 0.1});
  EXPECT_NE(kl_divergence(p, r), kl_divergence(r, p));
  EXPECT_GT(kl_divergence(p, q), 0.0);
  const double eps = 1e-12;
  const auto floored = dist({0.5 - eps, 0.5 - eps, eps, eps});
  EXPECT_NEAR(kl_divergence(floored, dist({0.25, 0.25, 0.25, 0.25})), std::log(2.0), 1e-9);
  AnswerDistribution hole = dist({0.5, 0.5, 1e-300, 1e-300});
  hole.probs[3] = 0.0;
  hole.logprobs[3] = -INFINITY;
  EXPECT_THROW(kl_divergence(dist({0.25, 0.25, 0.25, 0.25}), hole), DomainError);
  // tape version agrees
  ad::Tape t;
  const auto a = t.constant(logs({0.1, 0.2, 0.3, 0.4}));
  const auto b = t.constant(logs({0.4, 0.3, 0.2, 0.1}));
  EXPECT_NEAR(t.scalar(kl_divergence(t, a, b)), kl_divergence(p, q), 1e-15);
}

TEST(Reward, Table) {
  EXPECT_EQ(compute_reward(2, 2).value, 1.0);
  EXPECT_EQ(compute_reward(1, 2).value, 0.1);
  EXPECT_EQ(compute_reward(4, 2).value, 0.0);
  EXPECT_EQ(compute_reward(-1, 2).value, 0.0);
  EXPECT_TRUE(compute_reward(2, 2).correct);
  EXPECT_FALSE(compute_reward(1, 2).correct);
}

TEST(Advantages, HandCasesAndProperties) {
  const auto a = group_advantages(std::vector<double>{1, 1, 0, 0});
  const std::array<double, 4> want = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(a[i], want[i], 1e-6);
  for (double v : group_advantages(std::vector<double>{0.1, 0.1, 0.1})) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(group_advantages(std::vector<double>{1}), GroupTooSmall);
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> r(2 + g() % 10);
    for (auto& v : r) v = u(g) < 0.5 ? 1.0 : 0.1;
    const auto adv = group_advantages(r);
    double m = 0;
    for (double v : adv) m += v;
    ASSERT_NEAR(m / adv.size(), 0.0, 1e-9);
    // invariant to affine reward changes with positive scale
    std::vector<double> shifted;
    for (double v : r) shifted.push_back(3.0 * v + 5.0);
    const auto adv2 = group_advantages(shifted);
    for (std::size_t i = 0; i < r.size(); ++i) ASSERT_NEAR(adv[i], adv2[i], 1e-6);
  }
}

TEST(Surrogate, ClipCases) {
  TrainConfig cfg;
  cfg.gamma = 0;
  cfg.epsilon = 0.2;
  const auto lp = logs({0.4, 0.3, 0.2, 0.1});
  {
    ad::Tape t;
    const auto logp = t.constant(lp);
    const auto f = grpo_loss(t, logp, single(0, lp[0] - std::log(1.5), 1.0), logp, cfg);
    EXPECT_NEAR(t.scalar(f.loss), -1.2, 1e-12);
    EXPECT_EQ(f.clip_fraction, 1.0);
  }
  {
    ad::Tape t;
    const auto logp = t.constant(lp);
    const auto f = grpo_loss(t, logp, single(1, lp[1] - std::log(0.5), -1.0), logp, cfg);
    EXPECT_NEAR(t.scalar(f.loss), 0.8, 1e-12);
  }
  {
    // ratio 1 everywhere: surrogate is -mean(A) = 0
    ad::Tape t;
    const auto logp = t.constant(lp);
    RolloutGroup g;
    for (int j = 0; j < 8; ++j) g.rollouts.push_back({j % 4, lp[j % 4], {}});
    score_group(g, 1);
    EXPECT_NEAR(t.scalar(grpo_loss(t, logp, g, logp, cfg).loss), 0.0, 1e-12);
  }
}

TEST(Surrogate, ReferenceKlTerm) {
  TrainConfig cfg;
  cfg.gamma = 0.5;
  const auto lp = logs({0.4, 0.3, 0.2, 0.1});
  const auto rp = logs({0.25, 0.25, 0.25, 0.25});
  ad::Tape t;
  const auto f = grpo_loss(t, t.constant(lp), single(0, lp[0], 0.0), t.constant(rp), cfg);
  EXPECT_NEAR(t.scalar(f.loss), 0.5 * fixture::kl_values(lp, rp), 1e-15);
  EXPECT_NEAR(f.kl_to_ref, fixture::kl_values(lp, rp), 1e-15);
}

TEST(Consistency, GateClipAndIdentity) {
  TrainConfig cfg;
  const auto lp = logs({0.4, 0.3, 0.2, 0.1});
  ad::Tape t;
  const auto logp = t.variable(lp);
  const auto far = t.constant(q_with_kl(lp, 2.0));
  EXPECT_EQ(t.scalar(consistency_loss(t, logp, far, false, cfg)), 0.0);
  EXPECT_EQ(t.scalar(consistency_loss(t, logp, std::nullopt, true, cfg)), 0.0);
  const auto sat = consistency_loss(t, logp, far, true, cfg);
  EXPECT_EQ(t.scalar(sat), 1.0);
  t.backward(sat);
  for (double g : t.grad(logp)) EXPECT_EQ(g, 0.0);
  EXPECT_NEAR(t.scalar(consistency_loss(t, logp, t.constant(lp), true, cfg)), 0.0, 1e-15);
}

TEST(Separation, ClipAndActiveRegion) {
  TrainConfig cfg;
  const auto lp = logs({0.4, 0.3, 0.2, 0.1});
  {
    ad::Tape t;
    const auto logp = t.variable(lp);
    const auto s = separation_term(t, logp, t.constant(q_with_kl(lp, 0.5)), cfg);
    EXPECT_EQ(t.scalar(s), 0.2);
    t.backward(s);
    for (double g : t.grad(logp)) EXPECT_EQ(g, 0.0);
  }
  {
    ad::Tape t;
    const auto logp = t.variable(lp);
    const auto s = separation_term(t, logp, t.constant(q_with_kl(lp, 0.1)), cfg);
    EXPECT_NEAR(t.scalar(s), 0.1, 1e-9);
    t.backward(s);
    double norm = 0;
    for (double g : t.grad(logp)) norm += g * g;
    EXPECT_GT(norm, 0.0);
  }
  ad::Tape t;
  const auto logp = t.variable(lp);
  EXPECT_EQ(t.scalar(separation_term(t, logp, t.constant(lp), cfg)), 0.0);
}

TEST(StageObjective, Compositions) {
  TrainConfig cfg;
  Fragments f;
  f.l_grpo = 0.5;
  f.l_cons = 0.3;
  EXPECT_NEAR(stage_objective(Stage::stage1, f, cfg).l_total, 0.503, 1e-12);
  Fragments s2;
  s2.l_grpo = 0.5;
  s2.l_sep = 0.2;
  EXPECT_NEAR(stage_objective(Stage::stage2, s2, cfg).l_total, 0.496, 1e-12);
  EXPECT_THROW(stage_objective(Stage::stage1, s2, cfg), MissingFragment);
  EXPECT_THROW(stage_objective(Stage::stage2, f, cfg), MissingFragment);
  EXPECT_THROW(stage_objective(Stage::joint, f, cfg), MissingFragment);
  TrainConfig zero = cfg;
  zero.alpha = zero.beta = 0;
  Fragments all;
  all.l_grpo = 0.7;
  all.l_cons = 0.9;
  all.l_sep = 0.4;
  for (auto st : {Stage::stage1, Stage::stage2, Stage::joint})
    EXPECT_EQ(stage_objective(st, all, zero).l_total, 0.7);
  // stage isolation: the unused fragment is not reported
  EXPECT_EQ(stage_objective(Stage::stage1, all, cfg).l_sep, 0.0);
  EXPECT_EQ(stage_objective(Stage::stage2, all, cfg).l_cons, 0.0);
}

TEST(Gradients, MatchCentralDifferences) {
  using fixture::Objective;
  for (auto o : {Objective::grpo, Objective::cons, Objective::sep, Objective::stage1,
                 Objective::stage2, Objective::joint}) {
    int active = 0;
    for (std::uint64_t seed = 1; active < 20; ++seed) {
      ASSERT_LT(seed, 400u) << "too few instances with a live gradient for " << fixture::name(o);
      const auto in = fixture::random_instance(seed);
      const auto r = fixture::check_gradient(in, o);
      ASSERT_LT(r.rel_error, 1e-4) << fixture::name(o) << " seed " << seed;
      active += r.grad_norm > 0;
    }
  }
}

TEST(Gradients, LinearInCoefficients) {
  // d(stage1)/dθ = d(grpo)/dθ + α d(cons)/dθ on the same instance
  const auto in = fixture::random_instance(3);
  auto grad = [&](fixture::Objective o) {
    ad::Tape t;
    const auto pv = place(t, in.params, true);
    t.backward(fixture::build(t, pv, in, o));
    return gather_gradient(t, pv);
  };
  const auto g1 = grad(fixture::Objective::stage1), gg = grad(fixture::Objective::grpo),
             gc = grad(fixture::Objective::cons), g2 = grad(fixture::Objective::stage2),
             gs = grad(fixture::Objective::sep);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    ASSERT_NEAR(g1[i], gg[i] + in.cfg.alpha * gc[i], 1e-12);
    ASSERT_NEAR(g2[i], gg[i] - in.cfg.beta * gs[i], 1e-12);
  }
}

TEST(StopGradient, TargetBranchesReceiveNothing) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto in = fixture::random_instance(seed);
    ad::Tape t;
    const auto pv = place(t, in.params, true);
    const auto target_pv = place(t, in.params, true);  // separate copy feeding sg
    const auto logp = policy_logprobs(t, pv, in.orig, in.cfg.temperature);
    const auto pres = target_logprobs(t, target_pv, in.pres, in.cfg.temperature);
    const auto abl = target_logprobs(t, target_pv, in.abl, in.cfg.temperature);
    std::vector<ad::Var> cons;
    for (const auto& r : in.group.rollouts) cons.push_back(consistency_loss(t, logp, pres, r.reward.correct, in.cfg));
    const auto ref = policy_logprobs(t, place(t, in.ref, true), in.orig, in.cfg.temperature);
    const auto total =
        stage_objective(t, Stage::joint, grpo_loss(t, logp, in.group, ref, in.cfg).loss,
                        t.mean(t.stack(cons)), separation_term(t, logp, abl, in.cfg), in.cfg);
    t.backward(total);
    for (double g : gather_gradient(t, target_pv)) ASSERT_EQ(g, 0.0);
  }
}

TEST(Gating, IncorrectRolloutsContributeExactlyZero) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto in = fixture::random_instance(seed);
    ad::Tape t;
    const auto logp = t.variable(fixture::logprobs_at(in.params, in.orig, in.cfg.temperature));
    const auto pres = t.constant(in.pres_target);
    double wrong = 0;
    std::vector<ad::Var> wrong_terms;
    for (const auto& r : in.group.rollouts)
      if (!r.reward.correct) {
        const auto v = consistency_loss(t, logp, pres, false, in.cfg);
        wrong += t.scalar(v);
        wrong_terms.push_back(v);
      }
    ASSERT_EQ(wrong, 0.0);
    if (wrong_terms.empty()) continue;
    t.backward(t.sum(t.stack(wrong_terms)));
    for (double g : t.grad(logp)) ASSERT_EQ(g, 0.0);
  }
}
