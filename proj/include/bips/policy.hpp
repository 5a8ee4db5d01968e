#pragma once

// The answer policy: features from (image, question), a tanh MLP producing
// one logit per option slot, temperature softmax, sampling, gradients and
// the AdamW optimizer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bips/autodiff.hpp"
#include "bips/chart.hpp"
#include "bips/errors.hpp"
#include "bips/oracle.hpp"
#include "bips/render.hpp"
#include "bips/rng.hpp"

namespace bips {

// Width of the encoded question-parameter segment.
inline constexpr int kParamWidth = 10;

struct FeatureConfig {
  int image_width = 64;
  int image_height = 64;
  // Side of the average-pooled pixel block; equal to the image side for no
  // pooling. Must divide both image dimensions.
  int pooled = 16;

  std::size_t image_segment() const {
    return static_cast<std::size_t>(pooled) * pooled;
  }
  std::size_t dim() const { return image_segment() + kNumTemplates + kParamWidth; }
};

// [pixel block | template one-hot | parameter encoding]
struct FeatureVector {
  std::vector<double> values;
  std::size_t image_size = 0;
  bool operator==(const FeatureVector&) const = default;
};

namespace detail {

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

inline double to_unit(const Rational& v, const Range& r) {
  return clamp_unit(2.0 * ((v - r.lo) / (r.hi - r.lo)).to_double() - 1.0);
}

// Ordinal of a series over the whole chart, scaled into (0, 1].
inline double series_code(const ChartSpec& chart, std::string_view id) {
  int ordinal = 0;
  for (const auto& p : chart.panels)
    for (const auto& s : p.series) {
      if (s.id == id) return std::min(1.0, (ordinal + 1) / 16.0);
      ++ordinal;
    }
  return 0.0;
}

inline double panel_code(const ChartSpec& chart, std::string_view id) {
  for (std::size_t i = 0; i < chart.panels.size(); ++i)
    if (chart.panels[i].id == id) return std::min(1.0, (i + 1) / 8.0);
  return 0.0;
}

}  // namespace detail

// Fixed-width encoding of the question parameters and its four options.
// Slots 0-3: options; 4: x; 5-6: referenced series; 7-8: referenced panels;
// 9: zero padding.
inline std::array<double, kParamWidth> encode_question(const ChartSpec& chart,
                                                       const Question& q) {
  std::array<double, kParamWidth> e{};
  const Panel* panel = nullptr;
  if (!q.params.series.empty()) {
    auto [s, pi] = chart.find_series(q.params.series[0]);
    if (s) panel = &chart.panels[pi];
  } else if (!q.params.panels.empty()) {
    panel = chart.find_panel(q.params.panels[0]);
  }
  for (int k = 0; k < kNumOptions; ++k) {
    const auto& o = q.options[k];
    double code = 0.0;
    switch (q.tmpl) {
      case Template::value_lookup:
      case Template::series_max:
        if (auto v = Rational::parse(o); v && panel)
          code = detail::to_unit(*v, panel->yrange);
        break;
      case Template::panel_compare:
        if (auto v = Rational::parse(o); v && panel)
          code = detail::clamp_unit(
              (*v / (panel->yrange.hi - panel->yrange.lo)).to_double());
        break;
      case Template::count_crossings:
        if (auto v = Rational::parse(o))
          code = detail::clamp_unit(2.0 * std::min(v->to_double(), 8.0) / 8.0 - 1.0);
        break;
      case Template::trend_sign: {
        static constexpr std::array<double, 4> kCodes = {1.0, -1.0, 0.0, 0.5};
        for (std::size_t i = 0; i < kTrendLabels.size(); ++i)
          if (o == kTrendLabels[i]) code = kCodes[i];
        break;
      }
      case Template::compare_at_x:
        code = detail::series_code(chart, o);
        break;
    }
    e[k] = code;
  }
  if (q.params.x && panel) e[4] = detail::to_unit(*q.params.x, panel->xrange);
  for (std::size_t i = 0; i < 2 && i < q.params.series.size(); ++i)
    e[5 + i] = detail::series_code(chart, q.params.series[i]);
  for (std::size_t i = 0; i < 2 && i < q.params.panels.size(); ++i)
    e[7 + i] = detail::panel_code(chart, q.params.panels[i]);
  return e;
}

// `chart` is the source chart of the question; every view of an item uses
// the same source so that only the pixel block differs between views.
inline FeatureVector featurize(const Image& img, const Question& q,
                               const ChartSpec& chart, const FeatureConfig& cfg) {
  if (img.width != cfg.image_width || img.height != cfg.image_height)
    throw ShapeError("image dimensions do not match the feature config");
  if (cfg.pooled < 1 || cfg.image_width % cfg.pooled != 0 ||
      cfg.image_height % cfg.pooled != 0)
    throw ShapeError("pooled size must divide the image dimensions");
  const int bw = cfg.image_width / cfg.pooled, bh = cfg.image_height / cfg.pooled;
  FeatureVector f;
  f.image_size = cfg.image_segment();
  f.values.reserve(cfg.dim());
  for (int py = 0; py < cfg.pooled; ++py)
    for (int px = 0; px < cfg.pooled; ++px) {
      int acc = 0;
      for (int y = py * bh; y < (py + 1) * bh; ++y)
        for (int x = px * bw; x < (px + 1) * bw; ++x) acc += img.at(x, y);
      f.values.push_back(1.0 - static_cast<double>(acc) / (255.0 * bw * bh));  // ink density
    }
  for (int t = 0; t < kNumTemplates; ++t)
    f.values.push_back(static_cast<int>(q.tmpl) == t ? 1.0 : 0.0);
  for (double v : encode_question(chart, q)) f.values.push_back(v);
  return f;
}

// ---------------------------------------------------------------------------

// The policy scores each option with one shared tanh MLP, so option slots are
// interchangeable up to a per-slot bias. Scorer input for option k is the
// feature vector with the four option codes removed, plus (code_k,
// code_k - mean code).
inline constexpr std::size_t kOptionInputs = 2;

// Flat parameter block:
//   w1 (hidden x shared) | wo (hidden x 2) | b1 (hidden) | w2 (hidden) | b2 (4)
// with shared = input_dim - 4.
struct PolicyParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::vector<double> data;

  PolicyParams() = default;
  PolicyParams(std::size_t in, std::size_t h)
      : input_dim(in), hidden(h), data(count(in, h), 0.0) {}

  static std::size_t shared_dim(std::size_t in) {
    if (in < static_cast<std::size_t>(kParamWidth))
      throw ShapeError("input dimension smaller than the parameter encoding");
    return in - kNumOptions;
  }
  static std::size_t count(std::size_t in, std::size_t h) {
    return h * shared_dim(in) + h * kOptionInputs + h + h + kNumOptions;
  }

  std::span<double> w1() { return {data.data(), hidden * shared_dim(input_dim)}; }
  std::span<double> wo() { return {w1().data() + w1().size(), hidden * kOptionInputs}; }
  std::span<double> b1() { return {wo().data() + wo().size(), hidden}; }
  std::span<double> w2() { return {b1().data() + hidden, hidden}; }
  std::span<double> b2() { return {w2().data() + hidden, kNumOptions}; }
  std::span<const double> w1() const { return const_cast<PolicyParams*>(this)->w1(); }
  std::span<const double> wo() const { return const_cast<PolicyParams*>(this)->wo(); }
  std::span<const double> b1() const { return const_cast<PolicyParams*>(this)->b1(); }
  std::span<const double> w2() const { return const_cast<PolicyParams*>(this)->w2(); }
  std::span<const double> b2() const { return const_cast<PolicyParams*>(this)->b2(); }

  bool operator==(const PolicyParams&) const = default;
};

// Splits a feature vector into the shared scorer input and the per-option
// inputs. The option codes sit at the start of the trailing parameter block.
struct ScorerInput {
  std::vector<double> shared;
  std::array<std::vector<double>, kNumOptions> option;
};

inline ScorerInput scorer_input(std::span<const double> x) {
  if (x.size() < static_cast<std::size_t>(kParamWidth))
    throw ShapeError("feature vector shorter than the parameter encoding");
  const std::size_t at = x.size() - kParamWidth;
  ScorerInput in;
  in.shared.assign(x.begin(), x.begin() + at);
  in.shared.insert(in.shared.end(), x.begin() + at + kNumOptions, x.end());
  double mean = 0.0;
  for (int k = 0; k < kNumOptions; ++k) mean += x[at + k];
  mean /= kNumOptions;
  for (int k = 0; k < kNumOptions; ++k) in.option[k] = {x[at + k], x[at + k] - mean};
  return in;
}

using GradientVector = std::vector<double>;

// Symmetric uniform initialization scaled by fan-in.
inline PolicyParams init_params(std::size_t input_dim, std::size_t hidden,
                                std::uint64_t seed) {
  PolicyParams p(input_dim, hidden);
  Rng rng(seed);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& v : p.w1()) v = rng.uniform(-a1, a1);
  for (auto& v : p.wo()) v = rng.uniform(-a1, a1);
  for (auto& v : p.b1()) v = rng.uniform(-a1, a1);
  for (auto& v : p.w2()) v = rng.uniform(-a2, a2);
  for (auto& v : p.b2()) v = rng.uniform(-a2, a2);
  return p;
}

struct AnswerDistribution {
  std::array<double, kNumOptions> probs{};
  std::array<double, kNumOptions> logprobs{};
  double temperature = 1.0;
};

inline AnswerDistribution distribution_from_logits(
    std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  AnswerDistribution d;
  d.temperature = temperature;
  double m = -INFINITY;
  for (double v : logits) m = std::max(m, v / temperature);
  double s = 0.0;
  for (double v : logits) s += std::exp(v / temperature - m);
  const double lse = m + std::log(s);
  for (int i = 0; i < kNumOptions; ++i) {
    d.logprobs[i] = logits[i] / temperature - lse;
    d.probs[i] = std::exp(d.logprobs[i]);
  }
  for (double v : d.logprobs)
    if (!std::isfinite(v)) throw NonFiniteError("non-finite answer distribution");
  return d;
}

// Raw option logits of the MLP.
inline std::array<double, kNumOptions> logits(const PolicyParams& p,
                                              std::span<const double> x) {
  if (x.size() != p.input_dim) throw ShapeError("feature dimension mismatch");
  const auto in = scorer_input(x);
  const auto w1 = p.w1(), wo = p.wo(), b1 = p.b1(), w2 = p.w2(), b2 = p.b2();
  const std::size_t cols = in.shared.size();
  std::vector<double> base(p.hidden);
  for (std::size_t r = 0; r < p.hidden; ++r) {
    double acc = b1[r];
    const double* wr = &w1[r * cols];
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * in.shared[c];
    base[r] = acc;
  }
  std::array<double, kNumOptions> z{};
  for (int k = 0; k < kNumOptions; ++k) {
    double acc = 0.0;
    for (std::size_t r = 0; r < p.hidden; ++r) {
      double o = 0.0;
      for (std::size_t c = 0; c < kOptionInputs; ++c) o += wo[r * kOptionInputs + c] * in.option[k][c];
      acc += w2[r] * std::tanh(base[r] + o);
    }
    z[k] = acc + b2[k];
  }
  for (double v : z)
    if (!std::isfinite(v)) throw NonFiniteError("non-finite logits");
  return z;
}

inline AnswerDistribution forward(const PolicyParams& p, const FeatureVector& f,
                                  double temperature) {
  const auto z = logits(p, f.values);
  return distribution_from_logits(z, temperature);
}

// Inverse-CDF draw. Returns the option index and its log-probability.
inline std::pair<int, double> sample_answer(const AnswerDistribution& d, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (int i = 0; i < kNumOptions; ++i) {
    if (d.probs[i] > 0.0) last_positive = i;
    acc += d.probs[i];
    if (u < acc && d.probs[i] > 0.0) return {i, d.logprobs[i]};
  }
  return {last_positive, d.logprobs[last_positive]};
}

// Index of the most probable option; ties go to the lowest index.
inline int argmax(const AnswerDistribution& d) {
  int best = 0;
  for (int i = 1; i < kNumOptions; ++i)
    if (d.probs[i] > d.probs[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Differentiable forward pass.

struct ParamVars {
  ad::Var w1, wo, b1, w2, b2;
};

// Places the parameter slices on the tape, trainable or frozen.
inline ParamVars place(ad::Tape& tape, const PolicyParams& p, bool trainable) {
  auto put = [&](std::span<const double> s) {
    std::vector<double> v(s.begin(), s.end());
    return trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v));
  };
  return {put(p.w1()), put(p.wo()), put(p.b1()), put(p.w2()), put(p.b2())};
}

inline ad::Var policy_logprobs(ad::Tape& tape, const ParamVars& pv,
                               const FeatureVector& f, double temperature) {
  const auto in = scorer_input(f.values);
  const auto base = tape.affine(pv.w1, tape.constant(in.shared), pv.b1);
  const auto zero = tape.constant(std::vector<double>(tape.size(pv.b1), 0.0));
  std::vector<ad::Var> scores;
  for (const auto& o : in.option) {
    const auto h = tape.tanh(tape.add(base, tape.affine(pv.wo, tape.constant(o), zero)));
    scores.push_back(tape.dot(pv.w2, h));
  }
  return tape.log_softmax(tape.add(tape.stack(scores), pv.b2), temperature);
}

// Gradient of every slice, laid out like PolicyParams::data.
inline GradientVector gather_gradient(const ad::Tape& tape, const ParamVars& pv) {
  GradientVector g;
  for (auto v : {pv.w1, pv.wo, pv.b1, pv.w2, pv.b2}) {
    const auto& part = tape.grad(v);
    g.insert(g.end(), part.begin(), part.end());
  }
  for (double v : g)
    if (!std::isfinite(v)) throw NonFiniteError("non-finite gradient");
  return g;
}

// Builds a scalar loss on a fresh tape and returns (value, gradient).
inline std::pair<double, GradientVector> value_and_grad(
    const PolicyParams& p,
    const std::function<ad::Var(ad::Tape&, const ParamVars&)>& loss) {
  ad::Tape tape;
  const auto pv = place(tape, p, true);
  const auto root = loss(tape, pv);
  tape.backward(root);
  return {tape.scalar(root), gather_gradient(tape, pv)};
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  bool operator==(const AdamState&) const = default;
};

// AdamW with bias correction and decoupled weight decay.
inline void adamw_update(PolicyParams& params, std::span<const double> grads,
                         AdamState& state, const AdamConfig& cfg) {
  const std::size_t n = params.data.size();
  if (grads.size() != n) throw ShapeError("gradient shape does not match parameters");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n)
    throw ShapeError("optimizer state shape does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    double& w = params.data[i];
    w -= cfg.lr * cfg.weight_decay * w;
    w -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// ---------------------------------------------------------------------------

// Anything that maps (image, question) to a distribution over option slots.
class AnswerPolicy {
 public:
  virtual ~AnswerPolicy() = default;
  virtual AnswerDistribution answer(const Image& img, const Question& q,
                                    const ChartSpec& chart,
                                    double temperature) const = 0;
};

class MlpPolicy : public AnswerPolicy {
 public:
  MlpPolicy(PolicyParams params, FeatureConfig features)
      : params_(std::move(params)), features_(features) {
    if (params_.input_dim != features_.dim())
      throw ShapeError("policy input dimension does not match features");
  }

  AnswerDistribution answer(const Image& img, const Question& q,
                            const ChartSpec& chart,
                            double temperature) const override {
    return forward(params_, featurize(img, q, chart, features_), temperature);
  }

  const PolicyParams& params() const { return params_; }
  const FeatureConfig& features() const { return features_; }

 private:
  PolicyParams params_;
  FeatureConfig features_;
};

}  // namespace bips
