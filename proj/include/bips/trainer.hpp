#pragma once

// Rollout collection, staged training, checkpoints, evaluation and the
// experiment drivers (curriculum modes and coefficient sweeps).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bips/autodiff.hpp"
#include "bips/errors.hpp"
#include "bips/policy.hpp"
#include "bips/render.hpp"
#include "bips/rng.hpp"
#include "bips/shaping.hpp"
#include "bips/viewgen.hpp"

namespace bips {

enum class Mode { bips, grpo_only, joint, reversed, random_mask };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::bips: return "bips";
    case Mode::grpo_only: return "grpo_only";
    case Mode::joint: return "joint";
    case Mode::reversed: return "reversed";
    case Mode::random_mask: return "random_mask";
  }
  return "bips";
}

inline Mode parse_mode(std::string_view s) {
  for (auto m : {Mode::bips, Mode::grpo_only, Mode::joint, Mode::reversed, Mode::random_mask})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

enum class DataSubset { pres_subset, full };

struct StageEntry {
  Stage stage;
  DataSubset data;
  int epochs;
};

using StagePlan = std::vector<StageEntry>;

inline StagePlan make_plan(Mode mode, const TrainConfig& cfg) {
  const StageEntry consistency{Stage::stage1, DataSubset::pres_subset, cfg.stage1_epochs};
  const StageEntry separation{Stage::stage2, DataSubset::full, cfg.stage2_epochs};
  switch (mode) {
    case Mode::joint:
      return {{Stage::joint, DataSubset::full, cfg.stage1_epochs + cfg.stage2_epochs}};
    case Mode::reversed:
      return {separation, consistency};
    default:
      return {consistency, separation};
  }
}

// grpo_only drops both constraint coefficients; other modes keep them.
inline TrainConfig effective_config(Mode mode, TrainConfig cfg) {
  if (mode == Mode::grpo_only) cfg.alpha = cfg.beta = 0.0;
  return cfg;
}

// ---------------------------------------------------------------------------
// Training data

struct TrainItem {
  std::string id;
  Template tmpl = Template::value_lookup;
  int answer_index = 0;
  FeatureVector original;
  std::optional<FeatureVector> pres;
  std::optional<FeatureVector> abl;
};

// Counts image reads per view while loading a dataset.
struct ViewAudit {
  std::size_t original = 0;
  std::size_t pres = 0;
  std::size_t abl = 0;
};

inline constexpr std::uint64_t kPresMaskTag = 0x9e5;
inline constexpr std::uint64_t kAblMaskTag = 0xab1;

// Loads features for every record. With `random_mask`, the counterpart views
// are 60%-patch-masked copies of the original image and the edited renders
// are never opened.
inline std::vector<TrainItem> load_items(const Manifest& m, const std::filesystem::path& dir,
                                         const FeatureConfig& fc, bool random_mask,
                                         const TrainConfig& cfg, ViewAudit* audit = nullptr) {
  ViewAudit local;
  ViewAudit& a = audit ? *audit : local;
  std::vector<TrainItem> items;
  items.reserve(m.records.size());
  for (const auto& r : m.records) {
    TrainItem it;
    it.id = r.id;
    it.tmpl = r.question.tmpl;
    it.answer_index = r.question.answer_index;
    const auto chart = parse_chart(read_text(dir / r.dsl_path));
    const auto img = read_pgm(dir / r.image);
    ++a.original;
    it.original = featurize(img, r.question, chart, fc);
    if (random_mask) {
      if (r.pres_image)
        it.pres = featurize(mask_patches(img, cfg.mask_fraction, cfg.mask_patch,
                                         derive_seed(r.seed, kPresMaskTag)),
                            r.question, chart, fc);
      it.abl = featurize(mask_patches(img, cfg.mask_fraction, cfg.mask_patch,
                                      derive_seed(r.seed, kAblMaskTag)),
                         r.question, chart, fc);
    } else {
      if (r.pres_image) {
        it.pres = featurize(read_pgm(dir / *r.pres_image), r.question, chart, fc);
        ++a.pres;
      }
      it.abl = featurize(read_pgm(dir / r.abl_image), r.question, chart, fc);
      ++a.abl;
    }
    items.push_back(std::move(it));
  }
  return items;
}

// ---------------------------------------------------------------------------
// State and checkpoints

struct TrainState {
  PolicyParams params;
  AdamState opt;
  PolicyParams ref;  // stage-entry snapshot
  std::uint64_t plan_index = 0;
  std::uint64_t batches_done = 0;  // within the current plan entry
  std::uint64_t global_step = 0;
  bool operator==(const TrainState&) const = default;
};

struct Checkpoint {
  TrainState state;
  TrainConfig cfg;
  Mode mode = Mode::bips;
  std::uint64_t seed = 0;
  bool operator==(const Checkpoint&) const = default;

  // Stage of the plan entry in progress (or the last one once finished).
  Stage stage() const {
    const auto plan = make_plan(mode, cfg);
    const auto i = std::min<std::uint64_t>(state.plan_index, plan.size() - 1);
    return plan[i].stage;
  }
};

inline constexpr char kCheckpointMagic[8] = {'B', 'I', 'P', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64s(std::string& out, const std::vector<double>& v) {
  for (double d : v) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : bytes_(b) {}
  std::uint64_t u(int width) {
    if (pos_ + width > bytes_.size()) throw FormatError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string raw(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("truncated checkpoint");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::size_t n) {
    std::vector<double> v(n);
    for (auto& d : v) d = std::bit_cast<double>(u(8));
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Layout (all integers little-endian, reals IEEE-754 binary64 little-endian):
//   char[8] "BIPSCKPT" | u32 version | u32 mode | u32 stage | u32 reserved
//   u64 input_dim | u64 hidden | u64 N | u64 seed | u64 global_step
//   u64 plan_index | u64 batches_done | u64 adam_step | u64 L | L bytes config
//   f64[N] params | f64[N] adam m | f64[N] adam v | f64[N] reference params
inline std::string encode_checkpoint(const Checkpoint& c) {
  const auto& s = c.state;
  const std::size_t n = s.params.data.size();
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(c.mode));
  detail::put_u32(out, static_cast<std::uint32_t>(c.stage()));
  detail::put_u32(out, 0);
  detail::put_u64(out, s.params.input_dim);
  detail::put_u64(out, s.params.hidden);
  detail::put_u64(out, n);
  detail::put_u64(out, c.seed);
  detail::put_u64(out, s.global_step);
  detail::put_u64(out, s.plan_index);
  detail::put_u64(out, s.batches_done);
  detail::put_u64(out, s.opt.step);
  const auto cfg = c.cfg.to_text();
  detail::put_u64(out, cfg.size());
  out += cfg;
  auto padded = [n](const std::vector<double>& v) {
    return v.empty() ? std::vector<double>(n, 0.0) : v;
  };
  detail::put_f64s(out, s.params.data);
  detail::put_f64s(out, padded(s.opt.m));
  detail::put_f64s(out, padded(s.opt.v));
  detail::put_f64s(out, padded(s.ref.data));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 8, std::string(kCheckpointMagic, 8)) != 0)
    throw FormatError("not a checkpoint file");
  detail::ByteReader r(bytes);
  r.raw(8);
  if (r.u(4) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint c;
  const auto mode = r.u(4);
  if (mode > static_cast<std::uint64_t>(Mode::random_mask))
    throw FormatError("bad mode in checkpoint");
  c.mode = static_cast<Mode>(mode);
  r.u(4);  // stage tag, derived from the plan on load
  r.u(4);
  const auto in = r.u(8), hidden = r.u(8), n = r.u(8);
  if (n != PolicyParams::count(in, hidden)) throw FormatError("checkpoint shape mismatch");
  c.seed = r.u(8);
  auto& s = c.state;
  s.global_step = r.u(8);
  s.plan_index = r.u(8);
  s.batches_done = r.u(8);
  s.opt.step = r.u(8);
  const auto len = r.u(8);
  c.cfg = TrainConfig::from_map(parse_key_values(r.raw(len)));
  s.params = PolicyParams(in, hidden);
  s.params.data = r.f64s(n);
  s.opt.m = r.f64s(n);
  s.opt.v = r.f64s(n);
  s.ref = PolicyParams(in, hidden);
  s.ref.data = r.f64s(n);
  if (s.opt.step == 0) s.opt.m.clear(), s.opt.v.clear();
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_text(path));
}

// ---------------------------------------------------------------------------
// Rollouts and training

struct MetricsRow {
  std::uint64_t step = 0;
  LossReport report;
  double accuracy = 0.0;  // fraction of correct rollouts in the batch
};

inline std::string metrics_header() {
  return "step,stage,l_grpo,l_cons,l_sep,l_total,kl_to_ref,kl_to_pres,kl_to_abl,"
         "clip_fraction,accuracy\n";
}

inline std::string to_csv(const MetricsRow& m) {
  const auto& r = m.report;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<unsigned long long>(m.step),
                std::string(to_string(r.stage)).c_str(), r.l_grpo, r.l_cons, r.l_sep,
                r.l_total, r.kl_to_ref, r.kl_to_pres, r.kl_to_abl, r.clip_fraction,
                m.accuracy);
  return buf;
}

inline constexpr std::uint64_t kRolloutTag = 0x2011;
inline constexpr std::uint64_t kShuffleTag = 0x5f1e;
inline constexpr std::uint64_t kInitTag = 0x1417;

// Samples G answers from the frozen snapshot and scores them.
inline RolloutGroup collect_group(const TrainItem& item, const PolicyParams& old_params,
                                  const TrainConfig& cfg, Rng& rng) {
  const auto dist = forward(old_params, item.original, cfg.temperature);
  RolloutGroup g;
  g.item_id = item.id;
  for (int j = 0; j < cfg.group_size; ++j) {
    const auto [option, logprob] = sample_answer(dist, rng);
    g.rollouts.push_back({option, logprob, {}});
  }
  score_group(g, item.answer_index);
  return g;
}

inline PolicyParams initial_params(const TrainConfig& cfg, std::size_t input_dim,
                                   std::uint64_t seed) {
  if (cfg.init == "zero") return PolicyParams(input_dim, cfg.hidden);
  return init_params(input_dim, cfg.hidden, derive_seed(seed, kInitTag));
}

inline TrainState initial_state(const TrainConfig& cfg, std::size_t input_dim,
                                std::uint64_t seed) {
  TrainState s;
  s.params = initial_params(cfg, input_dim, seed);
  s.ref = s.params;
  return s;
}

// One optimizer step of `stage` on the given items.
inline MetricsRow train_step(Stage stage, const std::vector<const TrainItem*>& batch,
                             TrainState& state, const TrainConfig& cfg, std::uint64_t seed) {
  const PolicyParams old = state.params;  // pi_old, refreshed every batch
  std::vector<RolloutGroup> groups;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(seed, kRolloutTag, state.global_step, i));
    groups.push_back(collect_group(*batch[i], old, cfg, rng));
  }

  ad::Tape t;
  const auto pv = place(t, state.params, true);
  const auto ref_pv = place(t, state.ref, false);
  std::vector<ad::Var> grpo_terms, cons_terms, sep_terms;
  double kl_ref = 0, clip = 0, kl_pres = 0, kl_abl = 0, correct = 0, rollouts = 0;
  std::size_t n_pres = 0, n_abl = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = *batch[i];
    const auto& g = groups[i];
    const auto logp = policy_logprobs(t, pv, item.original, cfg.temperature);
    const auto ref_logp = policy_logprobs(t, ref_pv, item.original, cfg.temperature);
    const auto frag = grpo_loss(t, logp, g, ref_logp, cfg);
    grpo_terms.push_back(frag.loss);
    kl_ref += frag.kl_to_ref;
    clip += frag.clip_fraction;
    for (const auto& r : g.rollouts) correct += r.reward.correct ? 1.0 : 0.0;
    rollouts += static_cast<double>(g.rollouts.size());

    std::optional<ad::Var> pres_target, abl_target;
    if (item.pres) {
      pres_target = target_logprobs(t, pv, *item.pres, cfg.temperature);
      kl_pres += t.scalar(kl_divergence(t, logp, *pres_target));
      ++n_pres;
    }
    if (item.abl) {
      abl_target = target_logprobs(t, pv, *item.abl, cfg.temperature);
      kl_abl += t.scalar(kl_divergence(t, logp, *abl_target));
      ++n_abl;
    }
    if (uses_consistency(stage)) {
      std::vector<ad::Var> per_rollout;
      for (const auto& r : g.rollouts)
        per_rollout.push_back(consistency_loss(t, logp, pres_target, r.reward.correct, cfg));
      cons_terms.push_back(t.mean(t.stack(per_rollout)));
    }
    if (uses_separation(stage))
      sep_terms.push_back(abl_target ? separation_term(t, logp, *abl_target, cfg)
                                     : t.constant(0.0));
  }
  const auto grpo = t.mean(t.stack(grpo_terms));
  std::optional<ad::Var> cons, sep;
  if (uses_consistency(stage)) cons = t.mean(t.stack(cons_terms));
  if (uses_separation(stage)) sep = t.mean(t.stack(sep_terms));
  const auto total = stage_objective(t, stage, grpo, cons, sep, cfg);
  t.backward(total);
  const auto grad = gather_gradient(t, pv);

  MetricsRow row;
  row.step = state.global_step;
  Fragments f;
  f.l_grpo = t.scalar(grpo);
  f.l_cons = cons ? t.scalar(*cons) : 0.0;
  f.l_sep = sep ? t.scalar(*sep) : 0.0;
  row.report = stage_objective(stage, f, cfg);
  row.report.l_total = t.scalar(total);
  const double n = static_cast<double>(batch.size());
  row.report.kl_to_ref = kl_ref / n;
  row.report.clip_fraction = clip / n;
  row.report.kl_to_pres = n_pres ? kl_pres / static_cast<double>(n_pres) : 0.0;
  row.report.kl_to_abl = n_abl ? kl_abl / static_cast<double>(n_abl) : 0.0;
  row.accuracy = rollouts > 0 ? correct / rollouts : 0.0;

  adamw_update(state.params, grad, state.opt, cfg.adam());
  ++state.global_step;
  return row;
}

using MetricsSink = std::function<void(const MetricsRow&)>;

// Runs (or resumes) one plan entry. Returns false when stopped early because
// `stop_at_step` was reached.
inline bool train_stage(const StageEntry& entry, const std::vector<TrainItem>& data,
                        TrainState& state, const TrainConfig& cfg, std::uint64_t seed,
                        const MetricsSink& sink,
                        std::optional<std::uint64_t> stop_at_step = std::nullopt) {
  std::vector<const TrainItem*> pool;
  for (const auto& it : data) {
    if (entry.data == DataSubset::pres_subset && !it.pres) continue;
    if (entry.stage != Stage::stage1 && !it.abl)
      throw DataError("item '" + it.id + "' lacks an ablated view");
    pool.push_back(&it);
  }
  if (pool.empty()) throw DataError("no items for " + std::string(to_string(entry.stage)));
  if (state.batches_done == 0) state.ref = state.params;  // stage entry
  const std::size_t b = static_cast<std::size_t>(cfg.batch);
  const std::uint64_t per_epoch = (pool.size() + b - 1) / b;
  const std::uint64_t total = per_epoch * static_cast<std::uint64_t>(entry.epochs);
  while (state.batches_done < total) {
    if (stop_at_step && state.global_step >= *stop_at_step) return false;
    const std::uint64_t epoch = state.batches_done / per_epoch;
    const std::uint64_t within = state.batches_done % per_epoch;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(seed, kShuffleTag, state.plan_index, epoch));
    shuffler.shuffle(std::span<std::size_t>(order));
    std::vector<const TrainItem*> batch;
    for (std::size_t i = within * b; i < std::min(pool.size(), (within + 1) * b); ++i)
      batch.push_back(pool[order[i]]);
    const auto row = train_step(entry.stage, batch, state, cfg, seed);
    ++state.batches_done;
    if (sink) sink(row);
  }
  ++state.plan_index;
  state.batches_done = 0;
  return true;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::size_t items = 0;
  double accuracy = 0.0;
  double kl_to_pres = 0.0;  // mean over items with a preserving view
  double kl_to_abl = 0.0;
  // Accuracy when shown only the ablated view; lower means less reliance on
  // answering from the question alone.
  double shortcut_score = 0.0;
  std::map<std::string, double> per_template;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["items"] = items;
    j["accuracy"] = accuracy;
    j["kl_to_pres"] = kl_to_pres;
    j["kl_to_abl"] = kl_to_abl;
    j["shortcut_score"] = shortcut_score;
    nlohmann::ordered_json per;
    for (const auto& [k, v] : per_template) per[k] = v;
    j["per_template"] = per;
    return j;
  }
};

// Argmax decoding for accuracy; KLs at temperature 1.
inline EvalReport evaluate(const PolicyParams& params, const std::vector<TrainItem>& heldout) {
  EvalReport r;
  r.items = heldout.size();
  if (heldout.empty()) return r;
  std::map<std::string, std::pair<double, double>> per;
  std::size_t n_pres = 0, n_abl = 0, correct = 0, shortcut = 0;
  for (const auto& it : heldout) {
    const auto d = forward(params, it.original, 1.0);
    const bool ok = argmax(d) == it.answer_index;
    correct += ok;
    auto& [hits, count] = per[std::string(to_string(it.tmpl))];
    hits += ok;
    count += 1;
    if (it.pres) {
      r.kl_to_pres += kl_divergence(d, forward(params, *it.pres, 1.0));
      ++n_pres;
    }
    if (it.abl) {
      const auto da = forward(params, *it.abl, 1.0);
      r.kl_to_abl += kl_divergence(d, da);
      shortcut += argmax(da) == it.answer_index;
      ++n_abl;
    }
  }
  const double n = static_cast<double>(heldout.size());
  r.accuracy = static_cast<double>(correct) / n;
  if (n_pres) r.kl_to_pres /= static_cast<double>(n_pres);
  if (n_abl) {
    r.kl_to_abl /= static_cast<double>(n_abl);
    r.shortcut_score = static_cast<double>(shortcut) / static_cast<double>(n_abl);
  }
  for (const auto& [k, v] : per) r.per_template[k] = v.first / v.second;
  return r;
}

// Argmax accuracy of any policy on the original renders of a manifest.
inline double evaluate_policy(const AnswerPolicy& policy, const Manifest& m,
                              const std::filesystem::path& dir) {
  if (m.records.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& r : m.records) {
    const auto chart = parse_chart(read_text(dir / r.dsl_path));
    const auto d = policy.answer(read_pgm(dir / r.image), r.question, chart, 1.0);
    correct += argmax(d) == r.question.answer_index;
  }
  return static_cast<double>(correct) / static_cast<double>(m.records.size());
}

inline void check_disjoint(const std::vector<TrainItem>& train,
                           const std::vector<TrainItem>& heldout) {
  std::set<std::string> ids;
  for (const auto& it : train) ids.insert(it.id);
  for (const auto& it : heldout)
    if (ids.count(it.id)) throw DataError("held-out item '" + it.id + "' is also a training item");
}

// ---------------------------------------------------------------------------
// Curriculum

struct CurriculumResult {
  Checkpoint final;
  std::vector<Checkpoint> boundaries;   // after each plan entry
  std::vector<EvalReport> stage_reports;  // held-out report after each entry
  EvalReport report;
  std::vector<MetricsRow> metrics;
};

// Runs the plan of `mode` from `start` (fresh or resumed). When `out_dir`
// is given, writes metrics.csv, one checkpoint per stage boundary and the
// final report.
inline CurriculumResult continue_curriculum(
    Checkpoint start, const std::vector<TrainItem>& train,
    const std::vector<TrainItem>& heldout,
    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
    std::optional<std::uint64_t> stop_at_step = std::nullopt) {
  check_disjoint(train, heldout);
  const auto cfg = effective_config(start.mode, start.cfg);
  cfg.check();
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir->string() + "'");
  }
  const auto plan = make_plan(start.mode, cfg);
  CurriculumResult res;
  res.final = start;
  auto& state = res.final.state;
  const auto sink = [&](const MetricsRow& row) { res.metrics.push_back(row); };
  while (state.plan_index < plan.size()) {
    const auto idx = state.plan_index;
    if (!train_stage(plan[idx], train, state, cfg, start.seed, sink, stop_at_step)) break;
    res.boundaries.push_back(res.final);
    res.stage_reports.push_back(evaluate(state.params, heldout));
    if (out_dir)
      save_checkpoint(res.final, *out_dir / ("stage" + std::to_string(idx + 1) + ".ckpt"));
  }
  res.report = evaluate(state.params, heldout);
  if (out_dir) {
    std::string csv = metrics_header();
    for (const auto& row : res.metrics) csv += to_csv(row);
    write_text(*out_dir / "metrics.csv", csv);
    save_checkpoint(res.final, *out_dir / "final.ckpt");
    write_text(*out_dir / "report.json", res.report.to_json().dump(2) + "\n");
  }
  return res;
}

inline CurriculumResult run_curriculum(const TrainConfig& cfg, Mode mode, std::uint64_t seed,
                                       const std::vector<TrainItem>& train,
                                       const std::vector<TrainItem>& heldout,
                                       const std::optional<std::filesystem::path>& out_dir =
                                           std::nullopt) {
  cfg.check();
  if (train.empty()) throw DataError("empty training set");
  Checkpoint start;
  start.cfg = cfg;
  start.mode = mode;
  start.seed = seed;
  start.state = initial_state(cfg, train.front().original.values.size(), seed);
  return continue_curriculum(start, train, heldout, out_dir);
}

// ---------------------------------------------------------------------------
// Corpora

struct Corpus {
  std::filesystem::path dir;
  Manifest manifest;
};

inline GenConfig corpus_config(const TrainConfig& cfg, int target, const std::string& prefix) {
  GenConfig g;
  g.target = target;
  g.pres_ratio = cfg.pres_ratio;
  g.rollouts = cfg.group_size;
  g.temperature = cfg.temperature;
  g.hidden = cfg.hidden;
  g.pooled = cfg.pooled;
  g.id_prefix = prefix;
  return g;
}

inline constexpr std::uint64_t kHeldoutTag = 0x4e1d;

// Builds (train, held-out) corpora for `seed` under `root`.
inline std::pair<Corpus, Corpus> build_corpora(const TrainConfig& cfg, std::uint64_t seed,
                                               const std::filesystem::path& root) {
  Corpus train{root / "train", {}};
  Corpus held{root / "heldout", {}};
  train.manifest = build_dataset(corpus_config(cfg, cfg.train_items, "t"), seed, train.dir);
  held.manifest = build_dataset(corpus_config(cfg, cfg.heldout_items, "h"),
                                derive_seed(seed, kHeldoutTag), held.dir);
  return {train, held};
}

inline FeatureConfig feature_config(const TrainConfig& cfg) { return {64, 64, cfg.pooled}; }

// ---------------------------------------------------------------------------
// Coefficient sweep: each grid point varies one coefficient with the other
// fixed to 0.

struct SweepPoint {
  double value = 0.0;
  EvalReport report;
};

inline std::vector<SweepPoint> sweep_coefficients(const TrainConfig& cfg, const std::string& coef,
                                                  const std::vector<double>& grid,
                                                  std::uint64_t seed,
                                                  const std::vector<TrainItem>& train,
                                                  const std::vector<TrainItem>& heldout) {
  if (coef != "alpha" && coef != "beta") throw ConfigError("coef must be alpha or beta");
  std::vector<SweepPoint> out;
  for (double v : grid) {
    if (v < 0) throw ConfigError("sweep values must be non-negative");
    TrainConfig c = cfg;
    c.alpha = coef == "alpha" ? v : 0.0;
    c.beta = coef == "beta" ? v : 0.0;
    out.push_back({v, run_curriculum(c, Mode::bips, seed, train, heldout).report});
  }
  return out;
}

inline std::string sweep_csv(const std::string& coef, const std::vector<SweepPoint>& pts) {
  std::string out = coef + ",accuracy\n";
  for (const auto& p : pts) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.value, p.report.accuracy);
    out += buf;
  }
  return out;
}

}  // namespace bips
