#pragma once

// Dataset construction: chart sampling, template questions with rule-based
// distractors, evidence selection, counterpart views, difficulty filtering
// and the manifest.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bips/chart.hpp"
#include "bips/config.hpp"
#include "bips/edit.hpp"
#include "bips/errors.hpp"
#include "bips/oracle.hpp"
#include "bips/policy.hpp"
#include "bips/render.hpp"
#include "bips/rng.hpp"

namespace bips {

// ---------------------------------------------------------------------------
// Chart sampling

namespace detail {

inline std::vector<Rational> sample_values(Rng& rng, int n) {
  const bool halves = rng.bernoulli(0.3);
  const Rational step = halves ? Rational(1, 2) : Rational(1);
  const double shape = rng.uniform();
  std::vector<Rational> ys;
  Rational y = Rational(rng.range(1, 9));
  if (shape < 0.08) {  // flat
    ys.assign(n, y);
    return ys;
  }
  const int dir = rng.bernoulli(0.5) ? 1 : -1;
  for (int i = 0; i < n; ++i) {
    ys.push_back(y);
    std::int64_t delta;
    if (shape < 0.25)  // monotone
      delta = dir * rng.range(0, 2);
    else
      delta = rng.range(-3, 3);
    y = std::clamp(y + step * Rational(delta), Rational(0), Rational(10));
  }
  return ys;
}

}  // namespace detail

// Random multi-panel chart: 1-4 panels on a shared integer x grid per panel.
inline ChartSpec random_chart(Rng& rng) {
  static constexpr std::pair<int, int> kGrids[] = {{1, 1}, {1, 2}, {2, 1}, {2, 2}, {2, 2}};
  const auto [rows, cols] = kGrids[rng.below(std::size(kGrids))];
  ChartSpec spec;
  spec.grid_rows = rows;
  spec.grid_cols = cols;
  if (rng.bernoulli(0.5)) spec.title = "chart " + std::to_string(rng.below(1000));
  int series_no = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Panel p;
      p.id = "p" + std::to_string(spec.panels.size());
      p.row = r;
      p.col = c;
      const int n = static_cast<int>(rng.range(4, 7));
      p.xrange = {Rational(-1, 2), Rational(n) - Rational(1, 2)};
      p.yrange = {Rational(0), Rational(10)};
      const int count = rows * cols == 1 ? static_cast<int>(rng.range(2, 4))
                                         : static_cast<int>(rng.range(1, 3));
      for (int k = 0; k < count; ++k) {
        Series s;
        s.id = "s" + std::to_string(series_no++);
        const double u = rng.uniform();
        s.kind = u < 0.7 ? SeriesKind::line
                         : (u < 0.85 ? SeriesKind::bar : SeriesKind::scatter);
        const auto ys = detail::sample_values(rng, n);
        for (int i = 0; i < n; ++i) s.points.push_back({Rational(i), ys[i]});
        p.series.push_back(std::move(s));
      }
      rebuild_legend(p);
      if (rng.bernoulli(0.15))
        p.annotations.push_back(
            {"n" + std::to_string(spec.panels.size()), "note", Rational(0), Rational(10)});
      spec.panels.push_back(std::move(p));
    }
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Questions

namespace detail {

struct SeriesRef {
  const Series* series;
  int panel;
};

inline std::vector<SeriesRef> visible_series(const ChartSpec& spec) {
  std::vector<SeriesRef> out;
  for (std::size_t i = 0; i < spec.panels.size(); ++i)
    for (const auto& s : spec.panels[i].series)
      if (s.visible && !s.points.empty()) out.push_back({&s, static_cast<int>(i)});
  return out;
}

// First three distinct values of `pool` that differ from `answer`.
template <typename T>
std::optional<std::vector<T>> pick_distractors(const T& answer,
                                               const std::vector<T>& pool) {
  std::vector<T> out;
  for (const auto& v : pool) {
    if (v == answer || std::find(out.begin(), out.end(), v) != out.end()) continue;
    out.push_back(v);
    if (out.size() == 3) return out;
  }
  return std::nullopt;
}

// Shuffles answer + distractors into the four slots.
inline void place_options(Question& q, const std::string& answer,
                          const std::vector<std::string>& distractors, Rng& rng) {
  std::array<int, kNumOptions> order = {0, 1, 2, 3};
  rng.shuffle(std::span<int>(order));
  for (int slot = 0; slot < kNumOptions; ++slot) {
    const int src = order[slot];
    q.options[slot] = src == 0 ? answer : distractors[src - 1];
    if (src == 0) q.answer_index = slot;
  }
}

inline std::optional<Question> numeric_question(
    Template t, QuestionParams params, std::string text, const Rational& answer,
    const std::vector<Rational>& pool, Rng& rng) {
  auto distractors = pick_distractors(answer, pool);
  if (!distractors) return std::nullopt;
  Question q;
  q.tmpl = t;
  q.params = std::move(params);
  q.text = std::move(text);
  std::vector<std::string> d;
  for (const auto& v : *distractors) d.push_back(v.to_string());
  place_options(q, answer.to_string(), d, rng);
  return q;
}

inline std::vector<Rational> offsets(const Rational& v, std::initializer_list<int> ds) {
  std::vector<Rational> out;
  for (int d : ds) out.push_back(v + Rational(d));
  return out;
}

}  // namespace detail

// Proposes one question of template `t`; nullopt when the chart lacks the
// elements the template needs. The proposal is not yet validated: it may
// be tied or otherwise rejected by the oracle.
inline std::optional<Question> propose_question(const ChartSpec& spec, Template t,
                                                Rng& rng) {
  const auto visible = detail::visible_series(spec);
  if (visible.empty()) return std::nullopt;
  auto pick_series = [&](auto pred) -> std::optional<detail::SeriesRef> {
    std::vector<detail::SeriesRef> ok;
    for (const auto& r : visible)
      if (pred(r)) ok.push_back(r);
    if (ok.empty()) return std::nullopt;
    return ok[rng.below(ok.size())];
  };
  switch (t) {
    case Template::value_lookup: {
      auto ref = pick_series([](const detail::SeriesRef&) { return true; });
      const auto& s = *ref->series;
      const auto& pt = s.points[rng.below(s.points.size())];
      std::vector<Rational> pool;
      for (const auto& other : spec.panels[ref->panel].series)
        if (&other != &s && other.visible)
          if (auto v = value_at(other, pt.x)) pool.push_back(*v);
      for (const auto& p : s.points)
        if (p.x != pt.x) pool.push_back(p.y);
      const auto extra = detail::offsets(pt.y, {1, -1, 2, -2, 3, -3});
      pool.insert(pool.end(), extra.begin(), extra.end());
      return detail::numeric_question(
          t, {{s.id}, {}, pt.x},
          "What is the value of " + s.id + " at x=" + pt.x.to_string() + "?", pt.y,
          pool, rng);
    }
    case Template::compare_at_x: {
      auto ref = pick_series([](const detail::SeriesRef&) { return true; });
      const auto& anchor = *ref->series;
      const Rational x = anchor.points[rng.below(anchor.points.size())].x;
      std::vector<const Series*> eligible;
      for (const auto& r : visible)
        if (value_at(*r.series, x)) eligible.push_back(r.series);
      if (eligible.size() < kNumOptions) return std::nullopt;
      rng.shuffle(std::span<const Series*>(eligible));
      eligible.resize(kNumOptions);
      Question q;
      q.tmpl = t;
      q.params.x = x;
      const Series* best = eligible[0];
      for (const auto* s : eligible) {
        q.params.series.push_back(s->id);
        if (*value_at(*s, x) > *value_at(*best, x)) best = s;
      }
      q.text = "Which series has the highest value at x=" + x.to_string() + "?";
      std::vector<std::string> d;
      for (const auto* s : eligible)
        if (s != best) d.push_back(s->id);
      detail::place_options(q, best->id, d, rng);
      return q;
    }
    case Template::series_max: {
      auto ref = pick_series(
          [](const detail::SeriesRef& r) { return r.series->points.size() >= 2; });
      if (!ref) return std::nullopt;
      const auto& s = *ref->series;
      const Rational m = *max_value(s);
      std::vector<Rational> pool;
      for (const auto& other : spec.panels[ref->panel].series)
        if (&other != &s && other.visible)
          if (auto v = max_value(other)) pool.push_back(*v);
      std::vector<Rational> ys;
      for (const auto& p : s.points) ys.push_back(p.y);
      std::sort(ys.rbegin(), ys.rend());
      for (const auto& y : ys)
        if (y < m) {
          pool.push_back(y);
          break;
        }
      pool.push_back(ys.back());
      const auto extra = detail::offsets(m, {-1, 1, -2, 2, -3, 3});
      pool.insert(pool.end(), extra.begin(), extra.end());
      return detail::numeric_question(t, {{s.id}, {}, std::nullopt},
                                      "What is the maximum value of " + s.id + "?",
                                      m, pool, rng);
    }
    case Template::count_crossings: {
      std::vector<std::pair<const Series*, const Series*>> pairs;
      for (const auto& p : spec.panels)
        for (std::size_t i = 0; i < p.series.size(); ++i)
          for (std::size_t j = i + 1; j < p.series.size(); ++j) {
            const auto& a = p.series[i];
            const auto& b = p.series[j];
            if (a.visible && b.visible && a.kind == SeriesKind::line &&
                b.kind == SeriesKind::line && a.points.size() >= 2 &&
                b.points.size() >= 2)
              pairs.push_back({&a, &b});
          }
      if (pairs.empty()) return std::nullopt;
      const auto [a, b] = pairs[rng.below(pairs.size())];
      const int c = count_crossings(*a, *b);
      std::vector<Rational> pool;
      if (c >= 1) pool.push_back(Rational(c - 1));
      for (int d = 1; d <= 3; ++d) pool.push_back(Rational(c + d));
      return detail::numeric_question(
          t, {{a->id, b->id}, {}, std::nullopt},
          "How many times do " + a->id + " and " + b->id + " cross?", Rational(c),
          pool, rng);
    }
    case Template::trend_sign: {
      auto ref = pick_series(
          [](const detail::SeriesRef& r) { return r.series->points.size() >= 2; });
      if (!ref) return std::nullopt;
      const auto& s = *ref->series;
      const std::string answer(trend_of(s));
      Question q;
      q.tmpl = t;
      q.params.series = {s.id};
      q.text = "What is the overall trend of " + s.id + "?";
      std::vector<std::string> d;
      for (auto label : kTrendLabels)
        if (label != answer) d.emplace_back(label);
      detail::place_options(q, answer, d, rng);
      return q;
    }
    case Template::panel_compare: {
      std::vector<std::pair<const Panel*, Rational>> peaks;
      for (const auto& p : spec.panels)
        if (auto m = panel_peak(p)) peaks.push_back({&p, *m});
      if (peaks.size() < 2) return std::nullopt;
      const auto i = rng.below(peaks.size());
      auto j = rng.below(peaks.size() - 1);
      if (j >= i) ++j;
      const auto& [p1, m1] = peaks[i];
      const auto& [p2, m2] = peaks[j];
      const Rational d = m1 - m2;
      std::vector<Rational> pool{-d};
      const auto extra = detail::offsets(d, {1, -1, 2, -2, 3});
      pool.insert(pool.end(), extra.begin(), extra.end());
      return detail::numeric_question(
          t, {{}, {p1->id, p2->id}, std::nullopt},
          "By how much does the peak of panel " + p1->id +
              " exceed the peak of panel " + p2->id + "?",
          d, pool, rng);
    }
  }
  throw UnknownTemplate("template out of range");
}

// Distinct options and the oracle confirms the recorded answer.
inline bool is_valid_question(const ChartSpec& spec, const Question& q) {
  std::set<std::string> distinct(q.options.begin(), q.options.end());
  if (distinct.size() != kNumOptions) return false;
  if (q.answer_index < 0 || q.answer_index >= kNumOptions) return false;
  return oracle_answer(spec, q) == Verdict::determined(q.answer_index);
}

struct QuestionStats {
  std::size_t proposed = 0;
  std::size_t validated = 0;
};

inline std::vector<Question> generate_questions(const ChartSpec& spec,
                                                std::uint64_t seed, int max_q,
                                                QuestionStats* stats = nullptr) {
  if (spec.visible_series_count() == 0)
    throw NoViableQuestion("chart has no visible series");
  Rng rng(seed);
  std::vector<Question> out;
  std::set<std::string> seen;
  const int attempts = 8 * std::max(max_q, 1) + 16;
  for (int a = 0; a < attempts && static_cast<int>(out.size()) < max_q; ++a) {
    const auto t = static_cast<Template>(rng.below(kNumTemplates));
    auto q = propose_question(spec, t, rng);
    if (!q) continue;
    if (stats) ++stats->proposed;
    if (!is_valid_question(spec, *q)) continue;
    if (stats) ++stats->validated;
    if (!seen.insert(q->text).second) continue;
    out.push_back(std::move(*q));
  }
  if (out.empty()) throw NoViableQuestion("no template produced a valid question");
  return out;
}

// Elements whose removal makes `q` unanswerable and whose retention keeps it
// answerable.
inline ElementSelector evidence_set(const ChartSpec& spec, const Question& q) {
  ElementSelector sel;
  for (const auto& id : q.params.series) sel.series_ids.insert(id);
  for (const auto& pid : q.params.panels) {
    sel.panel_ids.insert(pid);
    if (const Panel* p = spec.find_panel(pid))
      for (const auto& s : p->series)
        if (s.visible) sel.series_ids.insert(s.id);
  }
  return sel;
}

inline ChartSpec make_preserving_view(const ChartSpec& spec, const Question& q) {
  return edit_remove_elements(spec, evidence_set(spec, q), EditMode::preserve_selected);
}

inline ChartSpec make_ablated_view(const ChartSpec& spec, const Question& q) {
  return edit_remove_elements(spec, evidence_set(spec, q), EditMode::ablate_selected);
}

// ---------------------------------------------------------------------------
// Difficulty filtering

struct FilterResult {
  bool keep = false;
  int passes = 0;  // correct answers out of k
};

inline FilterResult difficulty_filter(const Image& img, const ChartSpec& chart,
                                      const Question& q, const AnswerPolicy& policy,
                                      int k, double temperature, std::uint64_t seed) {
  if (k < 1) throw ConfigError("rollout count must be positive");
  const auto dist = policy.answer(img, q, chart, temperature);
  Rng rng(seed);
  FilterResult r;
  for (int i = 0; i < k; ++i) r.passes += sample_answer(dist, rng).first == q.answer_index;
  r.keep = r.passes < k;
  return r;
}

// ---------------------------------------------------------------------------
// Dataset

struct GenConfig {
  int target = 500;
  double pres_ratio = 0.54;
  int rollouts = 8;
  double temperature = 0.85;
  int max_attempts = 0;  // 0: 20 x target
  int hidden = 64;
  int pooled = 16;
  int width = 64;
  int height = 64;
  int margin = 3;
  std::string id_prefix = "c";

  RenderConfig render() const {
    RenderConfig r;
    r.width = width;
    r.height = height;
    r.margin = margin;
    return r;
  }
  FeatureConfig features() const { return {width, height, pooled}; }

  static GenConfig from_map(const KeyValueMap& kv) {
    GenConfig c;
    ConfigReader r(kv);
    r.get("target", c.target);
    r.get("pres_ratio", c.pres_ratio);
    r.get("rollouts", c.rollouts);
    r.get("temperature", c.temperature);
    r.get("max_attempts", c.max_attempts);
    r.get("hidden", c.hidden);
    r.get("pooled", c.pooled);
    r.get("width", c.width);
    r.get("height", c.height);
    r.get("margin", c.margin);
    r.get("id_prefix", c.id_prefix);
    r.finish();
    if (c.target < 1) throw ConfigError("target must be positive");
    if (c.pres_ratio < 0 || c.pres_ratio > 1) throw ConfigError("pres_ratio must lie in [0,1]");
    return c;
  }
};

// Tag mixed into the master seed to obtain the base policy's init seed.
inline constexpr std::uint64_t kBasePolicyTag = 0xba5e;

inline MlpPolicy base_policy(const GenConfig& cfg, std::uint64_t seed) {
  const auto fc = cfg.features();
  return MlpPolicy(init_params(fc.dim(), cfg.hidden, derive_seed(seed, kBasePolicyTag)), fc);
}

struct ManifestRecord {
  std::string id;
  std::string dsl_path;  // relative to the manifest directory
  Question question;
  std::string image;
  std::optional<std::string> pres_image;
  std::string abl_image;
  int difficulty = 0;
  std::uint64_t seed = 0;
  bool operator==(const ManifestRecord&) const = default;
};

struct FunnelCounters {
  std::size_t generated = 0;  // question proposals
  std::size_t validated = 0;  // proposals confirmed by the oracle
  std::size_t filtered = 0;   // kept after difficulty filtering
  std::size_t edited = 0;     // ablated view produced (final records)
  std::size_t with_pres = 0;  // final records carrying a preserving view
  bool operator==(const FunnelCounters&) const = default;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  FunnelCounters counters;
};

// One in-memory training record with all views recomputed from the chart.
struct QAItem {
  std::string id;
  ChartSpec chart;
  Question question;
  std::optional<ChartSpec> pres;
  ChartSpec abl;
  std::string image;
  std::optional<std::string> pres_image;
  std::string abl_image;
  int difficulty = 0;
  std::uint64_t seed = 0;
};

inline nlohmann::ordered_json to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["dsl_path"] = r.dsl_path;
  j["question"] = r.question.text;
  j["options"] = r.question.options;
  j["answer_index"] = r.question.answer_index;
  j["image"] = r.image;
  j["pres_image"] = r.pres_image ? nlohmann::ordered_json(*r.pres_image)
                                 : nlohmann::ordered_json(nullptr);
  j["abl_image"] = r.abl_image;
  j["difficulty"] = r.difficulty;
  j["seed"] = r.seed;
  j["template"] = std::string(to_string(r.question.tmpl));
  nlohmann::ordered_json params;
  params["series"] = r.question.params.series;
  params["panels"] = r.question.params.panels;
  params["x"] = r.question.params.x ? nlohmann::ordered_json(r.question.params.x->to_string())
                                    : nlohmann::ordered_json(nullptr);
  j["params"] = params;
  return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
  try {
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.dsl_path = j.at("dsl_path").get<std::string>();
    r.question.text = j.at("question").get<std::string>();
    const auto options = j.at("options").get<std::vector<std::string>>();
    if (options.size() != kNumOptions) throw FormatError("record needs exactly 4 options");
    std::copy(options.begin(), options.end(), r.question.options.begin());
    r.question.answer_index = j.at("answer_index").get<int>();
    r.image = j.at("image").get<std::string>();
    if (!j.at("pres_image").is_null()) r.pres_image = j.at("pres_image").get<std::string>();
    r.abl_image = j.at("abl_image").get<std::string>();
    r.difficulty = j.at("difficulty").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.question.tmpl = parse_template(j.at("template").get<std::string>());
    const auto& p = j.at("params");
    r.question.params.series = p.at("series").get<std::vector<std::string>>();
    r.question.params.panels = p.at("panels").get<std::vector<std::string>>();
    if (!p.at("x").is_null()) {
      auto x = Rational::parse(p.at("x").get<std::string>());
      if (!x) throw FormatError("malformed x parameter");
      r.question.params.x = *x;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest record: ") + e.what());
  }
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::filesystem::path manifest_path(const std::filesystem::path& dir) {
  return dir / "manifest.jsonl";
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& dir) {
  std::string lines;
  for (const auto& r : m.records) lines += to_json(r).dump() + "\n";
  write_text(manifest_path(dir), lines);
  nlohmann::ordered_json stats;
  stats["generated"] = m.counters.generated;
  stats["validated"] = m.counters.validated;
  stats["filtered"] = m.counters.filtered;
  stats["edited"] = m.counters.edited;
  stats["with_pres"] = m.counters.with_pres;
  write_text(dir / "stats.json", stats.dump(2) + "\n");
}

// `path` may be the manifest file or its directory.
inline Manifest read_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? manifest_path(path) : path;
  Manifest m;
  std::istringstream in(read_text(file));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      m.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("malformed manifest line: ") + e.what());
    }
  }
  const auto stats = file.parent_path() / "stats.json";
  if (std::filesystem::exists(stats)) {
    const auto j = nlohmann::json::parse(read_text(stats));
    m.counters.generated = j.value("generated", std::size_t{0});
    m.counters.validated = j.value("validated", std::size_t{0});
    m.counters.filtered = j.value("filtered", std::size_t{0});
    m.counters.edited = j.value("edited", std::size_t{0});
    m.counters.with_pres = j.value("with_pres", std::size_t{0});
  }
  return m;
}

// Re-derives the chart and both edited views of a record.
inline QAItem load_item(const ManifestRecord& r, const std::filesystem::path& dir) {
  QAItem item;
  item.id = r.id;
  item.chart = parse_chart(read_text(dir / r.dsl_path));
  item.question = r.question;
  item.abl = make_ablated_view(item.chart, r.question);
  if (r.pres_image) item.pres = make_preserving_view(item.chart, r.question);
  item.image = r.image;
  item.pres_image = r.pres_image;
  item.abl_image = r.abl_image;
  item.difficulty = r.difficulty;
  item.seed = r.seed;
  return item;
}

namespace detail {

inline std::string item_id(const GenConfig& cfg, std::uint64_t seed, int candidate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", candidate);
  return cfg.id_prefix + std::to_string(seed) + "-" + buf;
}

}  // namespace detail

// Sub-seed streams of one candidate item.
enum class ItemStream : std::uint64_t { chart = 1, question = 2, filter = 3, pres = 4 };

inline std::uint64_t item_seed(std::uint64_t master, int candidate) {
  return derive_seed(master, static_cast<std::uint64_t>(candidate));
}

inline std::uint64_t stream_seed(std::uint64_t item, ItemStream s) {
  return derive_seed(item, static_cast<std::uint64_t>(s));
}

// generate -> validate -> difficulty-filter -> edit -> render. Every candidate
// draws from its own sub-seed, so records do not depend on processing order.
inline Manifest build_dataset(const GenConfig& cfg, std::uint64_t seed,
                              const std::filesystem::path& out_dir,
                              const AnswerPolicy* policy = nullptr) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "charts", ec);
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  std::optional<MlpPolicy> own;
  if (!policy) {
    own.emplace(base_policy(cfg, seed));
    policy = &*own;
  }
  const auto render_cfg = cfg.render();
  const int max_attempts = cfg.max_attempts > 0 ? cfg.max_attempts : 20 * cfg.target;
  Manifest m;
  for (int c = 0; c < max_attempts && static_cast<int>(m.records.size()) < cfg.target; ++c) {
    const auto iseed = item_seed(seed, c);
    Rng chart_rng(stream_seed(iseed, ItemStream::chart));
    const ChartSpec chart = random_chart(chart_rng);
    QuestionStats qs;
    std::vector<Question> qs_out;
    try {
      qs_out = generate_questions(chart, stream_seed(iseed, ItemStream::question), 1, &qs);
    } catch (const NoViableQuestion&) {
    }
    m.counters.generated += qs.proposed;
    m.counters.validated += qs.validated;
    if (qs_out.empty()) continue;
    const Question& q = qs_out.front();

    const Image image = rasterize(chart, render_cfg);
    const auto filter = difficulty_filter(image, chart, q, *policy, cfg.rollouts,
                                          cfg.temperature, stream_seed(iseed, ItemStream::filter));
    if (!filter.keep) continue;
    ++m.counters.filtered;

    const ChartSpec abl = make_ablated_view(chart, q);
    if (oracle_answer(abl, q).is_determined()) continue;
    std::optional<ChartSpec> pres;
    if (Rng(stream_seed(iseed, ItemStream::pres)).bernoulli(cfg.pres_ratio)) {
      pres = make_preserving_view(chart, q);
      if (oracle_answer(*pres, q) != Verdict::determined(q.answer_index))
        throw DataError("preserving view of '" + q.text + "' lost the answer");
    }
    ++m.counters.edited;

    ManifestRecord r;
    r.id = detail::item_id(cfg, seed, c);
    r.dsl_path = "charts/" + r.id + ".dsl";
    r.question = q;
    r.image = "images/" + r.id + ".pgm";
    r.abl_image = "images/" + r.id + "_abl.pgm";
    r.difficulty = filter.passes;
    r.seed = iseed;
    write_text(out_dir / r.dsl_path, serialize_chart(chart));
    write_pgm(image, out_dir / r.image);
    write_pgm(rasterize(abl, render_cfg), out_dir / r.abl_image);
    if (pres) {
      r.pres_image = "images/" + r.id + "_pres.pgm";
      write_pgm(rasterize(*pres, render_cfg), out_dir / *r.pres_image);
      ++m.counters.with_pres;
    }
    m.records.push_back(std::move(r));
  }
  if (static_cast<int>(m.records.size()) < cfg.target)
    throw InsufficientYield("produced " + std::to_string(m.records.size()) + " of " +
                            std::to_string(cfg.target) + " records");
  write_manifest(m, out_dir);
  return m;
}

// Re-runs difficulty filtering on an existing manifest with another policy.
inline Manifest filter_manifest(const Manifest& in, const std::filesystem::path& dir,
                                const AnswerPolicy& policy, int k, double temperature) {
  Manifest out;
  out.counters = in.counters;
  out.counters.filtered = 0;
  out.counters.edited = 0;
  out.counters.with_pres = 0;
  for (const auto& r : in.records) {
    const auto chart = parse_chart(read_text(dir / r.dsl_path));
    const auto img = read_pgm(dir / r.image);
    const auto f = difficulty_filter(img, chart, r.question, policy, k, temperature,
                                     stream_seed(r.seed, ItemStream::filter));
    if (!f.keep) continue;
    ++out.counters.filtered;
    ++out.counters.edited;
    out.counters.with_pres += r.pres_image ? 1 : 0;
    auto kept = r;
    kept.difficulty = f.passes;
    out.records.push_back(std::move(kept));
  }
  return out;
}

}  // namespace bips
