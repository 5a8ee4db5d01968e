#pragma once

// Question model and the symbolic oracle that decides, from the chart AST
// alone, whether a question has exactly one correct option.

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bips/chart.hpp"
#include "bips/errors.hpp"
#include "bips/rational.hpp"

namespace bips {

inline constexpr int kNumOptions = 4;
inline constexpr int kNumTemplates = 6;

enum class Template {
  value_lookup = 0,
  compare_at_x = 1,
  series_max = 2,
  count_crossings = 3,
  trend_sign = 4,
  panel_compare = 5,
};

inline constexpr std::array<std::string_view, kNumTemplates> kTemplateNames = {
    "value_lookup", "compare_at_x",  "series_max",
    "count_crossings", "trend_sign", "panel_compare"};

inline std::string_view to_string(Template t) {
  const auto i = static_cast<int>(t);
  if (i < 0 || i >= kNumTemplates) throw UnknownTemplate("template out of range");
  return kTemplateNames[i];
}

inline Template parse_template(std::string_view name) {
  for (int i = 0; i < kNumTemplates; ++i)
    if (kTemplateNames[i] == name) return static_cast<Template>(i);
  throw UnknownTemplate("unknown template '" + std::string(name) + "'");
}

// Labels used by trend_sign; the options are always these four.
inline constexpr std::array<std::string_view, 4> kTrendLabels = {
    "increasing", "decreasing", "flat", "fluctuating"};

struct QuestionParams {
  std::vector<std::string> series;  // referenced / compared series ids
  std::vector<std::string> panels;  // referenced panel ids
  std::optional<Rational> x;
  bool operator==(const QuestionParams&) const = default;
};

struct Question {
  Template tmpl = Template::value_lookup;
  QuestionParams params;
  std::string text;
  std::array<std::string, kNumOptions> options;
  int answer_index = 0;
  bool operator==(const Question&) const = default;
};

class Verdict {
 public:
  static Verdict determined(int option) { return Verdict(option); }
  static Verdict undetermined() { return Verdict(std::nullopt); }

  bool is_determined() const { return option_.has_value(); }
  int option() const { return option_.value(); }
  bool operator==(const Verdict&) const = default;

 private:
  explicit Verdict(std::optional<int> o) : option_(o) {}
  std::optional<int> option_;
};

// ---------------------------------------------------------------------------
// Series helpers shared with the question generator.

inline std::optional<Rational> value_at(const Series& s, const Rational& x) {
  for (const auto& p : s.points)
    if (p.x == x) return p.y;
  return std::nullopt;
}

inline std::optional<Rational> max_value(const Series& s) {
  if (s.points.empty()) return std::nullopt;
  Rational m = s.points.front().y;
  for (const auto& p : s.points) m = std::max(m, p.y);
  return m;
}

// Linear interpolation of a line series; nullopt outside its x-domain.
inline std::optional<Rational> interpolate(const Series& s, const Rational& x) {
  const auto& pts = s.points;
  if (pts.empty() || x < pts.front().x || x > pts.back().x) return std::nullopt;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[i + 1];
    if (x < a.x || x > b.x) continue;
    if (a.x == b.x) return a.y;
    return a.y + (b.y - a.y) * ((x - a.x) / (b.x - a.x));
  }
  return pts.back().y;
}

// Number of sign changes of (a - b) over the shared x-domain, sampled at
// every breakpoint of either series. Zeros are skipped, so a touch that
// does not change sides is not a crossing.
inline int count_crossings(const Series& a, const Series& b) {
  if (a.points.size() < 2 || b.points.size() < 2) return 0;
  const Rational lo = std::max(a.points.front().x, b.points.front().x);
  const Rational hi = std::min(a.points.back().x, b.points.back().x);
  if (!(lo < hi)) return 0;
  std::vector<Rational> xs{lo, hi};
  for (const auto* s : {&a, &b})
    for (const auto& p : s->points)
      if (p.x > lo && p.x < hi) xs.push_back(p.x);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  int crossings = 0, last_sign = 0;
  for (const auto& x : xs) {
    const Rational d = *interpolate(a, x) - *interpolate(b, x);
    const int sign = d > Rational(0) ? 1 : (d < Rational(0) ? -1 : 0);
    if (sign == 0) continue;
    if (last_sign != 0 && sign != last_sign) ++crossings;
    last_sign = sign;
  }
  return crossings;
}

inline std::string_view trend_of(const Series& s) {
  std::vector<Point> pts = s.points;
  std::stable_sort(pts.begin(), pts.end(),
                   [](const Point& l, const Point& r) { return l.x < r.x; });
  bool up = false, down = false;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].y > pts[i - 1].y) up = true;
    if (pts[i].y < pts[i - 1].y) down = true;
  }
  if (up && down) return kTrendLabels[3];
  if (up) return kTrendLabels[0];
  if (down) return kTrendLabels[1];
  return kTrendLabels[2];
}

// Peak over all points of a panel, or nullopt if any series is a placeholder
// or the panel has no data.
inline std::optional<Rational> panel_peak(const Panel& p) {
  std::optional<Rational> peak;
  for (const auto& s : p.series) {
    if (!s.visible) return std::nullopt;
    if (auto m = max_value(s)) peak = peak ? std::max(*peak, *m) : *m;
  }
  return peak;
}

// ---------------------------------------------------------------------------

namespace detail {

template <typename Pred>
Verdict unique_option(const Question& q, Pred matches) {
  int found = -1;
  for (int k = 0; k < kNumOptions; ++k) {
    if (!matches(q.options[k])) continue;
    if (found >= 0) return Verdict::undetermined();
    found = k;
  }
  return found >= 0 ? Verdict::determined(found) : Verdict::undetermined();
}

inline Verdict numeric_answer(const Question& q, const Rational& value) {
  return unique_option(q, [&](const std::string& o) {
    auto r = Rational::parse(o);
    return r && *r == value;
  });
}

inline const Series& series_ref(const ChartSpec& spec, const std::string& id) {
  auto [s, panel] = spec.find_series(id);
  if (!s) throw DanglingReference("question references unknown series '" + id + "'");
  return *s;
}

inline const Panel& panel_ref(const ChartSpec& spec, const std::string& id) {
  const Panel* p = spec.find_panel(id);
  if (!p) throw DanglingReference("question references unknown panel '" + id + "'");
  return *p;
}

inline void require_arity(const Question& q, std::size_t series,
                          std::size_t panels, bool needs_x) {
  if (q.params.series.size() != series || q.params.panels.size() != panels ||
      (needs_x && !q.params.x))
    throw DanglingReference(std::string("malformed parameters for template ") +
                            std::string(to_string(q.tmpl)));
}

}  // namespace detail

// Determined(k) iff the chart data uniquely selects option k. Missing or
// placeholder evidence and exact ties give Undetermined.
inline Verdict oracle_answer(const ChartSpec& spec, const Question& q) {
  using detail::numeric_answer;
  using detail::series_ref;
  switch (q.tmpl) {
    case Template::value_lookup: {
      detail::require_arity(q, 1, 0, true);
      const auto& s = series_ref(spec, q.params.series[0]);
      if (!s.visible) return Verdict::undetermined();
      auto y = value_at(s, *q.params.x);
      if (!y) return Verdict::undetermined();
      return numeric_answer(q, *y);
    }
    case Template::compare_at_x: {
      if (q.params.series.size() < 2 || !q.params.x || !q.params.panels.empty())
        detail::require_arity(q, 2, 0, true);
      const std::string* best = nullptr;
      Rational best_y;
      bool tie = false;
      for (const auto& id : q.params.series) {
        const auto& s = series_ref(spec, id);
        if (!s.visible) return Verdict::undetermined();
        auto y = value_at(s, *q.params.x);
        if (!y) return Verdict::undetermined();
        if (!best || *y > best_y) {
          best = &id;
          best_y = *y;
          tie = false;
        } else if (*y == best_y) {
          tie = true;
        }
      }
      if (tie) return Verdict::undetermined();
      return detail::unique_option(
          q, [&](const std::string& o) { return o == *best; });
    }
    case Template::series_max: {
      detail::require_arity(q, 1, 0, false);
      const auto& s = series_ref(spec, q.params.series[0]);
      if (!s.visible) return Verdict::undetermined();
      auto m = max_value(s);
      if (!m) return Verdict::undetermined();
      return numeric_answer(q, *m);
    }
    case Template::count_crossings: {
      detail::require_arity(q, 2, 0, false);
      const auto& a = series_ref(spec, q.params.series[0]);
      const auto& b = series_ref(spec, q.params.series[1]);
      if (!a.visible || !b.visible || a.kind != SeriesKind::line ||
          b.kind != SeriesKind::line || a.points.size() < 2 ||
          b.points.size() < 2)
        return Verdict::undetermined();
      return numeric_answer(q, Rational(count_crossings(a, b)));
    }
    case Template::trend_sign: {
      detail::require_arity(q, 1, 0, false);
      const auto& s = series_ref(spec, q.params.series[0]);
      if (!s.visible || s.points.size() < 2) return Verdict::undetermined();
      const auto label = trend_of(s);
      return detail::unique_option(
          q, [&](const std::string& o) { return o == label; });
    }
    case Template::panel_compare: {
      detail::require_arity(q, 0, 2, false);
      const auto& p1 = detail::panel_ref(spec, q.params.panels[0]);
      const auto& p2 = detail::panel_ref(spec, q.params.panels[1]);
      auto m1 = panel_peak(p1);
      auto m2 = panel_peak(p2);
      if (!m1 || !m2 || *m1 == *m2) return Verdict::undetermined();
      return numeric_answer(q, *m1 - *m2);
    }
  }
  throw UnknownTemplate("template out of range");
}

}  // namespace bips
