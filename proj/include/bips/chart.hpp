#pragma once

// Chart AST, the line-oriented chart DSL (parse/serialize) and validation.

#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bips/errors.hpp"
#include "bips/rational.hpp"

namespace bips {

enum class SeriesKind { line, bar, scatter };

inline std::string_view to_string(SeriesKind k) {
  switch (k) {
    case SeriesKind::line: return "line";
    case SeriesKind::bar: return "bar";
    case SeriesKind::scatter: return "scatter";
  }
  return "line";
}

inline std::optional<SeriesKind> parse_series_kind(std::string_view s) {
  if (s == "line") return SeriesKind::line;
  if (s == "bar") return SeriesKind::bar;
  if (s == "scatter") return SeriesKind::scatter;
  return std::nullopt;
}

struct Point {
  Rational x;
  Rational y;
  bool operator==(const Point&) const = default;
};

struct Range {
  Rational lo;
  Rational hi;
  bool operator==(const Range&) const = default;
};

// A placeholder series (visible == false) keeps its id and legend slot and
// carries no geometry.
struct Series {
  std::string id;
  SeriesKind kind = SeriesKind::line;
  std::vector<Point> points;
  bool visible = true;
  bool operator==(const Series&) const = default;
};

struct LegendEntry {
  std::string series_id;
  bool operator==(const LegendEntry&) const = default;
};

struct Annotation {
  std::string id;
  std::string text;
  Rational x;
  Rational y;
  bool operator==(const Annotation&) const = default;
};

struct Panel {
  std::string id;
  int row = 0;
  int col = 0;
  Range xrange{0, 1};
  Range yrange{0, 1};
  std::vector<Series> series;
  std::vector<LegendEntry> legend;
  std::vector<Annotation> annotations;
  bool operator==(const Panel&) const = default;
};

struct ChartSpec {
  int grid_rows = 1;
  int grid_cols = 1;
  std::optional<std::string> title;
  std::vector<Panel> panels;
  bool operator==(const ChartSpec&) const = default;

  const Panel* find_panel(std::string_view id) const {
    for (const auto& p : panels)
      if (p.id == id) return &p;
    return nullptr;
  }

  // Returns the series and the index of its owning panel.
  std::pair<const Series*, int> find_series(std::string_view id) const {
    for (std::size_t i = 0; i < panels.size(); ++i)
      for (const auto& s : panels[i].series)
        if (s.id == id) return {&s, static_cast<int>(i)};
    return {nullptr, -1};
  }

  bool has_annotation(std::string_view id) const {
    for (const auto& p : panels)
      for (const auto& a : p.annotations)
        if (a.id == id) return true;
    return false;
  }

  std::size_t visible_series_count() const {
    std::size_t n = 0;
    for (const auto& p : panels)
      for (const auto& s : p.series) n += s.visible ? 1 : 0;
    return n;
  }
};

// Builds the legend of a panel from its declared series (one slot each).
inline void rebuild_legend(Panel& panel) {
  panel.legend.clear();
  for (const auto& s : panel.series) panel.legend.push_back({s.id});
}

namespace detail {

inline bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
          c == '-' || c == '.'))
      return false;
  }
  return true;
}

}  // namespace detail

// Throws the first violated ChartSpec invariant. Structural problems that
// have no dedicated error type are reported as SyntaxError at line 0.
inline void validate(const ChartSpec& spec) {
  auto fail = [](const std::string& what) { throw SyntaxError(0, 0, what); };
  if (spec.grid_rows < 1 || spec.grid_cols < 1) fail("grid must be positive");
  if (spec.panels.empty()) fail("chart has no panels");
  if (spec.panels.size() >
      static_cast<std::size_t>(spec.grid_rows) * spec.grid_cols)
    throw GridOverflow("more panels than grid cells");
  std::set<std::pair<int, int>> cells;
  std::set<std::string> ids;
  auto claim = [&](const std::string& id) {
    if (!detail::valid_id(id)) fail("invalid id '" + id + "'");
    if (!ids.insert(id).second) throw DuplicateId("duplicate id '" + id + "'");
  };
  for (const auto& p : spec.panels) {
    claim(p.id);
    if (p.row < 0 || p.row >= spec.grid_rows || p.col < 0 ||
        p.col >= spec.grid_cols)
      throw GridOverflow("panel '" + p.id + "' lies outside the grid");
    if (!cells.insert({p.row, p.col}).second)
      throw GridOverflow("panel '" + p.id + "' reuses an occupied cell");
    if (!(p.xrange.lo < p.xrange.hi) || !(p.yrange.lo < p.yrange.hi))
      fail("panel '" + p.id + "' has a degenerate axis range");
    if (p.legend.size() != p.series.size())
      fail("panel '" + p.id + "' legend size differs from series count");
    for (std::size_t i = 0; i < p.series.size(); ++i) {
      const auto& s = p.series[i];
      claim(s.id);
      if (p.legend[i].series_id != s.id)
        fail("legend slot " + std::to_string(i) + " of panel '" + p.id +
             "' does not name series '" + s.id + "'");
      if (!s.visible && !s.points.empty())
        fail("placeholder series '" + s.id + "' carries geometry");
      if (s.kind == SeriesKind::line)
        for (std::size_t k = 1; k < s.points.size(); ++k)
          if (s.points[k].x < s.points[k - 1].x)
            fail("line series '" + s.id + "' is not sorted by x");
    }
    for (const auto& a : p.annotations) claim(a.id);
  }
}

namespace detail {

// Tokenizer for one DSL line: bare words, key=value pairs, quoted strings.
class LineCursor {
 public:
  LineCursor(std::string_view text, int line) : text_(text), line_(line) {}

  [[noreturn]] void error(const std::string& what) const {
    throw SyntaxError(line_, static_cast<int>(pos_) + 1, what);
  }

  void skip_space() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t'))
      ++pos_;
  }

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  std::string_view word() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ' ' && text_[pos_] != '\t' &&
           text_[pos_] != '=')
      ++pos_;
    if (start == pos_) error("expected a word");
    return text_.substr(start, pos_ - start);
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c)
      error(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string quoted() {
    expect('"');
    std::string out;
    while (true) {
      if (pos_ >= text_.size()) error("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= text_.size()) error("dangling escape");
        out.push_back(text_[pos_++]);
      } else {
        out.push_back(c);
      }
    }
    return out;
  }

  // Raw value up to the next blank.
  std::string_view raw_value() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ' ' && text_[pos_] != '\t')
      ++pos_;
    return text_.substr(start, pos_ - start);
  }

  std::size_t column() const { return pos_ + 1; }
  int line() const { return line_; }

 private:
  std::string_view text_;
  int line_;
  std::size_t pos_ = 0;
};

struct KeyValues {
  std::map<std::string, std::string, std::less<>> values;
  std::map<std::string, int, std::less<>> columns;
};

// Reads `key=value` pairs until end of line. Values of keys listed in
// `quoted_keys` are parsed as quoted strings.
inline KeyValues read_pairs(LineCursor& cur,
                            std::initializer_list<std::string_view> allowed,
                            std::initializer_list<std::string_view> quoted_keys) {
  KeyValues kv;
  while (!cur.at_end()) {
    const int col = static_cast<int>(cur.column());
    const std::string key(cur.word());
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) throw SyntaxError(cur.line(), col, "unknown key '" + key + "'");
    if (kv.values.count(key))
      throw SyntaxError(cur.line(), col, "repeated key '" + key + "'");
    cur.expect('=');
    bool is_quoted = false;
    for (auto q : quoted_keys) is_quoted = is_quoted || q == key;
    std::string value = is_quoted ? cur.quoted() : std::string(cur.raw_value());
    kv.values.emplace(key, std::move(value));
    kv.columns.emplace(key, col);
  }
  return kv;
}

inline const std::string& require(const KeyValues& kv, const LineCursor& cur,
                                  std::string_view key) {
  auto it = kv.values.find(key);
  if (it == kv.values.end()) cur.error("missing key '" + std::string(key) + "'");
  return it->second;
}

inline Rational number(const std::string& text, const LineCursor& cur) {
  auto r = Rational::parse(text);
  if (!r) cur.error("malformed number '" + text + "'");
  return *r;
}

inline int positive_int(std::string_view text, const LineCursor& cur) {
  auto r = Rational::parse(text);
  if (!r || !r->is_integer() || r->num() < 0 || r->num() > 1'000'000)
    cur.error("malformed integer '" + std::string(text) + "'");
  return static_cast<int>(r->num());
}

inline Range range(const std::string& text, const LineCursor& cur) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) cur.error("range must be <lo>..<hi>");
  return {number(text.substr(0, dots), cur), number(text.substr(dots + 2), cur)};
}

inline std::pair<Rational, Rational> pair_of(const std::string& text,
                                             const LineCursor& cur) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) cur.error("expected <a>,<b>");
  return {number(text.substr(0, comma), cur),
          number(text.substr(comma + 1), cur)};
}

inline std::vector<Point> points(const std::string& text,
                                 const LineCursor& cur) {
  std::vector<Point> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '(') cur.error("expected '(' in points");
    const auto close = text.find(')', i);
    if (close == std::string::npos) cur.error("unterminated point");
    auto [x, y] = pair_of(text.substr(i + 1, close - i - 1), cur);
    out.push_back({x, y});
    i = close + 1;
  }
  return out;
}

inline bool boolean(const std::string& text, const LineCursor& cur) {
  if (text == "true") return true;
  if (text == "false") return false;
  cur.error("expected true or false");
}

// Drops a `#` comment that is not inside a quoted string.
inline std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string && c == '\\') {
      ++i;
    } else if (c == '"') {
      in_string = !in_string;
    } else if (c == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

inline ChartSpec parse_chart(std::string_view source) {
  ChartSpec spec;
  bool have_header = false;
  Panel* open = nullptr;
  int line_no = 0;
  std::size_t start = 0;
  std::set<std::string> ids;
  int last_line = 0;
  auto claim = [&](const std::string& id, const detail::LineCursor& cur) {
    if (!detail::valid_id(id)) cur.error("invalid id '" + id + "'");
    if (!ids.insert(id).second) throw DuplicateId("duplicate id '" + id + "'");
  };
  while (start <= source.size()) {
    auto end = source.find('\n', start);
    if (end == std::string_view::npos) end = source.size();
    std::string_view raw = source.substr(start, end - start);
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    start = end + 1;
    ++line_no;
    const auto text = detail::strip_comment(raw);
    detail::LineCursor cur(text, line_no);
    if (cur.at_end()) {
      if (end == source.size()) break;
      continue;
    }
    last_line = line_no;
    const std::string_view head = cur.word();
    if (!have_header) {
      if (head != "chart") cur.error("expected 'chart' header");
      auto kv = detail::read_pairs(cur, {"grid", "title"}, {"title"});
      const auto& grid = detail::require(kv, cur, "grid");
      const auto x = grid.find('x');
      if (x == std::string::npos) cur.error("grid must be <rows>x<cols>");
      spec.grid_rows = detail::positive_int(grid.substr(0, x), cur);
      spec.grid_cols = detail::positive_int(grid.substr(x + 1), cur);
      if (spec.grid_rows < 1 || spec.grid_cols < 1)
        cur.error("grid dimensions must be positive");
      if (auto it = kv.values.find("title"); it != kv.values.end())
        spec.title = it->second;
      have_header = true;
    } else if (head == "panel") {
      if (open) cur.error("panel opened before previous 'end'");
      auto kv = detail::read_pairs(cur, {"id", "at", "xrange", "yrange"}, {});
      Panel p;
      p.id = detail::require(kv, cur, "id");
      claim(p.id, cur);
      const auto& at = detail::require(kv, cur, "at");
      const auto comma = at.find(',');
      if (comma == std::string::npos) cur.error("at must be <row>,<col>");
      p.row = detail::positive_int(at.substr(0, comma), cur);
      p.col = detail::positive_int(at.substr(comma + 1), cur);
      p.xrange = detail::range(detail::require(kv, cur, "xrange"), cur);
      p.yrange = detail::range(detail::require(kv, cur, "yrange"), cur);
      if (!(p.xrange.lo < p.xrange.hi) || !(p.yrange.lo < p.yrange.hi))
        cur.error("axis range must satisfy lo < hi");
      if (p.row >= spec.grid_rows || p.col >= spec.grid_cols)
        throw GridOverflow("panel '" + p.id + "' lies outside the grid");
      for (const auto& q : spec.panels)
        if (q.row == p.row && q.col == p.col)
          throw GridOverflow("panel '" + p.id + "' reuses an occupied cell");
      if (spec.panels.size() + 1 >
          static_cast<std::size_t>(spec.grid_rows) * spec.grid_cols)
        throw GridOverflow("more panels than grid cells");
      spec.panels.push_back(std::move(p));
      open = &spec.panels.back();
    } else if (head == "series") {
      if (!open) cur.error("series outside a panel");
      auto kv = detail::read_pairs(cur, {"id", "kind", "visible", "points"}, {});
      Series s;
      s.id = detail::require(kv, cur, "id");
      claim(s.id, cur);
      auto kind = parse_series_kind(detail::require(kv, cur, "kind"));
      if (!kind) cur.error("kind must be line, bar or scatter");
      s.kind = *kind;
      if (auto it = kv.values.find("visible"); it != kv.values.end())
        s.visible = detail::boolean(it->second, cur);
      if (auto it = kv.values.find("points"); it != kv.values.end())
        s.points = detail::points(it->second, cur);
      if (!s.visible && !s.points.empty())
        cur.error("placeholder series cannot carry points");
      if (s.kind == SeriesKind::line)
        for (std::size_t k = 1; k < s.points.size(); ++k)
          if (s.points[k].x < s.points[k - 1].x)
            cur.error("line points must be sorted by x");
      open->series.push_back(std::move(s));
      open->legend.push_back({open->series.back().id});
    } else if (head == "annotate") {
      if (!open) cur.error("annotate outside a panel");
      auto kv = detail::read_pairs(cur, {"id", "text", "at"}, {"text"});
      Annotation a;
      a.id = detail::require(kv, cur, "id");
      claim(a.id, cur);
      a.text = detail::require(kv, cur, "text");
      auto [x, y] = detail::pair_of(detail::require(kv, cur, "at"), cur);
      a.x = x;
      a.y = y;
      open->annotations.push_back(std::move(a));
    } else if (head == "end") {
      if (!open) cur.error("'end' without an open panel");
      if (!cur.at_end()) cur.error("unexpected text after 'end'");
      open = nullptr;
    } else if (head == "chart") {
      cur.error("duplicate 'chart' header");
    } else {
      cur.error("unknown statement '" + std::string(head) + "'");
    }
    if (end == source.size()) break;
  }
  if (!have_header) throw SyntaxError(line_no, 1, "missing 'chart' header");
  if (open) throw SyntaxError(last_line, 1, "panel not closed with 'end'");
  if (spec.panels.empty()) throw SyntaxError(line_no, 1, "chart has no panels");
  return spec;
}

// Canonical text. Keys are emitted in grammar order, one element per line.
inline std::string serialize_chart(const ChartSpec& spec) {
  std::ostringstream out;
  out << "chart grid=" << spec.grid_rows << "x" << spec.grid_cols;
  if (spec.title) out << " title=" << detail::quote(*spec.title);
  out << "\n";
  for (const auto& p : spec.panels) {
    out << "panel id=" << p.id << " at=" << p.row << "," << p.col
        << " xrange=" << p.xrange.lo << ".." << p.xrange.hi
        << " yrange=" << p.yrange.lo << ".." << p.yrange.hi << "\n";
    for (const auto& s : p.series) {
      out << "series id=" << s.id << " kind=" << to_string(s.kind)
          << " visible=" << (s.visible ? "true" : "false") << " points=";
      for (const auto& pt : s.points) out << "(" << pt.x << "," << pt.y << ")";
      out << "\n";
    }
    for (const auto& a : p.annotations)
      out << "annotate id=" << a.id << " text=" << detail::quote(a.text)
          << " at=" << a.x << "," << a.y << "\n";
    out << "end\n";
  }
  return out.str();
}

}  // namespace bips
