#pragma once

// Deterministic grayscale rasterization of a ChartSpec, random patch masking
// and binary PGM (P5) I/O.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "bips/chart.hpp"
#include "bips/errors.hpp"
#include "bips/rng.hpp"

namespace bips {

inline constexpr std::uint8_t kBackground = 255;

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  Image() = default;
  Image(int w, int h, std::uint8_t fill = kBackground)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

struct RenderConfig {
  int width = 64;
  int height = 64;
  int margin = 3;  // pixels left of and below each data region
  std::uint8_t axis_intensity = 96;
  std::uint8_t annotation_intensity = 200;

  // Stroke intensity for the series in legend slot `slot`.
  static std::uint8_t stroke_intensity(std::size_t slot) {
    static constexpr std::array<std::uint8_t, 4> kStrokes = {0, 50, 120, 170};
    return kStrokes[slot % kStrokes.size()];
  }
};

// Pixel rectangle [x0, x1] x [y0, y1], inclusive.
struct PixelRect {
  int x0, y0, x1, y1;
  bool contains(int x, int y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
};

// Layout of one panel cell: data region plus the bands used for the legend.
struct PanelLayout {
  PixelRect cell;
  PixelRect data;
};

inline void check_config(const RenderConfig& cfg) {
  if (cfg.width < 1 || cfg.height < 1)
    throw ConfigError("image dimensions must be positive");
  if (cfg.margin < 1 || 2 * cfg.margin >= std::min(cfg.width, cfg.height))
    throw ConfigError("margin must satisfy 1 <= margin < min(width, height)/2");
}

inline PanelLayout panel_layout(const ChartSpec& spec, const Panel& p,
                                const RenderConfig& cfg) {
  const int cw = cfg.width / spec.grid_cols;
  const int ch = cfg.height / spec.grid_rows;
  PanelLayout l;
  l.cell = {p.col * cw, p.row * ch, p.col * cw + cw - 1, p.row * ch + ch - 1};
  // Legend band: rows cell.y0 .. cell.y0+2. Axis column/row sit just
  // outside the data region.
  l.data = {l.cell.x0 + cfg.margin, l.cell.y0 + 3, l.cell.x1 - 1,
            l.cell.y1 - cfg.margin};
  if (l.data.x1 - l.data.x0 < 1 || l.data.y1 - l.data.y0 < 1)
    throw ConfigError("grid too fine for the image size and margin");
  return l;
}

namespace detail {

// round((v - lo) / (hi - lo) * span) computed exactly, halves rounded up.
inline std::int64_t map_exact(const Rational& v, const Range& r, int span) {
  const Rational t = (v - r.lo) / (r.hi - r.lo) * Rational(span) + Rational(1, 2);
  return std::clamp<std::int64_t>(t.floor(), -(1 << 20), 1 << 20);
}

class Canvas {
 public:
  Canvas(Image& img, PixelRect clip) : img_(img), clip_(clip) {}

  void plot(std::int64_t x, std::int64_t y, std::uint8_t v) {
    if (x < clip_.x0 || x > clip_.x1 || y < clip_.y0 || y > clip_.y1) return;
    auto& px = img_.at(static_cast<int>(x), static_cast<int>(y));
    px = std::min(px, v);
  }

  // Integer midpoint line; covers both endpoints.
  void line(std::int64_t x0, std::int64_t y0, std::int64_t x1, std::int64_t y1,
            std::uint8_t v) {
    const std::int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    std::int64_t err = dx + dy;
    while (true) {
      plot(x0, y0, v);
      if (x0 == x1 && y0 == y1) break;
      const std::int64_t e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

 private:
  Image& img_;
  PixelRect clip_;
};

}  // namespace detail

inline Image rasterize(const ChartSpec& spec, const RenderConfig& cfg = {}) {
  check_config(cfg);
  Image img(cfg.width, cfg.height);
  for (const auto& panel : spec.panels) {
    const auto layout = panel_layout(spec, panel, cfg);
    const auto& d = layout.data;
    detail::Canvas frame(img, layout.cell);
    // Axes: y axis one column left of the data region, x axis one row below.
    frame.line(d.x0 - 1, d.y0, d.x0 - 1, d.y1 + 1, cfg.axis_intensity);
    frame.line(d.x0 - 1, d.y1 + 1, d.x1, d.y1 + 1, cfg.axis_intensity);
    // Legend stamps: a 3-pixel dash per slot, placeholders included.
    for (std::size_t slot = 0; slot < panel.legend.size(); ++slot) {
      const int x = d.x0 + 4 * static_cast<int>(slot);
      frame.line(x, layout.cell.y0 + 1, x + 2, layout.cell.y0 + 1,
                 RenderConfig::stroke_intensity(slot));
    }

    detail::Canvas data(img, d);
    const int w = d.x1 - d.x0, h = d.y1 - d.y0;
    auto col = [&](const Rational& x) {
      return d.x0 + detail::map_exact(x, panel.xrange, w);
    };
    auto row = [&](const Rational& y) {
      return d.y1 - detail::map_exact(y, panel.yrange, h);
    };
    const Rational baseline =
        std::clamp(Rational(0), panel.yrange.lo, panel.yrange.hi);
    for (std::size_t slot = 0; slot < panel.series.size(); ++slot) {
      const auto& s = panel.series[slot];
      if (!s.visible) continue;
      const auto ink = RenderConfig::stroke_intensity(slot);
      switch (s.kind) {
        case SeriesKind::line:
          if (s.points.size() == 1)
            data.plot(col(s.points[0].x), row(s.points[0].y), ink);
          for (std::size_t i = 1; i < s.points.size(); ++i)
            data.line(col(s.points[i - 1].x), row(s.points[i - 1].y),
                      col(s.points[i].x), row(s.points[i].y), ink);
          break;
        case SeriesKind::bar:
          for (const auto& p : s.points) {
            const auto c = col(p.x);
            for (int dxp = -1; dxp <= 1; ++dxp)
              data.line(c + dxp, row(baseline), c + dxp, row(p.y), ink);
          }
          break;
        case SeriesKind::scatter:
          for (const auto& p : s.points) {
            const auto c = col(p.x), r = row(p.y);
            data.plot(c, r, ink);
            data.plot(c - 1, r, ink);
            data.plot(c + 1, r, ink);
            data.plot(c, r - 1, ink);
            data.plot(c, r + 1, ink);
          }
          break;
      }
    }
    for (const auto& a : panel.annotations) {
      const auto c = col(a.x), r = row(a.y);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          data.plot(c + dx, r + dy, cfg.annotation_intensity);
    }
  }
  return img;
}

// Sets floor(fraction * patches) randomly chosen patch x patch blocks to the
// background intensity.
inline Image mask_patches(const Image& img, double fraction, int patch,
                          std::uint64_t seed) {
  if (patch < 1 || img.width % patch != 0 || img.height % patch != 0)
    throw ShapeError("image dimensions must be divisible by the patch size");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ShapeError("mask fraction must lie in [0, 1]");
  const int px = img.width / patch, py = img.height / patch;
  const std::size_t total = static_cast<std::size_t>(px) * py;
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  const auto count = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(total) + 1e-9));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i)  // partial Fisher-Yates
    std::swap(order[i], order[i + rng.below(total - i)]);
  Image out = img;
  for (std::size_t i = 0; i < count; ++i) {
    const int bx = static_cast<int>(order[i] % px) * patch;
    const int by = static_cast<int>(order[i] / px) * patch;
    for (int y = by; y < by + patch; ++y)
      for (int x = bx; x < bx + patch; ++x) out.at(x, y) = kBackground;
  }
  return out;
}

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    std::string t;
    while (pos < bytes.size() &&
           !std::isspace(static_cast<unsigned char>(bytes[pos])))
      t.push_back(bytes[pos++]);
    return t;
  };
  auto integer = [&] {
    const std::string t = token();
    if (t.empty() || t.size() > 9 ||
        !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw FormatError("malformed PGM header in '" + path.string() + "'");
    return std::stoi(t);
  };
  if (token() != "P5") throw FormatError("'" + path.string() + "' is not a P5 PGM");
  const int w = integer(), h = integer(), maxval = integer();
  if (maxval != 255) throw FormatError("PGM maxval must be 255");
  if (w < 1 || h < 1) throw FormatError("PGM dimensions must be positive");
  if (pos >= bytes.size()) throw FormatError("truncated PGM");
  ++pos;  // single whitespace before the raster
  Image img(w, h);
  if (bytes.size() - pos != img.pixels.size())
    throw FormatError("PGM raster size mismatch in '" + path.string() + "'");
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(),
            reinterpret_cast<char*>(img.pixels.data()));
  return img;
}

}  // namespace bips
