#pragma once

#include <set>
#include <string>

#include "bips/chart.hpp"
#include "bips/errors.hpp"

namespace bips {

// Names chart elements. A series counts as selected when its own id or the
// id of its panel is listed; annotations likewise.
struct ElementSelector {
  std::set<std::string> panel_ids;
  std::set<std::string> series_ids;
  std::set<std::string> annotation_ids;
  bool operator==(const ElementSelector&) const = default;

  bool selects_series(const Panel& p, const Series& s) const {
    return series_ids.count(s.id) > 0 || panel_ids.count(p.id) > 0;
  }
  bool selects_annotation(const Panel& p, const Annotation& a) const {
    return annotation_ids.count(a.id) > 0 || panel_ids.count(p.id) > 0;
  }
};

enum class EditMode { preserve_selected, ablate_selected };

// Every series and annotation of the chart.
inline ElementSelector select_all(const ChartSpec& spec) {
  ElementSelector sel;
  for (const auto& p : spec.panels) {
    for (const auto& s : p.series) sel.series_ids.insert(s.id);
    for (const auto& a : p.annotations) sel.annotation_ids.insert(a.id);
  }
  return sel;
}

inline void check_references(const ChartSpec& spec, const ElementSelector& sel) {
  for (const auto& id : sel.panel_ids)
    if (!spec.find_panel(id))
      throw DanglingReference("no panel '" + id + "'");
  for (const auto& id : sel.series_ids)
    if (!spec.find_series(id).first)
      throw DanglingReference("no series '" + id + "'");
  for (const auto& id : sel.annotation_ids)
    if (!spec.has_annotation(id))
      throw DanglingReference("no annotation '" + id + "'");
}

// Turns series into placeholders and drops annotations. Grid, panel
// positions, axis ranges and legends are never touched.
inline ChartSpec edit_remove_elements(const ChartSpec& spec,
                                      const ElementSelector& sel,
                                      EditMode mode) {
  check_references(spec, sel);
  const bool keep_selected = mode == EditMode::preserve_selected;
  ChartSpec out = spec;
  for (auto& p : out.panels) {
    for (auto& s : p.series) {
      if (sel.selects_series(p, s) != keep_selected) {
        s.visible = false;
        s.points.clear();
      }
    }
    std::erase_if(p.annotations, [&](const Annotation& a) {
      return sel.selects_annotation(p, a) != keep_selected;
    });
  }
  validate(out);
  return out;
}

}  // namespace bips
