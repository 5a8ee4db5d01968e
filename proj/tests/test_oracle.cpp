#include <gtest/gtest.h>

#include "bips/chart.hpp"
#include "bips/edit.hpp"
#include "bips/oracle.hpp"

using namespace bips;

namespace {

ChartSpec chart(const std::string& body) {
  return parse_chart("chart grid=1x2\npanel id=p1 at=0,0 xrange=0..5 yrange=0..10\n" + body +
                     "end\npanel id=p2 at=0,1 xrange=0..5 yrange=0..10\n"
                     "series id=Z kind=line points=(0,1)(1,9)\nend\n");
}

Question question(Template t, std::vector<std::string> series, std::vector<std::string> panels,
                  std::optional<Rational> x, std::array<std::string, 4> options) {
  Question q;
  q.tmpl = t;
  q.params = {std::move(series), std::move(panels), x};
  q.options = std::move(options);
  return q;
}

}  // namespace

TEST(Oracle, ValueLookupDeterminedThenAbsent) {
  auto s = chart("series id=A kind=line points=(1,3)\n");
  const auto q = question(Template::value_lookup, {"A"}, {}, Rational(1), {"3", "2", "5", "7"});
  EXPECT_EQ(oracle_answer(s, q), Verdict::determined(0));
  ElementSelector sel;
  sel.series_ids = {"A"};
  EXPECT_EQ(oracle_answer(edit_remove_elements(s, sel, EditMode::ablate_selected), q),
            Verdict::undetermined());
  // x not among the points
  const auto q2 = question(Template::value_lookup, {"A"}, {}, Rational(2), {"3", "2", "5", "7"});
  EXPECT_EQ(oracle_answer(s, q2), Verdict::undetermined());
}

TEST(Oracle, NumericOptionsCompareExactly) {
  auto s = chart("series id=A kind=line points=(1,2.5)\n");
  const auto q = question(Template::value_lookup, {"A"}, {}, Rational(1), {"5/2", "2", "3", "1"});
  EXPECT_EQ(oracle_answer(s, q), Verdict::determined(0));
  const auto dup = question(Template::value_lookup, {"A"}, {}, Rational(1), {"5/2", "2.5", "3", "1"});
  EXPECT_EQ(oracle_answer(s, dup), Verdict::undetermined());
}

TEST(Oracle, ExactTiesAreUndetermined) {
  auto s = chart("series id=A kind=line points=(0,1)(1,3)\nseries id=B kind=line points=(0,3)(1,3)\n");
  const auto cmp = question(Template::compare_at_x, {"A", "B"}, {}, Rational(1), {"A", "B", "Z", "p1"});
  EXPECT_EQ(oracle_answer(s, cmp), Verdict::undetermined());
  const auto cmp0 = question(Template::compare_at_x, {"A", "B"}, {}, Rational(0), {"A", "B", "Z", "p1"});
  EXPECT_EQ(oracle_answer(s, cmp0), Verdict::determined(1));
  const auto pc = question(Template::panel_compare, {}, {"p1", "p2"}, std::nullopt, {"0", "-6", "6", "1"});
  EXPECT_EQ(oracle_answer(s, pc), Verdict::determined(1));
  auto tied = chart("series id=A kind=line points=(0,9)\n");
  EXPECT_EQ(oracle_answer(tied, pc), Verdict::undetermined());
}

TEST(Oracle, SeriesMaxTrendAndCrossings) {
  auto s = chart(
      "series id=A kind=line points=(0,0)(1,4)(2,0)(3,4)\n"
      "series id=B kind=line points=(0,2)(3,2)\n"
      "series id=F kind=line points=(0,5)(4,5)\n");
  EXPECT_EQ(oracle_answer(s, question(Template::series_max, {"A"}, {}, {}, {"0", "4", "2", "3"})),
            Verdict::determined(1));
  EXPECT_EQ(oracle_answer(s, question(Template::trend_sign, {"F"}, {},
                                      {}, {"increasing", "flat", "decreasing", "fluctuating"})),
            Verdict::determined(1));
  EXPECT_EQ(oracle_answer(s, question(Template::trend_sign, {"A"}, {},
                                      {}, {"increasing", "flat", "decreasing", "fluctuating"})),
            Verdict::determined(3));
  // A zig-zags across y=2 three times
  EXPECT_EQ(oracle_answer(s, question(Template::count_crossings, {"A", "B"}, {}, {}, {"2", "3", "4", "1"})),
            Verdict::determined(1));
}

TEST(Oracle, TouchingIsNotCrossing) {
  auto s = chart("series id=A kind=line points=(0,0)(1,2)(2,0)\nseries id=B kind=line points=(0,2)(2,2)\n");
  EXPECT_EQ(count_crossings(s.panels[0].series[0], s.panels[0].series[1]), 0);
}

TEST(Oracle, MalformedQuestionsThrow) {
  auto s = chart("series id=A kind=line points=(1,3)\n");
  EXPECT_THROW(oracle_answer(s, question(Template::value_lookup, {"Q"}, {}, Rational(1), {"3", "2", "5", "7"})),
               DanglingReference);
  EXPECT_THROW(oracle_answer(s, question(Template::value_lookup, {"A"}, {}, std::nullopt, {"3", "2", "5", "7"})),
               DanglingReference);
  EXPECT_THROW(parse_template("pie_share"), UnknownTemplate);
  for (int t = 0; t < kNumTemplates; ++t)
    EXPECT_EQ(parse_template(to_string(static_cast<Template>(t))), static_cast<Template>(t));
}
