#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bips/viewgen.hpp"

using namespace bips;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("bips_viewgen_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct OraclePolicy : AnswerPolicy {
  AnswerDistribution answer(const Image&, const Question& q, const ChartSpec& chart,
                            double temperature) const override {
    std::array<double, kNumOptions> logits{};
    logits.fill(-1e9);
    logits[oracle_answer(chart, q).option()] = 0.0;
    return distribution_from_logits(logits, temperature);
  }
};

struct UniformPolicy : AnswerPolicy {
  mutable std::vector<double> temperatures;
  AnswerDistribution answer(const Image&, const Question&, const ChartSpec&,
                            double temperature) const override {
    temperatures.push_back(temperature);
    return distribution_from_logits(std::array<double, kNumOptions>{}, temperature);
  }
};

struct NeverRightPolicy : AnswerPolicy {
  AnswerDistribution answer(const Image&, const Question& q, const ChartSpec&,
                            double temperature) const override {
    std::array<double, kNumOptions> logits{};
    logits[q.answer_index] = -1e9;
    return distribution_from_logits(logits, temperature);
  }
};

// Brute-force crossing count: walk both polylines on a fine common grid of
// segment pairs and count proper sign changes of the difference.
int brute_crossings(const Series& a, const Series& b) {
  auto eval = [](const Series& s, double x) {
    for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
      const double x0 = s.points[i].x.to_double(), x1 = s.points[i + 1].x.to_double();
      if (x >= x0 && x <= x1) {
        const double y0 = s.points[i].y.to_double(), y1 = s.points[i + 1].y.to_double();
        return x1 == x0 ? y0 : y0 + (y1 - y0) * (x - x0) / (x1 - x0);
      }
    }
    return 0.0;
  };
  const double lo = std::max(a.points.front().x.to_double(), b.points.front().x.to_double());
  const double hi = std::min(a.points.back().x.to_double(), b.points.back().x.to_double());
  int count = 0, last = 0;
  for (int i = 0; i <= 100000; ++i) {
    const double x = lo + (hi - lo) * i / 100000.0;
    const double d = eval(a, x) - eval(b, x);
    const int sign = d > 1e-12 ? 1 : (d < -1e-12 ? -1 : 0);
    if (sign != 0) {
      if (last != 0 && sign != last) ++count;
      last = sign;
    }
  }
  return count;
}

std::vector<std::pair<ChartSpec, Question>> question_corpus(int n, std::uint64_t seed) {
  std::vector<std::pair<ChartSpec, Question>> out;
  for (int c = 0; out.size() < static_cast<std::size_t>(n); ++c) {
    Rng rng(derive_seed(seed, c));
    auto chart = random_chart(rng);
    try {
      for (auto& q : generate_questions(chart, derive_seed(seed, c, 1), 1)) out.push_back({chart, q});
    } catch (const NoViableQuestion&) {
    }
  }
  return out;
}

void expect_same_layout(const ChartSpec& a, const ChartSpec& b) {
  ASSERT_EQ(a.grid_rows, b.grid_rows);
  ASSERT_EQ(a.grid_cols, b.grid_cols);
  ASSERT_EQ(a.title, b.title);
  ASSERT_EQ(a.panels.size(), b.panels.size());
  for (std::size_t i = 0; i < a.panels.size(); ++i) {
    ASSERT_EQ(a.panels[i].id, b.panels[i].id);
    ASSERT_EQ(a.panels[i].row, b.panels[i].row);
    ASSERT_EQ(a.panels[i].col, b.panels[i].col);
    ASSERT_EQ(a.panels[i].xrange, b.panels[i].xrange);
    ASSERT_EQ(a.panels[i].yrange, b.panels[i].yrange);
    ASSERT_EQ(a.panels[i].legend, b.panels[i].legend);
  }
}

}  // namespace

TEST(Questions, FlatLineGivesFlatTrend) {
  const auto s = parse_chart("chart grid=1x1\npanel id=p at=0,0 xrange=0..4 yrange=0..10\n"
                             "series id=A kind=line points=(0,5)(1,5)(2,5)(3,5)\nend\n");
  Rng rng(1);
  const auto q = propose_question(s, Template::trend_sign, rng);
  ASSERT_TRUE(q);
  EXPECT_EQ(q->options[q->answer_index], "flat");
  EXPECT_TRUE(is_valid_question(s, *q));
}

TEST(Questions, SingleCrossingHasNeighbourDistractors) {
  const auto s = parse_chart("chart grid=1x1\npanel id=p at=0,0 xrange=0..4 yrange=0..10\n"
                             "series id=A kind=line points=(0,1)(3,7)\n"
                             "series id=B kind=line points=(0,6)(3,2)\nend\n");
  ASSERT_EQ(brute_crossings(s.panels[0].series[0], s.panels[0].series[1]), 1);
  Rng rng(2);
  const auto q = propose_question(s, Template::count_crossings, rng);
  ASSERT_TRUE(q);
  EXPECT_EQ(q->options[q->answer_index], "1");
  std::set<std::string> distractors;
  for (int k = 0; k < kNumOptions; ++k)
    if (k != q->answer_index) distractors.insert(q->options[k]);
  EXPECT_EQ(distractors, (std::set<std::string>{"0", "2", "3"}));
}

TEST(Questions, CrossingCountAgreesWithBruteForce) {
  int checked = 0;
  for (const auto& [chart, q] : question_corpus(1500, 77)) {
    if (q.tmpl != Template::count_crossings) continue;
    const auto& a = *chart.find_series(q.params.series[0]).first;
    const auto& b = *chart.find_series(q.params.series[1]).first;
    ASSERT_EQ(q.options[q.answer_index], std::to_string(brute_crossings(a, b)));
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(Questions, NoVisibleSeriesThrows) {
  const auto s = parse_chart("chart grid=1x1\npanel id=p at=0,0 xrange=0..4 yrange=0..10\n"
                             "series id=A kind=line visible=false\nend\n");
  EXPECT_THROW(generate_questions(s, 1, 3), NoViableQuestion);
}

TEST(Questions, EveryTemplateAppearsAndValidates) {
  std::map<Template, int> seen;
  for (const auto& [chart, q] : question_corpus(1000, 5)) {
    ASSERT_TRUE(is_valid_question(chart, q));
    ++seen[q.tmpl];
  }
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(kNumTemplates));
}

TEST(Evidence, SelectorsFollowTemplateRules) {
  const auto s = parse_chart(
      "chart grid=1x2\npanel id=p1 at=0,0 xrange=0..4 yrange=0..10\n"
      "series id=A kind=line points=(0,1)(1,2)\nseries id=B kind=line points=(0,3)(1,1)\n"
      "series id=C kind=line points=(0,5)(1,0)\nend\n"
      "panel id=p2 at=0,1 xrange=0..4 yrange=0..10\nseries id=D kind=bar points=(0,4)\n"
      "series id=E kind=line visible=false\nend\n");
  Question q;
  q.tmpl = Template::value_lookup;
  q.params = {{"A"}, {}, Rational(0)};
  q.options = {"1", "2", "3", "4"};
  q.answer_index = 0;
  EXPECT_EQ(evidence_set(s, q).series_ids, (std::set<std::string>{"A"}));

  const auto pres = make_preserving_view(s, q);
  EXPECT_TRUE(pres.find_series("A").first->visible);
  EXPECT_FALSE(pres.find_series("B").first->visible);
  EXPECT_FALSE(pres.find_series("C").first->visible);
  EXPECT_EQ(oracle_answer(pres, q), Verdict::determined(0));
  const auto abl = make_ablated_view(s, q);
  EXPECT_FALSE(abl.find_series("A").first->visible);
  EXPECT_TRUE(abl.find_series("B").first->visible);
  EXPECT_EQ(abl.panels[0].legend.size(), 3u);

  q.tmpl = Template::compare_at_x;
  q.params = {{"A", "B"}, {}, Rational(0)};
  EXPECT_EQ(evidence_set(s, q).series_ids, (std::set<std::string>{"A", "B"}));

  q.tmpl = Template::count_crossings;
  q.params = {{"A", "B"}, {}, std::nullopt};
  const auto cabl = make_ablated_view(s, q);
  EXPECT_FALSE(cabl.find_series("A").first->visible);
  EXPECT_FALSE(cabl.find_series("B").first->visible);

  q.tmpl = Template::panel_compare;
  q.params = {{}, {"p1", "p2"}, std::nullopt};
  EXPECT_EQ(evidence_set(s, q).series_ids, (std::set<std::string>{"A", "B", "C", "D"}));

  Question all;
  all.tmpl = Template::panel_compare;
  all.params = {{}, {"p1", "p2"}, std::nullopt};
  EXPECT_EQ(make_preserving_view(s, all), s);
}

TEST(Evidence, OracleSweepOverThousandItems) {
  for (const auto& [chart, q] : question_corpus(1000, 9)) {
    const auto pres = make_preserving_view(chart, q);
    const auto abl = make_ablated_view(chart, q);
    ASSERT_EQ(oracle_answer(pres, q), Verdict::determined(q.answer_index)) << q.text;
    ASSERT_EQ(oracle_answer(abl, q), Verdict::undetermined()) << q.text;
    expect_same_layout(chart, pres);
    expect_same_layout(chart, abl);
  }
}

TEST(Filter, StubPolicies) {
  const auto corpus = question_corpus(1000, 21);
  const Image blank(64, 64);
  OraclePolicy oracle;
  UniformPolicy uniform;
  NeverRightPolicy never;
  int oracle_kept = 0, uniform_discarded = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& [chart, q] = corpus[i];
    oracle_kept += difficulty_filter(blank, chart, q, oracle, 8, 0.85, i).keep;
    uniform_discarded += !difficulty_filter(blank, chart, q, uniform, 8, 0.85, i).keep;
    const auto n = difficulty_filter(blank, chart, q, never, 8, 0.85, i);
    ASSERT_TRUE(n.keep);
    ASSERT_EQ(n.passes, 0);
  }
  EXPECT_EQ(oracle_kept, 0);
  EXPECT_LE(uniform_discarded, 1);
  for (double t : uniform.temperatures) ASSERT_EQ(t, 0.85);
  EXPECT_THROW(difficulty_filter(blank, corpus[0].first, corpus[0].second, oracle, 0, 0.85, 1),
               ConfigError);
}

TEST(Filter, PassCountIsBinomialInK) {
  const auto corpus = question_corpus(200, 3);
  const Image blank(64, 64);
  UniformPolicy uniform;
  double total = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto r = difficulty_filter(blank, corpus[i].first, corpus[i].second, uniform, 16, 0.85, i);
    ASSERT_LE(r.passes, 16);
    total += r.passes;
  }
  // mean 4, sd of the mean sqrt(16*0.25*0.75/200) ~ 0.12
  EXPECT_NEAR(total / corpus.size(), 4.0, 0.5);
}

TEST(Dataset, SmallRunFunnelAndDeterminism) {
  GenConfig cfg;
  cfg.target = 10;
  const auto a = temp_dir("a"), b = temp_dir("b");
  const auto ma = build_dataset(cfg, 123, a);
  const auto mb = build_dataset(cfg, 123, b);
  ASSERT_EQ(ma.records.size(), 10u);
  const auto& c = ma.counters;
  EXPECT_GE(c.generated, c.validated);
  EXPECT_GE(c.validated, c.filtered);
  EXPECT_GE(c.filtered, c.edited);
  EXPECT_GE(c.edited, c.with_pres);
  EXPECT_EQ(c.edited, 10u);
  EXPECT_EQ(file_bytes(a / "manifest.jsonl"), file_bytes(b / "manifest.jsonl"));
  EXPECT_EQ(file_bytes(a / "stats.json"), file_bytes(b / "stats.json"));
  for (const auto& r : ma.records) {
    EXPECT_EQ(file_bytes(a / r.image), file_bytes(b / r.image));
    EXPECT_EQ(file_bytes(a / r.abl_image), file_bytes(b / r.abl_image));
    EXPECT_EQ(file_bytes(a / r.dsl_path), file_bytes(b / r.dsl_path));
  }
  const auto back = read_manifest(a);
  EXPECT_EQ(back.records, ma.records);
  EXPECT_EQ(back.counters, ma.counters);

  const auto d = temp_dir("d");
  EXPECT_NE(file_bytes(a / "manifest.jsonl"), file_bytes((build_dataset(cfg, 124, d), d / "manifest.jsonl")));
}

TEST(Dataset, RecordsCarryRequiredFields) {
  GenConfig cfg;
  cfg.target = 5;
  const auto dir = temp_dir("fields");
  build_dataset(cfg, 7, dir);
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"id", "dsl_path", "question", "options", "answer_index", "image",
                            "pres_image", "abl_image", "difficulty", "seed"})
      EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["options"].size(), 4u);
    EXPECT_LT(j["difficulty"].get<int>(), 8);
  }
}

TEST(Dataset, DeskCorpusPassesBothOracles) {
  GenConfig cfg;
  cfg.target = 500;
  const auto dir = temp_dir("desk");
  const auto m = build_dataset(cfg, 2024, dir);
  ASSERT_EQ(m.records.size(), 500u);
  std::size_t with_pres = 0;
  for (const auto& r : m.records) {
    const auto item = load_item(r, dir);
    ASSERT_EQ(oracle_answer(item.chart, item.question), Verdict::determined(r.question.answer_index));
    ASSERT_EQ(oracle_answer(item.abl, item.question), Verdict::undetermined());
    if (item.pres) {
      ++with_pres;
      ASSERT_EQ(oracle_answer(*item.pres, item.question), Verdict::determined(r.question.answer_index));
      ASSERT_EQ(read_pgm(dir / *r.pres_image), rasterize(*item.pres));
    }
    ASSERT_EQ(read_pgm(dir / r.abl_image), rasterize(item.abl));
  }
  // pres share is Bernoulli(0.54) over 500 items: sd ~ 0.022
  EXPECT_NEAR(static_cast<double>(with_pres) / 500.0, 0.54, 0.1);
}

TEST(Dataset, ErrorsSurface) {
  EXPECT_THROW(read_manifest(temp_dir("missing") / "nope.jsonl"), IoError);
  const auto dir = temp_dir("malformed");
  std::ofstream(dir / "manifest.jsonl") << "{\"id\": 1}\n";
  EXPECT_THROW(read_manifest(dir), FormatError);
  GenConfig cfg;
  cfg.target = 50;
  cfg.max_attempts = 3;
  EXPECT_THROW(build_dataset(cfg, 1, temp_dir("yield")), InsufficientYield);
  EXPECT_THROW(GenConfig::from_map({{"bogus", "1"}}), ConfigError);
}
