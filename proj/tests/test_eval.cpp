#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "kgalign/eval.hpp"
#include "support/builders.hpp"
#include "support/oracles.hpp"

using namespace kgalign;

namespace {

struct LpFixture {
  std::vector<RankedAnswers> ranked;
  std::vector<EntityId> gold;
};

LpFixture random_lp(Rng& rng, std::size_t n) {
  LpFixture f;
  for (std::size_t q = 0; q < n; ++q) {
    RankedAnswers r;
    const std::size_t len = rng.uniform_index(6);
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.uniform() < 0.2) {
        r.push_back(std::nullopt);
      } else {
        r.push_back(static_cast<EntityId>(rng.uniform_index(8)));
      }
    }
    f.ranked.push_back(r);
    f.gold.push_back(static_cast<EntityId>(rng.uniform_index(8)));
  }
  return f;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(TcMetrics, WorkedExample) {
  // tp 2, fp 1, tn 1, fn 1.
  const auto r = tc_metrics({true, true, true, false, false}, {true, true, false, false, true}, 2);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.tn, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
  EXPECT_EQ(r.parse_failures, 2u);
}

TEST(TcMetrics, ZeroDenominatorsGiveZero) {
  const auto r = tc_metrics({false, false}, {false, false});
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_THROW(tc_metrics({true}, {true, false}), std::invalid_argument);
  EXPECT_THROW(tc_metrics({}, {}), std::invalid_argument);
}

TEST(TcMetrics, MatchesConfusionOracle) {
  Rng rng(17);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + rng.uniform_index(50);
    std::vector<bool> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng.uniform() < 0.5;
      gold[i] = rng.uniform() < 0.4;
    }
    const auto want = kgtest::count_confusion(pred, gold);
    const auto r = tc_metrics(pred, gold);
    ASSERT_EQ(long(r.tp), want.tp);
    ASSERT_EQ(long(r.fp), want.fp);
    ASSERT_EQ(long(r.tn), want.tn);
    ASSERT_EQ(long(r.fn), want.fn);
    const double p = want.tp + want.fp ? double(want.tp) / double(want.tp + want.fp) : 0.0;
    const double rc = want.tp + want.fn ? double(want.tp) / double(want.tp + want.fn) : 0.0;
    const double f1 = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
    EXPECT_NEAR(r.accuracy, double(want.tp + want.tn) / double(n), 1e-12);
    EXPECT_NEAR(r.precision, p, 1e-12);
    EXPECT_NEAR(r.recall, rc, 1e-12);
    EXPECT_NEAR(r.f1, f1, 1e-12);
  }
}

TEST(LpMetrics, GoldAtRankTwo) {
  const auto r = lp_metrics({{EntityId(4), EntityId(7), EntityId(1)}}, {7});
  EXPECT_EQ(r.hits_at_1, 0.0);
  EXPECT_EQ(r.hits_at_k, 1.0);
  EXPECT_EQ(r.mrr, 0.5);
}

TEST(LpMetrics, MissingGoldAndUnlinkedAnswers) {
  const auto r = lp_metrics({{std::nullopt, EntityId(3)}, {EntityId(1)}, {}}, {3, 2, 5}, 3, 4);
  EXPECT_DOUBLE_EQ(r.hits_at_1, 0.0);
  EXPECT_DOUBLE_EQ(r.hits_at_k, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.mrr, 0.5 / 3.0);
  EXPECT_EQ(r.unmatched, 4u);
  EXPECT_EQ(r.queries, 3u);
  EXPECT_THROW(lp_metrics({{}}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(lp_metrics({{}}, {1}, 0), std::invalid_argument);
}

TEST(LpMetrics, OnlyTheFirstGoldOccurrenceCounts) {
  const auto r = lp_metrics({{EntityId(2), EntityId(9), EntityId(9)}}, {9});
  EXPECT_EQ(r.mrr, 0.5);
}

TEST(LpMetrics, MatchesRankScanOracle) {
  Rng rng(23);
  for (int c = 0; c < 1000; ++c) {
    const auto f = random_lp(rng, 1 + rng.uniform_index(30));
    const std::size_t k = 1 + rng.uniform_index(5);
    const auto want = kgtest::scan_ranks(f.ranked, f.gold, k);
    const auto r = lp_metrics(f.ranked, f.gold, k);
    ASSERT_NEAR(r.hits_at_1, want.hits1, 1e-12);
    ASSERT_NEAR(r.hits_at_k, want.hitsk, 1e-12);
    ASSERT_NEAR(r.mrr, want.mrr, 1e-12);
  }
}

TEST(LpMetrics, QueryOrderDoesNotMatter) {
  Rng rng(29);
  auto f = random_lp(rng, 200);
  const auto base = lp_metrics(f.ranked, f.gold);
  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  LpFixture p;
  for (auto i : perm) {
    p.ranked.push_back(f.ranked[i]);
    p.gold.push_back(f.gold[i]);
  }
  const auto r = lp_metrics(p.ranked, p.gold);
  EXPECT_NEAR(r.hits_at_1, base.hits_at_1, 1e-12);
  EXPECT_NEAR(r.hits_at_k, base.hits_at_k, 1e-12);
  EXPECT_NEAR(r.mrr, base.mrr, 1e-12);
}

TEST(LpMetrics, CutoffBounds) {
  Rng rng(31);
  for (int c = 0; c < 200; ++c) {
    const auto f = random_lp(rng, 50);
    double prev = 0.0;
    const auto one = lp_metrics(f.ranked, f.gold, 1);
    for (std::size_t k = 1; k <= 6; ++k) {
      const auto r = lp_metrics(f.ranked, f.gold, k);
      EXPECT_GE(r.hits_at_k, prev);
      EXPECT_GE(r.hits_at_k, r.hits_at_1);
      // Every hit within the cutoff contributes at least 1/k.
      EXPECT_GE(r.mrr + 1e-12, r.hits_at_k / double(k));
      EXPECT_EQ(r.mrr, one.mrr);
      prev = r.hits_at_k;
    }
    EXPECT_GE(one.mrr, one.hits_at_1);
  }
}

TEST(Reports, JsonRoundTrip) {
  const auto tc = tc_metrics({true, false, true}, {true, true, false}, 1);
  EXPECT_EQ(tc_report_from_json(nlohmann::json::parse(to_json(tc).dump())), tc);
  const auto lp = lp_metrics({{EntityId(1), EntityId(2)}, {EntityId(3)}}, {2, 3}, 3, 1);
  EXPECT_EQ(lp_report_from_json(nlohmann::json::parse(to_json(lp).dump())), lp);
  const auto doc = lp_report_document(lp);
  EXPECT_TRUE(doc["header"].contains("mrr_convention"));
  EXPECT_EQ(lp_report_from_json(doc["metrics"]), lp);
  EXPECT_EQ(tc_report_from_json(tc_report_document(tc)["metrics"]), tc);
}

TEST(Reports, CsvFiles) {
  const auto dir = kgtest::temp_dir("eval");
  write_tc_csv(dir / "tc.csv", tc_metrics({true, false}, {true, false}));
  auto tc = lines_of(kgtest::read_file(dir / "tc.csv"));
  ASSERT_EQ(tc.size(), 2u);
  EXPECT_EQ(tc[0], "Accuracy,Precision,Recall,F1,TP,FP,TN,FN,ParseFailures");
  EXPECT_EQ(tc[1], "1.000000,1.000000,1.000000,1.000000,1,0,1,0,0");

  write_lp_csv(dir / "lp.csv", lp_metrics({{EntityId(0), EntityId(1)}}, {1}, 3));
  auto lp = lines_of(kgtest::read_file(dir / "lp.csv"));
  EXPECT_EQ(lp[0], "Hit@1,Hit@3,MRR,Queries,Unmatched");
  EXPECT_EQ(lp[1], "0.000000,1.000000,0.500000,1,0");

  LPReport a;
  a.hits_at_1 = 0.25;
  a.mrr = 0.5;
  write_robustness_csv(dir / "rob.csv", {{"Name", 0.0, a}, {"Paragraph", 0.05, a}, {"Paragraph", 0.10, a}});
  auto rob = lines_of(kgtest::read_file(dir / "rob.csv"));
  ASSERT_EQ(rob.size(), 4u);
  EXPECT_EQ(rob[0], "Description Type,Linking Noise,Hit@1,MRR");
  EXPECT_EQ(rob[1], "Name,0%,0.250000,0.500000");
  EXPECT_EQ(rob[3], "Paragraph,10%,0.250000,0.500000");
  std::filesystem::remove_all(dir);
}
