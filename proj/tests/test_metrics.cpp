#include <gtest/gtest.h>

#include <cmath>

#include "rankattack/errors.hpp"
#include "rankattack/metrics.hpp"
#include "support/fixtures.hpp"

using namespace rankattack;
using fixtures::Gen;

namespace {

std::vector<PairDelta> deltas(std::initializer_list<std::pair<int, int>> moves) {
    std::vector<PairDelta> out;
    int i = 0;
    for (auto [before, after] : moves) out.push_back({"q", "d" + std::to_string(i++), before, after});
    return out;
}

Ranking ranking_of(std::initializer_list<const char*> ids) {
    std::vector<ScoredDoc> scored;
    double s = 100.0;
    for (const char* id : ids) scored.push_back({id, s--});
    return rank_by_score("q", scored);
}

Ranking numbered(int n) {
    std::vector<ScoredDoc> scored;
    for (int i = 1; i <= n; ++i) scored.push_back({"d" + std::to_string(100 + i), 1000.0 - i});
    return rank_by_score("q", scored);
}

}  // namespace

TEST(SuccessRate, OneOfThree) {
    EXPECT_DOUBLE_EQ(success_rate(deltas({{5, 3}, {4, 4}, {6, 9}})), 1.0 / 3.0);
    EXPECT_THROW(success_rate(std::vector<PairDelta>{}), std::invalid_argument);
}

TEST(MeanRankChange, SignedAverage) {
    EXPECT_NEAR(mean_rank_change(deltas({{5, 3}, {4, 4}, {2, 6}})), -2.0 / 3.0, 1e-12);
    EXPECT_THROW(mean_rank_change(std::vector<PairDelta>{}), std::invalid_argument);
}

TEST(Buckets, Boundaries) {
    auto b = bucketed_mrc(deltas({{1, 1}, {100, 90}, {101, 100}}));
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b.at(0).count, 2u);
    EXPECT_DOUBLE_EQ(b.at(0).mrc, 5.0);
    EXPECT_EQ(b.at(1).count, 1u);
    EXPECT_DOUBLE_EQ(b.at(1).mrc, 1.0);
    EXPECT_THROW(bucketed_mrc(deltas({{1, 1}}), 0), std::invalid_argument);
}

TEST(Buckets, UniformOneStepPromotion) {
    std::vector<PairDelta> d;
    for (int r = 1; r <= 1000; ++r) d.push_back({"q", "d" + std::to_string(r), r, std::max(1, r - 1)});
    d[0].rank_after = 0;  // 1 -> 0 keeps every bucket at exactly +1
    auto b = bucketed_mrc(d);
    ASSERT_EQ(b.size(), 10u);
    for (const auto& [bucket, value] : b) {
        EXPECT_EQ(value.count, 100u) << bucket;
        EXPECT_DOUBLE_EQ(value.mrc, 1.0) << bucket;
    }
}

TEST(Ndcg, SingleRelevant) {
    QrelsTable qrels;
    qrels.add({"q", "d101", 1});
    EXPECT_DOUBLE_EQ(ndcg_at_k(numbered(10), qrels), 1.0);
    QrelsTable second;
    second.add({"q", "d102", 1});
    EXPECT_NEAR(ndcg_at_k(numbered(10), second), 0.6309297535714575, 1e-9);
    EXPECT_NEAR(ndcg_at_k(numbered(10), second), 1.0 / std::log2(3.0), 1e-12);
}

TEST(Ndcg, NoRelevantIsZero) {
    QrelsTable qrels;
    qrels.add({"q", "d101", 0});
    EXPECT_EQ(ndcg_at_k(numbered(10), qrels), 0.0);
    EXPECT_EQ(ndcg_at_k(numbered(10), QrelsTable{}), 0.0);
}

TEST(Ndcg, IdealUsesAllJudgedDocuments) {
    QrelsTable qrels;
    qrels.add({"q", "d101", 1});
    qrels.add({"q", "elsewhere", 3});  // judged but not retrieved
    const double dcg = 1.0;
    const double ideal = 7.0 + 1.0 / std::log2(3.0);
    EXPECT_NEAR(ndcg_at_k(numbered(10), qrels), dcg / ideal, 1e-12);
}

TEST(Precision, Examples) {
    QrelsTable three;
    for (const char* d : {"d101", "d105", "d110", "d111"}) three.add({"q", d, 1});
    EXPECT_DOUBLE_EQ(precision_at_k(numbered(20), three), 0.3);

    QrelsTable all;
    for (int i = 1; i <= 10; ++i) all.add({"q", "d" + std::to_string(100 + i), 2});
    EXPECT_DOUBLE_EQ(precision_at_k(numbered(10), all), 1.0);

    QrelsTable two;
    two.add({"q", "d101", 1});
    two.add({"q", "d104", 1});
    EXPECT_DOUBLE_EQ(precision_at_k(numbered(5), two), 0.2);
}

TEST(Precision, ThresholdAppliesToGrades) {
    QrelsTable qrels;
    qrels.add({"q", "a", 1});
    qrels.add({"q", "b", 2});
    const auto r = ranking_of({"a", "b", "c"});
    EXPECT_DOUBLE_EQ(precision_at_k(r, qrels, 10, 1), 0.2);
    EXPECT_DOUBLE_EQ(precision_at_k(r, qrels, 10, 2), 0.1);
}

TEST(TTest, FrozenReferenceValues) {
    // Differences {2, 0, -4, 3, 1}; t and p from an independent statistics package.
    std::vector<double> before{7, 5, 1, 9, 4};
    std::vector<double> after{5, 5, 5, 6, 3};
    auto r = paired_ttest(before, after, 1);
    EXPECT_NEAR(r.t, 0.3310423554409472, 1e-12);
    EXPECT_NEAR(r.p, 0.7572283499374894, 1e-10);
    EXPECT_FALSE(r.significant);
    EXPECT_FALSE(r.zero_variance);
    EXPECT_EQ(r.n, 5u);
}

TEST(TTest, ZeroVariance) {
    std::vector<double> x{1, 2, 3};
    auto same = paired_ttest(x, x, 1);
    EXPECT_TRUE(same.zero_variance);
    EXPECT_FALSE(same.significant);
    std::vector<double> before{2, 3, 4, 5};
    std::vector<double> after{1, 2, 3, 4};
    auto shifted = paired_ttest(before, after, 1);
    EXPECT_TRUE(shifted.zero_variance);
    EXPECT_FALSE(shifted.significant);
}

TEST(TTest, BonferroniTightensThreshold) {
    std::vector<double> before, after;
    for (int i = 0; i < 12; ++i) {
        before.push_back(10.0 + (i % 3));
        after.push_back(9.3 + (i % 4) * 0.4);
    }
    auto single = paired_ttest(before, after, 1);
    ASSERT_LT(single.p, 0.05);
    ASSERT_GT(single.p, 0.05 / 1000);
    EXPECT_TRUE(single.significant);
    EXPECT_FALSE(paired_ttest(before, after, 1000).significant);
}

TEST(TTest, BadInput) {
    std::vector<double> one{1};
    std::vector<double> two{1, 2};
    std::vector<double> three{1, 2, 3};
    EXPECT_THROW(paired_ttest(one, one, 1), std::invalid_argument);
    EXPECT_THROW(paired_ttest(two, three, 1), std::invalid_argument);
    EXPECT_THROW(paired_ttest(two, two, 0), std::invalid_argument);
}

TEST(Cell, FormatAndParse) {
    ReportCell cell{12.8, 50, true, Position::start, 5};
    EXPECT_EQ(format_cell(cell), "+12.8*_{50, s, 5}");
    ReportCell rewrite{2.7, 52, true, std::nullopt, std::nullopt};
    EXPECT_EQ(format_cell(rewrite), "+2.7*_{52}");
    EXPECT_EQ(format_cell({-0.04, 0, false, Position::random, 1}), "+0.0_{0, r, 1}");

    auto parsed = parse_cell("+12.8*_{50, s, 5}");
    EXPECT_DOUBLE_EQ(parsed.mrc, 12.8);
    EXPECT_EQ(parsed.sr_percent, 50);
    EXPECT_TRUE(parsed.significant);
    EXPECT_EQ(parsed.position, Position::start);
    EXPECT_EQ(parsed.repetitions, 5);
    auto short_form = parse_cell("-111.7_{3}");
    EXPECT_DOUBLE_EQ(short_form.mrc, -111.7);
    EXPECT_FALSE(short_form.significant);
    EXPECT_FALSE(short_form.position.has_value());
    for (const char* bad : {"", "12.8", "+1.0_{x}", "+1.0_{1, q, 2}", "+1.0_{1, s}", "+1.0*_{1"}) {
        EXPECT_THROW(parse_cell(bad), DataError) << bad;
    }
}

TEST(Cell, FromReport) {
    auto d = deltas({{10, 5}, {10, 12}});
    auto report = efficacy_report("x", d, 1);
    auto cell = make_cell(report, SpecIdFields{"true", Position::end, 2});
    EXPECT_EQ(format_cell(cell), "+1.5_{50, e, 2}");
}

TEST(Efficacy, ReportFields) {
    auto report = efficacy_report("label", deltas({{5, 3}, {4, 4}, {6, 9}}), 3, 5);
    EXPECT_EQ(report.label, "label");
    EXPECT_EQ(report.pairs, 3u);
    EXPECT_DOUBLE_EQ(report.sr, 1.0 / 3.0);
    EXPECT_NEAR(report.mrc, -1.0 / 3.0, 1e-12);
    EXPECT_EQ(report.test.corrections, 3);
    EXPECT_EQ(report.buckets.size(), 2u);
}

TEST(RankOrTail, MissingGoesPastTheEnd) {
    const auto r = ranking_of({"a", "b"});
    EXPECT_EQ(rank_or_tail(r, "b"), 2);
    EXPECT_EQ(rank_or_tail(r, "zz"), 3);
}

// Brute-force SR/MRC, range bounds and bucket recomposition.
TEST(MetricProperty, RandomDeltaSets) {
    Gen g(99);
    for (int trial = 0; trial < 300; ++trial) {
        const int depth = g.between(1, 1000);
        auto d = fixtures::random_deltas(g, static_cast<std::size_t>(g.between(1, 400)), depth);
        std::size_t improved = 0;
        long long sum = 0;
        for (const auto& p : d) {
            improved += p.rank_after < p.rank_before ? 1 : 0;
            sum += p.rank_before - p.rank_after;
        }
        const double sr = success_rate(d);
        const double mrc = mean_rank_change(d);
        ASSERT_NEAR(sr, static_cast<double>(improved) / d.size(), 1e-12);
        ASSERT_NEAR(mrc, static_cast<double>(sum) / d.size(), 1e-12);
        ASSERT_GE(sr, 0.0);
        ASSERT_LE(sr, 1.0);
        ASSERT_LE(std::fabs(mrc), depth - 1.0);

        const int bucket = g.between(1, 200);
        double recomposed = 0.0;
        std::size_t total = 0;
        for (const auto& [b, v] : bucketed_mrc(d, bucket)) {
            recomposed += v.mrc * static_cast<double>(v.count);
            total += v.count;
        }
        ASSERT_EQ(total, d.size());
        ASSERT_NEAR(recomposed / static_cast<double>(total), mrc, 1e-12);
    }
}

TEST(MetricProperty, EffectivenessInUnitInterval) {
    Gen g(5);
    for (int trial = 0; trial < 300; ++trial) {
        QrelsTable qrels;
        const int n = g.between(1, 30);
        for (int i = 1; i <= n + 5; ++i) {
            if (g.coin()) qrels.add({"q", "d" + std::to_string(100 + i), g.between(0, 3)});
        }
        const auto r = numbered(n);
        const double nd = ndcg_at_k(r, qrels, g.between(1, 20));
        const double p = precision_at_k(r, qrels, g.between(1, 20), g.between(1, 3));
        ASSERT_GE(nd, 0.0);
        ASSERT_LE(nd, 1.0 + 1e-12);
        ASSERT_GE(p, 0.0);
        ASSERT_LE(p, 1.0);
    }
}
