#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rankattack/attack.hpp"
#include "rankattack/corpus_io.hpp"
#include "rankattack/scorers.hpp"

namespace rankattack {

struct PairDelta {
    std::string query_id;
    std::string doc_id;
    int rank_before = 1;  // 1-based
    int rank_after = 1;
};

/// Fraction of pairs whose rank strictly improves (rank_after < rank_before).
/// Throws std::invalid_argument on an empty list.
double success_rate(std::span<const PairDelta> deltas);

/// Mean of rank_before - rank_after; positive means the attack promoted the
/// documents. Throws std::invalid_argument on an empty list.
double mean_rank_change(std::span<const PairDelta> deltas);

struct BucketMrc {
    double mrc = 0.0;
    std::size_t count = 0;
};

/// Groups by (rank_before - 1) / bucket_size; bucket 0 holds ranks
/// 1..bucket_size. Empty buckets are absent.
std::map<int, BucketMrc> bucketed_mrc(std::span<const PairDelta> deltas, int bucket_size = 100);

/// DCG with gain 2^grade - 1 and discount log2(rank + 1), normalised by the
/// ideal DCG over every judged document of the query. Unjudged documents gain
/// nothing; a query without positive judgments scores 0.
double ndcg_at_k(const Ranking& ranking, const QrelsTable& qrels, int k = 10);

/// Relevant (grade >= rel_threshold) documents in the top k, divided by k even
/// when the ranking is shorter.
double precision_at_k(const Ranking& ranking, const QrelsTable& qrels, int k = 10,
                      int rel_threshold = 1);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool significant = false;
    bool zero_variance = false;
    std::size_t n = 0;
    int corrections = 1;
    double alpha = 0.05;
};

/// Two-sided paired Student t-test on before - after, significant iff
/// p < alpha / corrections (Bonferroni). Identical differences set
/// zero_variance and are never significant. Throws std::invalid_argument for
/// mismatched or too short inputs or corrections < 1.
TTestResult paired_ttest(std::span<const double> before, std::span<const double> after,
                         int corrections, double alpha = 0.05);

struct MetricReport {
    std::string label;
    std::size_t pairs = 0;
    double sr = 0.0;
    double mrc = 0.0;
    std::map<int, BucketMrc> buckets;
    double ndcg_at_10 = 0.0;
    double p_at_10 = 0.0;
    TTestResult test;
    std::size_t missing_documents = 0;  // pairs assigned rank = list length + 1
};

/// Attack efficacy over a set of pairs; the t-test compares per-pair ranks.
MetricReport efficacy_report(std::string label, std::span<const PairDelta> deltas,
                             int corrections, int bucket_size = 100);

/// Rank of `doc_id` in an externally produced list, or list length + 1 when it
/// is absent (the report counts those).
int rank_or_tail(const Ranking& ranking, std::string_view doc_id);

/// Table cell `+12.8*_{50, s, 5}`: MRC with one decimal and explicit sign, '*'
/// when significant, SR in percent, then optional position letter and
/// repetitions. Rewrite rows omit the last two: `+2.7*_{52}`.
struct ReportCell {
    double mrc = 0.0;
    int sr_percent = 0;
    bool significant = false;
    std::optional<Position> position;
    std::optional<int> repetitions;
};

std::string format_cell(const ReportCell& cell);
/// Throws DataError on malformed text.
ReportCell parse_cell(std::string_view text);
ReportCell make_cell(const MetricReport& report, const std::optional<SpecIdFields>& spec);

}  // namespace rankattack
