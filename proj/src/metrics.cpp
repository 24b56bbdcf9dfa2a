#include "rankattack/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "rankattack/errors.hpp"

namespace rankattack {

double success_rate(std::span<const PairDelta> deltas) {
    if (deltas.empty()) throw std::invalid_argument("success_rate of an empty pair set");
    std::size_t improved = 0;
    for (const PairDelta& d : deltas) {
        if (d.rank_after < d.rank_before) ++improved;
    }
    return static_cast<double>(improved) / static_cast<double>(deltas.size());
}

double mean_rank_change(std::span<const PairDelta> deltas) {
    if (deltas.empty()) throw std::invalid_argument("mean_rank_change of an empty pair set");
    // Integer sum keeps the mean exact up to the final division.
    long long total = 0;
    for (const PairDelta& d : deltas) total += static_cast<long long>(d.rank_before) - d.rank_after;
    return static_cast<double>(total) / static_cast<double>(deltas.size());
}

std::map<int, BucketMrc> bucketed_mrc(std::span<const PairDelta> deltas, int bucket_size) {
    if (bucket_size < 1) throw std::invalid_argument("bucket_size must be >= 1");
    std::map<int, std::pair<long long, std::size_t>> sums;
    for (const PairDelta& d : deltas) {
        auto& [total, count] = sums[(d.rank_before - 1) / bucket_size];
        total += static_cast<long long>(d.rank_before) - d.rank_after;
        ++count;
    }
    std::map<int, BucketMrc> buckets;
    for (const auto& [bucket, sum] : sums) {
        buckets[bucket] = {static_cast<double>(sum.first) / static_cast<double>(sum.second),
                           sum.second};
    }
    return buckets;
}

double ndcg_at_k(const Ranking& ranking, const QrelsTable& qrels, int k) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    const auto* judged = qrels.judgments(ranking.query_id);
    if (!judged) return 0.0;
    auto gain = [](int grade) { return std::pow(2.0, grade) - 1.0; };

    std::vector<int> grades;
    for (const auto& [doc, grade] : *judged) grades.push_back(grade);
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < grades.size() && i < static_cast<std::size_t>(k); ++i) {
        ideal += gain(grades[i]) / std::log2(static_cast<double>(i) + 2.0);
    }
    if (ideal <= 0.0) return 0.0;

    double dcg = 0.0;
    for (std::size_t i = 0; i < ranking.docs.size() && i < static_cast<std::size_t>(k); ++i) {
        auto it = judged->find(ranking.docs[i].doc_id);
        if (it == judged->end()) continue;
        dcg += gain(it->second) / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / ideal;
}

double precision_at_k(const Ranking& ranking, const QrelsTable& qrels, int k, int rel_threshold) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    std::size_t relevant = 0;
    for (std::size_t i = 0; i < ranking.docs.size() && i < static_cast<std::size_t>(k); ++i) {
        auto grade = qrels.lookup(ranking.query_id, ranking.docs[i].doc_id);
        if (grade && *grade >= rel_threshold) ++relevant;
    }
    return static_cast<double>(relevant) / static_cast<double>(k);
}

TTestResult paired_ttest(std::span<const double> before, std::span<const double> after,
                         int corrections, double alpha) {
    if (before.size() != after.size()) throw std::invalid_argument("paired samples differ in size");
    if (before.size() < 2) throw std::invalid_argument("paired t-test needs at least two pairs");
    if (corrections < 1) throw std::invalid_argument("corrections must be >= 1");

    TTestResult result;
    result.n = before.size();
    result.corrections = corrections;
    result.alpha = alpha;

    std::vector<double> diff(before.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = before[i] - after[i];
    if (std::all_of(diff.begin(), diff.end(), [&](double d) { return d == diff.front(); })) {
        result.zero_variance = true;
        result.t = std::nan("");
        result.p = 1.0;
        return result;
    }
    const double n = static_cast<double>(diff.size());
    double mean = 0.0;
    for (double d : diff) mean += d;
    mean /= n;
    double ss = 0.0;
    for (double d : diff) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    result.t = mean / (sd / std::sqrt(n));
    boost::math::students_t dist(n - 1.0);
    result.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(result.t)));
    result.p = std::min(1.0, result.p);
    result.significant = result.p < alpha / static_cast<double>(corrections);
    return result;
}

MetricReport efficacy_report(std::string label, std::span<const PairDelta> deltas,
                             int corrections, int bucket_size) {
    MetricReport report;
    report.label = std::move(label);
    report.pairs = deltas.size();
    report.sr = success_rate(deltas);
    report.mrc = mean_rank_change(deltas);
    report.buckets = bucketed_mrc(deltas, bucket_size);
    if (deltas.size() >= 2) {
        std::vector<double> before;
        std::vector<double> after;
        for (const PairDelta& d : deltas) {
            before.push_back(d.rank_before);
            after.push_back(d.rank_after);
        }
        report.test = paired_ttest(before, after, corrections);
    } else {
        report.test.corrections = corrections;
        report.test.n = deltas.size();
    }
    return report;
}

int rank_or_tail(const Ranking& ranking, std::string_view doc_id) {
    int rank = ranking.rank_of(doc_id);
    return rank > 0 ? rank : static_cast<int>(ranking.docs.size()) + 1;
}

std::string format_cell(const ReportCell& cell) {
    double rounded = std::round(cell.mrc * 10.0) / 10.0;
    if (rounded == 0.0) rounded = 0.0;  // drop negative zero
    std::string out = fmt::format("{}{:.1f}", rounded >= 0.0 ? "+" : "", rounded);
    if (cell.significant) out.push_back('*');
    out += fmt::format("_{{{}", cell.sr_percent);
    if (cell.position) {
        out += fmt::format(", {}", position_letter(*cell.position));
        if (cell.repetitions) out += fmt::format(", {}", *cell.repetitions);
    }
    out.push_back('}');
    return out;
}

ReportCell parse_cell(std::string_view text) {
    auto fail = [&](std::string_view why) {
        return DataError(fmt::format("malformed report cell '{}': {}", text, why));
    };
    ReportCell cell;
    if (text.empty()) throw fail("empty");
    auto open = text.find("_{");
    if (open == std::string_view::npos || text.back() != '}') throw fail("missing _{...}");
    std::string_view head = text.substr(0, open);
    if (!head.empty() && head.back() == '*') {
        cell.significant = true;
        head.remove_suffix(1);
    }
    if (head.empty() || (head.front() != '+' && head.front() != '-')) throw fail("missing sign");
    std::string_view number = head.front() == '+' ? head.substr(1) : head;
    auto [p1, e1] = std::from_chars(number.data(), number.data() + number.size(), cell.mrc);
    if (e1 != std::errc() || p1 != number.data() + number.size()) throw fail("bad MRC");

    std::string_view body = text.substr(open + 2, text.size() - open - 3);
    std::vector<std::string_view> parts;
    while (true) {
        auto comma = body.find(',');
        std::string_view part = body.substr(0, comma);
        while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
        while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
        parts.push_back(part);
        if (comma == std::string_view::npos) break;
        body.remove_prefix(comma + 1);
    }
    if (parts.size() != 1 && parts.size() != 3) throw fail("expected 1 or 3 subscript fields");
    auto [p2, e2] =
        std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(), cell.sr_percent);
    if (e2 != std::errc() || p2 != parts[0].data() + parts[0].size()) throw fail("bad SR");
    if (parts.size() == 3) {
        cell.position = parse_position(parts[1]);
        if (!cell.position || parts[1].size() != 1) throw fail("bad position");
        int n = 0;
        auto [p3, e3] = std::from_chars(parts[2].data(), parts[2].data() + parts[2].size(), n);
        if (e3 != std::errc() || p3 != parts[2].data() + parts[2].size() || n < 1) {
            throw fail("bad repetitions");
        }
        cell.repetitions = n;
    }
    return cell;
}

ReportCell make_cell(const MetricReport& report, const std::optional<SpecIdFields>& spec) {
    ReportCell cell;
    cell.mrc = report.mrc;
    cell.sr_percent = static_cast<int>(std::lround(report.sr * 100.0));
    cell.significant = report.test.significant;
    if (spec) {
        cell.position = spec->position;
        cell.repetitions = spec->repetitions;
    }
    return cell;
}

}  // namespace rankattack
