#include "rankattack/oracle_bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>

#include "rankattack/errors.hpp"
#include "rankattack/parallel.hpp"

namespace rankattack {

std::string_view to_string(BoundKind kind) {
    switch (kind) {
        case BoundKind::lower: return "lower";
        case BoundKind::original: return "original";
        case BoundKind::upper: return "upper";
    }
    return "?";
}

bool BoundScenario::attacks(std::optional<int> grade) const {
    if (!grade) return false;
    switch (kind) {
        case BoundKind::lower: return *grade < rel_threshold;
        case BoundKind::upper: return *grade >= rel_threshold;
        case BoundKind::original: return false;
    }
    return false;
}

AttackChoice best_attack_per_pair(const Query& query, const Document& doc,
                                  std::span<const AttackSpec> specs, Scorer& scorer,
                                  const Ranking& original, std::uint64_t global_seed) {
    // Identity keeps the score the document already has in the original list.
    AttackChoice best;
    best.attacked = inject(doc, AttackSpec::identity(), 0);
    const int original_rank = original.rank_of(doc.doc_id);
    if (original_rank > 0) {
        best.score = original.docs[static_cast<std::size_t>(original_rank - 1)].score;
    } else {
        ScoreRequest request{query.query_id, query.text, doc.doc_id, doc.text};
        best.score = scorer.score(std::span(&request, 1)).at(0);
    }
    best.rank = rank_with_score(original, doc.doc_id, best.score);

    std::vector<AttackedDocument> variants;
    std::vector<ScoreRequest> batch;
    for (const AttackSpec& spec : specs) {
        if (spec.is_identity()) continue;
        variants.push_back(inject(doc, spec, pair_seed(global_seed, doc.doc_id, spec.spec_id())));
        batch.push_back({query.query_id, query.text, doc.doc_id + "#" + spec.spec_id(),
                         variants.back().text});
    }
    if (batch.empty()) return best;
    const std::vector<double> scores = scorer.score(batch);
    if (scores.size() != batch.size()) {
        throw TransportError(fmt::format("scorer {} returned {} scores for {} variants",
                                         scorer.name(), scores.size(), batch.size()));
    }
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const int rank = rank_with_score(original, doc.doc_id, scores[i]);
        const bool better =
            rank < best.rank ||
            (rank == best.rank && best.attacked.spec_id != kIdentitySpecId &&
             variants[i].spec_id < best.attacked.spec_id);
        if (better) {
            best.attacked = std::move(variants[i]);
            best.score = scores[i];
            best.rank = rank;
        }
    }
    return best;
}

BoundRun bound_run(std::span<const QueryCandidates> queries, const QrelsTable& qrels,
                   const BoundScenario& scenario, std::span<const AttackSpec> specs,
                   Scorer& scorer, std::uint64_t global_seed, unsigned workers) {
    BoundRun run;
    run.scenario = scenario;
    run.rankings.resize(queries.size());
    std::vector<std::size_t> attacked(queries.size(), 0);

    parallel_for(queries.size(), workers, [&](std::size_t q) {
        const QueryCandidates& qc = queries[q];
        Ranking original = rerank(qc.query, qc.docs, scorer);
        if (scenario.kind == BoundKind::original) {
            run.rankings[q] = std::move(original);
            return;
        }
        std::vector<ScoredDoc> scored;
        scored.reserve(original.docs.size());
        std::unordered_map<std::string, const Document*> by_id;
        for (const Document& d : qc.docs) by_id.emplace(d.doc_id, &d);
        for (const RankedDoc& entry : original.docs) {
            double score = entry.score;
            if (scenario.attacks(qrels.lookup(qc.query.query_id, entry.doc_id))) {
                AttackChoice choice = best_attack_per_pair(qc.query, *by_id.at(entry.doc_id), specs,
                                                           scorer, original, global_seed);
                if (choice.attacked.spec_id != kIdentitySpecId) ++attacked[q];
                score = choice.score;
            }
            scored.push_back({entry.doc_id, score});
        }
        run.rankings[q] = rank_by_score(qc.query.query_id, std::move(scored));
    });

    run.attacked_documents = std::accumulate(attacked.begin(), attacked.end(), std::size_t{0});
    for (std::size_t q = 0; q < queries.size(); ++q) {
        if (!qrels.has_query(queries[q].query.query_id)) run.flagged.push_back(queries[q].query.query_id);
        run.ndcg_at_10.push_back(ndcg_at_k(run.rankings[q], qrels, 10));
        run.p_at_10.push_back(precision_at_k(run.rankings[q], qrels, 10, scenario.rel_threshold));
    }
    run.report.label = std::string(to_string(scenario.kind));
    run.report.pairs = queries.size();
    if (!queries.empty()) {
        const double n = static_cast<double>(queries.size());
        run.report.ndcg_at_10 = std::accumulate(run.ndcg_at_10.begin(), run.ndcg_at_10.end(), 0.0) / n;
        run.report.p_at_10 = std::accumulate(run.p_at_10.begin(), run.p_at_10.end(), 0.0) / n;
    }
    return run;
}

namespace {

TTestResult compare(const std::vector<double>& original, const std::vector<double>& attacked) {
    if (original.size() < 2) {
        TTestResult none;
        none.n = original.size();
        none.corrections = kBoundsCorrections;
        return none;
    }
    return paired_ttest(original, attacked, kBoundsCorrections);
}

}  // namespace

BoundsRow compute_bounds_row(std::span<const QueryCandidates> queries, const QrelsTable& qrels,
                             int rel_threshold, std::span<const AttackSpec> specs, Scorer& scorer,
                             std::uint64_t global_seed, unsigned workers) {
    BoundsRow row;
    row.scorer = scorer.name();
    row.original = bound_run(queries, qrels, {BoundKind::original, rel_threshold}, specs, scorer,
                             global_seed, workers);
    row.lower = bound_run(queries, qrels, {BoundKind::lower, rel_threshold}, specs, scorer,
                          global_seed, workers);
    row.upper = bound_run(queries, qrels, {BoundKind::upper, rel_threshold}, specs, scorer,
                          global_seed, workers);
    row.lower_ndcg_test = compare(row.original.ndcg_at_10, row.lower.ndcg_at_10);
    row.upper_ndcg_test = compare(row.original.ndcg_at_10, row.upper.ndcg_at_10);
    row.lower_p10_test = compare(row.original.p_at_10, row.lower.p_at_10);
    row.upper_p10_test = compare(row.original.p_at_10, row.upper.p_at_10);
    row.lower.report.test = row.lower_ndcg_test;
    row.upper.report.test = row.upper_ndcg_test;
    return row;
}

namespace {

std::string cell(double value, const TTestResult* test) {
    return fmt::format("{:.4f}{}", value, test && test->significant ? "†" : "");
}

}  // namespace

void write_bounds_text(std::ostream& out, std::span<const BoundsRow> rows) {
    std::size_t width = 6;
    for (const BoundsRow& r : rows) width = std::max(width, r.scorer.size());
    out << fmt::format("{:<{}}  {:>9} {:>9}  {:>9} {:>9}  {:>9} {:>9}\n", "", width, "worst", "",
                       "original", "", "best", "");
    out << fmt::format("{:<{}}  {:>9} {:>9}  {:>9} {:>9}  {:>9} {:>9}\n", "scorer", width,
                       "nDCG@10", "P@10", "nDCG@10", "P@10", "nDCG@10", "P@10");
    for (const BoundsRow& r : rows) {
        // Pad by code points: the dagger is three bytes wide in UTF-8.
        auto pad = [](const std::string& s) {
            const bool dagger = s.find("†") != std::string::npos;
            return std::string(9 - std::min<std::size_t>(9, s.size() - (dagger ? 2 : 0)), ' ') + s;
        };
        out << fmt::format("{:<{}}  {} {}  {} {}  {} {}\n", r.scorer, width,
                           pad(cell(r.lower.report.ndcg_at_10, &r.lower_ndcg_test)),
                           pad(cell(r.lower.report.p_at_10, &r.lower_p10_test)),
                           pad(cell(r.original.report.ndcg_at_10, nullptr)),
                           pad(cell(r.original.report.p_at_10, nullptr)),
                           pad(cell(r.upper.report.ndcg_at_10, &r.upper_ndcg_test)),
                           pad(cell(r.upper.report.p_at_10, &r.upper_p10_test)));
    }
    out << fmt::format("† paired t-test vs. original, p < 0.05 / {} (Bonferroni)\n",
                       kBoundsCorrections);
}

void write_bounds_csv(std::ostream& out, std::span<const BoundsRow> rows) {
    out << "scorer,worst_ndcg10,worst_ndcg10_p,worst_ndcg10_sig,worst_p10,worst_p10_p,worst_p10_sig,"
           "original_ndcg10,original_p10,best_ndcg10,best_ndcg10_p,best_ndcg10_sig,best_p10,"
           "best_p10_p,best_p10_sig,flagged_queries\n";
    for (const BoundsRow& r : rows) {
        auto test = [](const TTestResult& t) {
            return fmt::format("{:.6g},{}", t.p, t.significant ? 1 : 0);
        };
        out << fmt::format("{},{:.6f},{},{:.6f},{},{:.6f},{:.6f},{:.6f},{},{:.6f},{},{}\n", r.scorer,
                           r.lower.report.ndcg_at_10, test(r.lower_ndcg_test),
                           r.lower.report.p_at_10, test(r.lower_p10_test),
                           r.original.report.ndcg_at_10, r.original.report.p_at_10,
                           r.upper.report.ndcg_at_10, test(r.upper_ndcg_test),
                           r.upper.report.p_at_10, test(r.upper_p10_test),
                           r.original.flagged.size());
    }
}

}  // namespace rankattack
