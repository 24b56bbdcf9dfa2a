#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankattack/attack.hpp"
#include "rankattack/corpus_io.hpp"
#include "rankattack/metrics.hpp"
#include "rankattack/scorers.hpp"

namespace rankattack {

enum class BoundKind { lower, original, upper };

std::string_view to_string(BoundKind kind);

/// Which documents a simulated search-provider scenario lets attack.
struct BoundScenario {
    BoundKind kind = BoundKind::original;
    int rel_threshold = 2;  // grade >= threshold counts as relevant

    /// lower attacks judged non-relevant documents, upper attacks judged
    /// relevant ones, original attacks nothing. Unjudged documents never attack.
    [[nodiscard]] bool attacks(std::optional<int> grade) const;
};

struct AttackChoice {
    AttackedDocument attacked;
    double score = 0.0;
    int rank = 0;  // rank inside the original list with only this doc replaced
};

/// Scores every variant of `doc` against `query` and keeps the one with the
/// best (lowest) rank among the other candidates of `original`. The identity
/// spec is always part of the candidate set, so the result never ranks worse
/// than the unattacked document. Ties go to identity, then to the
/// lexicographically smallest spec_id.
AttackChoice best_attack_per_pair(const Query& query, const Document& doc,
                                  std::span<const AttackSpec> specs, Scorer& scorer,
                                  const Ranking& original, std::uint64_t global_seed);

struct BoundRun {
    BoundScenario scenario;
    std::vector<Ranking> rankings;        // one per query, input order
    std::vector<double> ndcg_at_10;       // per query
    std::vector<double> p_at_10;          // per query
    std::vector<std::string> flagged;     // queries without qrels
    std::size_t attacked_documents = 0;   // documents whose best variant is not identity
    MetricReport report;                  // means over queries
};

/// Re-ranks every query with the scenario's documents replaced by their best
/// attack. The original scenario is exactly the plain re-ranking.
BoundRun bound_run(std::span<const QueryCandidates> queries, const QrelsTable& qrels,
                   const BoundScenario& scenario, std::span<const AttackSpec> specs,
                   Scorer& scorer, std::uint64_t global_seed, unsigned workers = 1);

/// One table row: worst / original / best for one scorer, with paired t-tests
/// of each bound against the original over per-query values.
struct BoundsRow {
    std::string scorer;
    BoundRun lower;
    BoundRun original;
    BoundRun upper;
    TTestResult lower_ndcg_test;
    TTestResult upper_ndcg_test;
    TTestResult lower_p10_test;
    TTestResult upper_p10_test;
};

/// Bonferroni factor used for the bounds table: the two attacked scenarios.
inline constexpr int kBoundsCorrections = 2;

BoundsRow compute_bounds_row(std::span<const QueryCandidates> queries, const QrelsTable& qrels,
                             int rel_threshold, std::span<const AttackSpec> specs, Scorer& scorer,
                             std::uint64_t global_seed, unsigned workers = 1);

/// Columns (worst, original, best) x (nDCG@10, P@10); a dagger marks a
/// significant difference from the original column.
void write_bounds_text(std::ostream& out, std::span<const BoundsRow> rows);
void write_bounds_csv(std::ostream& out, std::span<const BoundsRow> rows);

}  // namespace rankattack
