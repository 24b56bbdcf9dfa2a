#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankattack/attack.hpp"
#include "rankattack/corpus_io.hpp"
#include "rankattack/metrics.hpp"
#include "rankattack/rewrite.hpp"
#include "rankattack/scorers.hpp"

namespace rankattack {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kConfigEnvVar = "RANK_ATTACK_CONFIG";

struct ScorerConfig {
    std::string name;
    std::string type;          // bm25 | token_reward | constant | subprocess | http
    std::string base;          // token_reward: an earlier scorer
    std::string token = "true";
    double reward = 0.1;
    double value = 0.0;        // constant
    ScorerEndpoint endpoint;   // subprocess | http
    std::optional<std::filesystem::path> scores;  // precomputed scores for evaluate
};

struct GridConfig {
    std::vector<Position> positions{Position::start, Position::end, Position::random};
    std::vector<int> repetitions{1, 2, 3, 4, 5};
    bool include_identity = false;
};

struct RewriteConfig {
    bool enabled = false;
    std::optional<std::filesystem::path> prompts;
    GeneratorEndpoint generator;
    std::size_t pilot_pairs = 1000;
    unsigned in_flight = 4;
    std::string scorer;  // prompt selection; defaults to the first scorer
};

/// Effective experiment settings. Precedence, lowest first: built-in defaults,
/// config file, command-line flags. Relative paths in a config file resolve
/// against the file's directory.
struct ExperimentConfig {
    std::filesystem::path collection;
    std::filesystem::path topics;
    std::filesystem::path qrels;  // optional for attack/rerank/evaluate/rewrite
    std::filesystem::path run;    // optional; BM25 retrieval when absent
    StoreMode store = StoreMode::memory;
    std::filesystem::path output_dir = "out";
    std::vector<std::string> report_formats{"csv", "text"};
    std::optional<std::filesystem::path> lexicon;  // default lexicon when absent
    double k1 = 1.2;
    double b = 0.75;
    std::optional<std::filesystem::path> stopwords;
    GridConfig grid;
    std::optional<std::uint64_t> seed;
    std::size_t rerank_depth = 1000;
    int bucket_size = 100;
    int rel_threshold = 2;
    unsigned workers = 1;
    std::vector<ScorerConfig> scorers;  // defaults to a single bm25 scorer
    RewriteConfig rewrite;

    /// Throws UsageError on unknown keys or ill-typed values.
    static ExperimentConfig from_json(const nlohmann::json& doc,
                                      const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);

    [[nodiscard]] nlohmann::json to_json() const;
    /// Throws UsageError when an invariant does not hold.
    void validate() const;
    /// SHA-256 of the canonical JSON without settings that cannot change
    /// results (workers, in-flight cap, output directory).
    [[nodiscard]] std::string hash() const;
    [[nodiscard]] bool wants(std::string_view format) const;
};

struct SpecReport {
    AttackSpec spec;
    MetricReport report;
};

struct EvaluationResult {
    std::string scorer;
    int corrections = 1;
    std::vector<SpecReport> specs;  // grid order
    /// Best configuration per lexicon token: max MRC, ties to the smaller spec_id.
    std::vector<SpecReport> best_per_token;
};

struct RewriteResult {
    std::string scorer;
    std::vector<MetricReport> reports;  // label = spec_id
};

/// Runs the experiment stages. Intermediate files (attacked corpus, re-ranked
/// runs, score tables, rewritten corpus, bounds) start with '#' header lines;
/// a stage whose output already carries the expected header is loaded instead
/// of recomputed.
class Pipeline {
   public:
    Pipeline(ExperimentConfig config, std::ostream& log);
    ~Pipeline();

    std::filesystem::path attack();
    std::vector<Ranking> rerank(const std::string& scorer);
    void rerank_all();
    EvaluationResult evaluate(const std::string& scorer);
    void evaluate_all();
    void bounds();
    std::vector<RewriteResult> rewrite();
    void report();

    /// Names of stages loaded from disk instead of computed, in order.
    [[nodiscard]] const std::vector<std::string>& reused() const noexcept { return m_reused; }
    [[nodiscard]] const ExperimentConfig& config() const noexcept { return m_config; }

   private:
    struct State;

    std::vector<std::string> header(std::string_view stage,
                                    std::vector<std::string> extra = {}) const;
    bool up_to_date(const std::filesystem::path& path, const std::vector<std::string>& header);
    void load_inputs();
    Scorer& scorer(const std::string& name);
    const ScorerConfig& scorer_config(const std::string& name) const;
    std::vector<AttackSpec> grid() const;
    std::map<std::string, std::vector<double>> attack_scores(const std::string& scorer,
                                                             const std::vector<AttackSpec>& specs);

    ExperimentConfig m_config;
    std::ostream& m_log;
    std::unique_ptr<State> m_state;
    std::vector<std::string> m_reused;
};

/// Token table for evaluation results: one row per token, one
/// column per scorer, cells formatted by format_cell.
void write_token_table_text(std::ostream& out, std::span<const EvaluationResult> results,
                            std::span<const RewriteResult> rewrites);
void write_token_table_csv(std::ostream& out, std::span<const EvaluationResult> results,
                           std::span<const RewriteResult> rewrites);

}  // namespace rankattack
