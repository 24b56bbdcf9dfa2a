#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rankattack/corpus_io.hpp"

namespace rankattack {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
    std::unordered_set<std::string> stopwords;

    /// Throws std::invalid_argument unless k1 > 0 and b in [0, 1].
    void validate() const;
};

/// One stopword per line (matched after tokenization, so case-insensitive).
std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path);

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

struct RankedDoc {
    std::string doc_id;
    double score = 0.0;
    int rank = 0;  // 1-based
};

struct Ranking {
    std::string query_id;
    std::vector<RankedDoc> docs;  // ascending rank

    /// 1-based rank of doc_id, or 0 if absent.
    [[nodiscard]] int rank_of(std::string_view doc_id) const;
};

/// Descending score, ties by ascending doc_id, ranks 1..k. Throws DataError on
/// a non-finite score.
Ranking rank_by_score(std::string query_id, std::vector<ScoredDoc> scored);

/// Rank doc_id would receive if its score changed to `score` while every other
/// entry of `ranking` kept its score. Identical to re-sorting the full list.
int rank_with_score(const Ranking& ranking, std::string_view doc_id, double score);

std::vector<RunEntry> to_run(const Ranking& ranking, std::string_view tag);

/// Term statistics of a tokenized corpus. Immutable after build.
class InvertedIndex {
   public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    static InvertedIndex build(const DocumentStore& store, Bm25Params params,
                               unsigned workers = 1);

    [[nodiscard]] std::size_t num_docs() const noexcept { return m_doc_ids.size(); }
    [[nodiscard]] double avg_doc_length() const noexcept { return m_avg_length; }
    [[nodiscard]] std::uint32_t df(std::string_view term) const;
    /// Throws DataError for an unknown doc_id.
    [[nodiscard]] std::uint32_t doc_length(std::string_view doc_id) const;
    [[nodiscard]] std::uint32_t term_frequency(std::string_view term, std::string_view doc_id) const;
    [[nodiscard]] const Bm25Params& params() const noexcept { return m_params; }
    [[nodiscard]] const std::vector<std::string>& doc_ids() const noexcept { return m_doc_ids; }
    [[nodiscard]] std::size_t vocabulary_size() const noexcept { return m_postings.size(); }

    /// Tokenizes and drops stopwords exactly as indexing did.
    [[nodiscard]] std::vector<std::string> analyze(std::string_view text) const;

    [[nodiscard]] const std::vector<Posting>* postings(std::string_view term) const;
    [[nodiscard]] std::uint32_t doc_ordinal(std::string_view doc_id) const;
    [[nodiscard]] std::uint32_t length_at(std::uint32_t ordinal) const { return m_lengths[ordinal]; }

   private:
    Bm25Params m_params;
    std::vector<std::string> m_doc_ids;
    std::unordered_map<std::string, std::uint32_t> m_doc_ordinals;
    std::vector<std::uint32_t> m_lengths;
    double m_avg_length = 0.0;
    std::unordered_map<std::string, std::uint32_t> m_terms;
    std::vector<std::vector<Posting>> m_postings;
};

/// BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)), evaluated against the
/// index's frozen statistics.
class Bm25 {
   public:
    explicit Bm25(std::shared_ptr<const InvertedIndex> index);

    /// Scores an indexed document through the postings lists.
    [[nodiscard]] double score(std::string_view query, std::string_view doc_id) const;
    /// Scores arbitrary text (e.g. an attacked document) as if it had been
    /// added to the corpus without changing df, N or the average length.
    [[nodiscard]] double score_text(std::string_view query, std::string_view text) const;

    /// First-stage retrieval: top `depth` documents by BM25, ties by doc_id.
    [[nodiscard]] Ranking retrieve(const Query& query, std::size_t depth) const;

    [[nodiscard]] const InvertedIndex& index() const noexcept { return *m_index; }

   private:
    [[nodiscard]] double term_weight(std::uint32_t df) const;
    [[nodiscard]] double saturation(double tf, double length) const;
    void require_nonempty() const;

    std::shared_ptr<const InvertedIndex> m_index;
};

struct ScoreRequest {
    std::string qid;
    std::string query;
    std::string docid;
    std::string text;
};

/// R(q, d). Implementations are safe to call from several threads.
class Scorer {
   public:
    virtual ~Scorer() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    /// One finite score per request, in request order.
    virtual std::vector<double> score(std::span<const ScoreRequest> batch) = 0;
};

class Bm25Scorer final : public Scorer {
   public:
    Bm25Scorer(std::shared_ptr<const InvertedIndex> index, std::string name = "bm25");

    [[nodiscard]] std::string name() const override { return m_name; }
    std::vector<double> score(std::span<const ScoreRequest> batch) override;

    [[nodiscard]] const Bm25& bm25() const noexcept { return m_bm25; }

   private:
    Bm25 m_bm25;
    std::string m_name;
};

/// Test scorer: base score plus `reward` per occurrence of `token` among the
/// tokenized document terms.
class TokenRewardScorer final : public Scorer {
   public:
    TokenRewardScorer(std::shared_ptr<Scorer> base, std::string token, double reward,
                      std::string name);

    [[nodiscard]] std::string name() const override { return m_name; }
    std::vector<double> score(std::span<const ScoreRequest> batch) override;

   private:
    std::shared_ptr<Scorer> m_base;
    std::string m_token;
    double m_reward;
    std::string m_name;
};

class ConstantScorer final : public Scorer {
   public:
    explicit ConstantScorer(double value, std::string name = "constant")
        : m_value(value), m_name(std::move(name)) {}

    [[nodiscard]] std::string name() const override { return m_name; }
    std::vector<double> score(std::span<const ScoreRequest> batch) override {
        return std::vector<double>(batch.size(), m_value);
    }

   private:
    double m_value;
    std::string m_name;
};

inline constexpr std::string_view kProtocolHandshake = R"({"proto":"rank-attack/1"})";

struct ScorerEndpoint {
    enum class Transport { subprocess, http };

    std::string name;
    Transport transport = Transport::subprocess;
    std::vector<std::string> command;  // subprocess
    std::string url;                   // http, e.g. http://127.0.0.1:8080/score
    double timeout_seconds = 60.0;
    std::size_t batch_size = 64;
    std::size_t connections = 1;
};

/// Wire client for an external scorer (newline-delimited JSON, see README).
/// Each connection opens with the handshake line and is used by one thread at
/// a time; batches are spread over the connection pool.
class ExternalScorer final : public Scorer {
   public:
    class Connection;

    explicit ExternalScorer(ScorerEndpoint endpoint);
    ~ExternalScorer() override;

    [[nodiscard]] std::string name() const override { return m_endpoint.name; }
    /// Throws TransportError naming the offending (qid, docid) on a protocol
    /// violation, timeout, duplicate join key or non-finite score.
    std::vector<double> score(std::span<const ScoreRequest> batch) override;

   private:
    std::unique_ptr<Connection> acquire();
    void release(std::unique_ptr<Connection> connection);
    std::vector<double> score_chunk(Connection& connection, std::span<const ScoreRequest> chunk);

    ScorerEndpoint m_endpoint;
    std::mutex m_mutex;
    std::vector<std::unique_ptr<Connection>> m_idle;
    std::size_t m_open = 0;
    std::condition_variable m_available;
};

/// Orders candidates by descending score, ties by ascending doc_id.
Ranking rerank(const Query& query, std::span<const Document> candidates, Scorer& scorer);

/// A query with the first-stage candidates to re-rank, texts resolved.
struct QueryCandidates {
    Query query;
    std::vector<Document> docs;
};

}  // namespace rankattack
