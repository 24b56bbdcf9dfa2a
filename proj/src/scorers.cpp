#include "rankattack/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "rankattack/errors.hpp"
#include "rankattack/parallel.hpp"
#include "rankattack/subprocess.hpp"
#include "rankattack/text.hpp"

namespace rankattack {

using json = nlohmann::json;

void Bm25Params::validate() const {
    if (!(k1 > 0.0)) throw std::invalid_argument("BM25 k1 must be > 0");
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("BM25 b must be in [0, 1]");
}

std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    std::unordered_set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        for (std::string& token : tokenize(line)) words.insert(std::move(token));
    }
    return words;
}

int Ranking::rank_of(std::string_view doc_id) const {
    for (const RankedDoc& d : docs) {
        if (d.doc_id == doc_id) return d.rank;
    }
    return 0;
}

Ranking rank_by_score(std::string query_id, std::vector<ScoredDoc> scored) {
    for (const ScoredDoc& s : scored) {
        if (!std::isfinite(s.score)) {
            throw DataError(fmt::format("non-finite score for ({}, {})", query_id, s.doc_id));
        }
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    Ranking ranking{std::move(query_id), {}};
    ranking.docs.reserve(scored.size());
    int rank = 0;
    for (ScoredDoc& s : scored) ranking.docs.push_back({std::move(s.doc_id), s.score, ++rank});
    return ranking;
}

int rank_with_score(const Ranking& ranking, std::string_view doc_id, double score) {
    int ahead = 0;
    for (const RankedDoc& other : ranking.docs) {
        if (other.doc_id == doc_id) continue;
        if (other.score > score || (other.score == score && other.doc_id < doc_id)) ++ahead;
    }
    return ahead + 1;
}

std::vector<RunEntry> to_run(const Ranking& ranking, std::string_view tag) {
    std::vector<RunEntry> run;
    run.reserve(ranking.docs.size());
    for (const RankedDoc& d : ranking.docs) {
        run.push_back({ranking.query_id, d.doc_id, d.rank, d.score, std::string(tag)});
    }
    return run;
}

// --- index -----------------------------------------------------------------

std::vector<std::string> InvertedIndex::analyze(std::string_view text) const {
    std::vector<std::string> tokens = tokenize(text);
    if (!m_params.stopwords.empty()) {
        std::erase_if(tokens, [&](const std::string& t) { return m_params.stopwords.count(t) > 0; });
    }
    return tokens;
}

InvertedIndex InvertedIndex::build(const DocumentStore& store, Bm25Params params,
                                   unsigned workers) {
    params.validate();
    InvertedIndex index;
    index.m_params = std::move(params);
    index.m_doc_ids = store.ids();
    const std::size_t n = index.m_doc_ids.size();
    if (n > std::numeric_limits<std::uint32_t>::max()) {
        throw DataError("collection exceeds 2^32 documents");
    }

    // Per-document term counts in parallel, merged sequentially in doc order.
    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    using Counts = std::vector<std::pair<std::string, std::uint32_t>>;
    index.m_lengths.resize(n);
    index.m_doc_ordinals.reserve(n);
    for (std::size_t d = 0; d < n; ++d) {
        index.m_doc_ordinals.emplace(index.m_doc_ids[d], static_cast<std::uint32_t>(d));
    }
    std::uint64_t total_length = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(n, begin + kChunk);
        std::vector<Counts> counts(end - begin);
        parallel_for(end - begin, workers, [&](std::size_t i) {
            auto tokens = index.analyze(store.get(index.m_doc_ids[begin + i]));
            index.m_lengths[begin + i] = static_cast<std::uint32_t>(tokens.size());
            std::sort(tokens.begin(), tokens.end());
            Counts& local = counts[i];
            for (std::string& t : tokens) {
                if (!local.empty() && local.back().first == t) {
                    ++local.back().second;
                } else {
                    local.emplace_back(std::move(t), 1);
                }
            }
        });
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const auto doc = static_cast<std::uint32_t>(begin + i);
            total_length += index.m_lengths[doc];
            for (auto& [term, tf] : counts[i]) {
                auto [it, fresh] = index.m_terms.try_emplace(
                    std::move(term), static_cast<std::uint32_t>(index.m_postings.size()));
                if (fresh) index.m_postings.emplace_back();
                index.m_postings[it->second].push_back({doc, tf});
            }
        }
    }
    index.m_avg_length = n == 0 ? 0.0 : static_cast<double>(total_length) / static_cast<double>(n);
    return index;
}

std::uint32_t InvertedIndex::df(std::string_view term) const {
    const auto* list = postings(term);
    return list ? static_cast<std::uint32_t>(list->size()) : 0;
}

std::uint32_t InvertedIndex::doc_ordinal(std::string_view doc_id) const {
    auto it = m_doc_ordinals.find(std::string(doc_id));
    if (it == m_doc_ordinals.end()) {
        throw DataError(fmt::format("document '{}' is not indexed", doc_id));
    }
    return it->second;
}

std::uint32_t InvertedIndex::doc_length(std::string_view doc_id) const {
    return m_lengths[doc_ordinal(doc_id)];
}

const std::vector<InvertedIndex::Posting>* InvertedIndex::postings(std::string_view term) const {
    auto it = m_terms.find(std::string(term));
    return it == m_terms.end() ? nullptr : &m_postings[it->second];
}

std::uint32_t InvertedIndex::term_frequency(std::string_view term, std::string_view doc_id) const {
    const std::uint32_t doc = doc_ordinal(doc_id);
    const auto* list = postings(term);
    if (!list) return 0;
    auto it = std::lower_bound(list->begin(), list->end(), doc,
                               [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    return (it != list->end() && it->doc == doc) ? it->tf : 0;
}

// --- BM25 ------------------------------------------------------------------

Bm25::Bm25(std::shared_ptr<const InvertedIndex> index) : m_index(std::move(index)) {
    if (!m_index) throw std::invalid_argument("null index");
}

void Bm25::require_nonempty() const {
    if (m_index->num_docs() == 0) throw DataError("cannot score against an empty index");
}

double Bm25::term_weight(std::uint32_t df) const {
    const double n = static_cast<double>(m_index->num_docs());
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double Bm25::saturation(double tf, double length) const {
    const auto& p = m_index->params();
    const double avg = m_index->avg_doc_length();
    const double norm = avg > 0.0 ? length / avg : 1.0;
    return tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

double Bm25::score(std::string_view query, std::string_view doc_id) const {
    require_nonempty();
    const double length = m_index->doc_length(doc_id);
    double total = 0.0;
    for (const std::string& term : m_index->analyze(query)) {
        const std::uint32_t tf = m_index->term_frequency(term, doc_id);
        if (tf == 0) continue;
        total += term_weight(m_index->df(term)) * saturation(tf, length);
    }
    return total;
}

double Bm25::score_text(std::string_view query, std::string_view text) const {
    require_nonempty();
    const std::vector<std::string> tokens = m_index->analyze(text);
    std::unordered_map<std::string_view, std::uint32_t> tf;
    for (const std::string& t : tokens) ++tf[t];
    const double length = static_cast<double>(tokens.size());
    double total = 0.0;
    for (const std::string& term : m_index->analyze(query)) {
        auto it = tf.find(term);
        if (it == tf.end()) continue;
        total += term_weight(m_index->df(term)) * saturation(it->second, length);
    }
    return total;
}

Ranking Bm25::retrieve(const Query& query, std::size_t depth) const {
    require_nonempty();
    std::vector<double> accumulator(m_index->num_docs(), 0.0);
    std::vector<char> touched(m_index->num_docs(), 0);
    for (const std::string& term : m_index->analyze(query.text)) {
        const auto* list = m_index->postings(term);
        if (!list) continue;
        const double weight = term_weight(static_cast<std::uint32_t>(list->size()));
        for (const auto& p : *list) {
            accumulator[p.doc] += weight * saturation(p.tf, m_index->length_at(p.doc));
            touched[p.doc] = 1;
        }
    }
    std::vector<ScoredDoc> scored;
    for (std::size_t d = 0; d < accumulator.size(); ++d) {
        if (touched[d]) scored.push_back({m_index->doc_ids()[d], accumulator[d]});
    }
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    if (depth > 0 && scored.size() > depth) {
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(depth),
                          scored.end(), better);
        scored.resize(depth);
    }
    return rank_by_score(query.query_id, std::move(scored));
}

Bm25Scorer::Bm25Scorer(std::shared_ptr<const InvertedIndex> index, std::string name)
    : m_bm25(std::move(index)), m_name(std::move(name)) {}

std::vector<double> Bm25Scorer::score(std::span<const ScoreRequest> batch) {
    std::vector<double> scores;
    scores.reserve(batch.size());
    for (const ScoreRequest& r : batch) scores.push_back(m_bm25.score_text(r.query, r.text));
    return scores;
}

TokenRewardScorer::TokenRewardScorer(std::shared_ptr<Scorer> base, std::string token,
                                     double reward, std::string name)
    : m_base(std::move(base)), m_token(std::move(token)), m_reward(reward), m_name(std::move(name)) {
    if (!m_base) throw std::invalid_argument("null base scorer");
}

std::vector<double> TokenRewardScorer::score(std::span<const ScoreRequest> batch) {
    std::vector<double> scores = m_base->score(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto tokens = tokenize(batch[i].text);
        const auto hits = std::count(tokens.begin(), tokens.end(), m_token);
        scores[i] += m_reward * static_cast<double>(hits);
    }
    return scores;
}

// --- external scorer -------------------------------------------------------

class ExternalScorer::Connection {
   public:
    virtual ~Connection() = default;
    /// Sends request lines, returns response lines (handshake already stripped).
    virtual std::vector<std::string> exchange(const std::vector<std::string>& lines) = 0;
};

namespace {

void check_handshake(const std::string& line, const std::string& endpoint) {
    json reply;
    try {
        reply = json::parse(line);
    } catch (const json::exception&) {
        throw TransportError(fmt::format("{}: malformed handshake '{}'", endpoint, line));
    }
    if (reply != json::parse(kProtocolHandshake)) {
        throw TransportError(fmt::format("{}: unexpected handshake '{}'", endpoint, line));
    }
}

class SubprocessConnection final : public ExternalScorer::Connection {
   public:
    SubprocessConnection(const ScorerEndpoint& endpoint)
        : m_process(endpoint.command),
          m_timeout(static_cast<long>(endpoint.timeout_seconds * 1000.0)),
          m_name(endpoint.name) {
        auto reply = m_process.exchange(std::string(kProtocolHandshake) + "\n", 1, m_timeout);
        check_handshake(reply.front(), m_name);
    }

    std::vector<std::string> exchange(const std::vector<std::string>& lines) override {
        std::string payload;
        for (const std::string& l : lines) (payload += l) += '\n';
        return m_process.exchange(payload, lines.size(), m_timeout);
    }

   private:
    Subprocess m_process;
    std::chrono::milliseconds m_timeout;
    std::string m_name;
};

class HttpConnection final : public ExternalScorer::Connection {
   public:
    explicit HttpConnection(const ScorerEndpoint& endpoint) : m_name(endpoint.name) {
        // Split "http://host:port/path" into base and path.
        const std::string& url = endpoint.url;
        auto scheme = url.find("://");
        auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        m_base = slash == std::string::npos ? url : url.substr(0, slash);
        m_path = slash == std::string::npos ? "/" : url.substr(slash);
        m_client = std::make_unique<httplib::Client>(m_base);
        const auto seconds = static_cast<time_t>(std::max(1.0, std::ceil(endpoint.timeout_seconds)));
        m_client->set_connection_timeout(seconds, 0);
        m_client->set_read_timeout(seconds, 0);
        m_client->set_write_timeout(seconds, 0);
    }

    std::vector<std::string> exchange(const std::vector<std::string>& lines) override {
        std::string body = std::string(kProtocolHandshake) + "\n";
        for (const std::string& l : lines) (body += l) += '\n';
        auto response = m_client->Post(m_path, body, "application/x-ndjson");
        if (!response) {
            throw TransportError(fmt::format("{}: HTTP request failed ({})", m_name,
                                             httplib::to_string(response.error())),
                                 true);
        }
        if (response->status != 200) {
            throw TransportError(fmt::format("{}: HTTP status {}", m_name, response->status), true);
        }
        std::vector<std::string> out;
        std::string_view rest = response->body;
        while (!rest.empty()) {
            auto nl = rest.find('\n');
            std::string_view line = rest.substr(0, nl);
            if (!trim(line).empty()) out.emplace_back(line);
            if (nl == std::string_view::npos) break;
            rest.remove_prefix(nl + 1);
        }
        if (out.empty()) throw TransportError(fmt::format("{}: empty HTTP response", m_name));
        check_handshake(out.front(), m_name);
        out.erase(out.begin());
        return out;
    }

   private:
    std::string m_name;
    std::string m_base;
    std::string m_path;
    std::unique_ptr<httplib::Client> m_client;
};

}  // namespace

ExternalScorer::ExternalScorer(ScorerEndpoint endpoint) : m_endpoint(std::move(endpoint)) {
    if (m_endpoint.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (m_endpoint.connections == 0) throw std::invalid_argument("connections must be >= 1");
    if (!(m_endpoint.timeout_seconds > 0.0)) throw std::invalid_argument("timeout must be > 0");
    if (m_endpoint.transport == ScorerEndpoint::Transport::subprocess && m_endpoint.command.empty()) {
        throw std::invalid_argument("subprocess scorer needs a command");
    }
    if (m_endpoint.transport == ScorerEndpoint::Transport::http && m_endpoint.url.empty()) {
        throw std::invalid_argument("http scorer needs a url");
    }
}

ExternalScorer::~ExternalScorer() = default;

std::unique_ptr<ExternalScorer::Connection> ExternalScorer::acquire() {
    std::unique_lock lock(m_mutex);
    m_available.wait(lock, [&] { return !m_idle.empty() || m_open < m_endpoint.connections; });
    if (!m_idle.empty()) {
        auto connection = std::move(m_idle.back());
        m_idle.pop_back();
        return connection;
    }
    ++m_open;
    lock.unlock();
    try {
        if (m_endpoint.transport == ScorerEndpoint::Transport::http) {
            return std::make_unique<HttpConnection>(m_endpoint);
        }
        return std::make_unique<SubprocessConnection>(m_endpoint);
    } catch (...) {
        std::lock_guard relock(m_mutex);
        --m_open;
        m_available.notify_one();
        throw;
    }
}

void ExternalScorer::release(std::unique_ptr<Connection> connection) {
    std::lock_guard lock(m_mutex);
    if (connection) {
        m_idle.push_back(std::move(connection));
    } else {
        --m_open;  // broken connection is dropped
    }
    m_available.notify_one();
}

std::vector<double> ExternalScorer::score_chunk(Connection& connection,
                                                std::span<const ScoreRequest> chunk) {
    std::map<std::pair<std::string_view, std::string_view>, std::size_t> slot;
    std::vector<std::string> lines;
    lines.reserve(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
        const ScoreRequest& r = chunk[i];
        if (!slot.emplace(std::pair<std::string_view, std::string_view>(r.qid, r.docid), i).second) {
            throw TransportError(
                fmt::format("{}: duplicate join key ({}, {}) in one batch", name(), r.qid, r.docid));
        }
        lines.push_back(json{{"qid", r.qid}, {"query", r.query}, {"docid", r.docid}, {"text", r.text}}
                            .dump(-1, ' ', false, json::error_handler_t::replace));
    }
    const std::vector<std::string> replies = connection.exchange(lines);
    std::vector<double> scores(chunk.size(), std::nan(""));
    std::vector<char> filled(chunk.size(), 0);
    for (const std::string& line : replies) {
        json reply;
        try {
            reply = json::parse(line);
        } catch (const json::exception&) {
            throw TransportError(fmt::format("{}: malformed response line '{}'", name(), line));
        }
        if (!reply.is_object() || !reply.contains("qid") || !reply.contains("docid") ||
            !reply["qid"].is_string() || !reply["docid"].is_string()) {
            throw TransportError(fmt::format("{}: response lacks qid/docid: {}", name(), line));
        }
        const std::string qid = reply["qid"].get<std::string>();
        const std::string docid = reply["docid"].get<std::string>();
        auto it = slot.find({qid, docid});
        if (it == slot.end()) {
            throw TransportError(
                fmt::format("{}: response for unknown pair ({}, {})", name(), qid, docid));
        }
        if (filled[it->second]) {
            throw TransportError(fmt::format("{}: duplicate response for ({}, {})", name(), qid, docid));
        }
        if (!reply.contains("score") || !reply["score"].is_number() ||
            !std::isfinite(reply["score"].get<double>())) {
            throw TransportError(fmt::format("{}: missing or non-finite score for ({}, {})", name(),
                                             qid, docid));
        }
        scores[it->second] = reply["score"].get<double>();
        filled[it->second] = 1;
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
        if (!filled[i]) {
            throw TransportError(fmt::format("{}: no response for ({}, {})", name(), chunk[i].qid,
                                             chunk[i].docid));
        }
    }
    return scores;
}

std::vector<double> ExternalScorer::score(std::span<const ScoreRequest> batch) {
    std::vector<double> scores;
    scores.reserve(batch.size());
    for (std::size_t begin = 0; begin < batch.size(); begin += m_endpoint.batch_size) {
        const auto chunk = batch.subspan(begin, std::min(m_endpoint.batch_size, batch.size() - begin));
        auto connection = acquire();
        try {
            auto part = score_chunk(*connection, chunk);
            release(std::move(connection));
            scores.insert(scores.end(), part.begin(), part.end());
        } catch (...) {
            release(nullptr);
            throw;
        }
    }
    return scores;
}

Ranking rerank(const Query& query, std::span<const Document> candidates, Scorer& scorer) {
    if (candidates.empty()) throw std::invalid_argument("rerank needs at least one candidate");
    std::vector<ScoreRequest> batch;
    batch.reserve(candidates.size());
    for (const Document& d : candidates) batch.push_back({query.query_id, query.text, d.doc_id, d.text});
    const std::vector<double> scores = scorer.score(batch);
    if (scores.size() != candidates.size()) {
        throw TransportError(fmt::format("scorer {} returned {} scores for {} documents",
                                         scorer.name(), scores.size(), candidates.size()));
    }
    std::vector<ScoredDoc> scored;
    scored.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw TransportError(fmt::format("scorer {} returned a non-finite score for ({}, {})",
                                             scorer.name(), query.query_id, candidates[i].doc_id));
        }
        scored.push_back({candidates[i].doc_id, scores[i]});
    }
    return rank_by_score(query.query_id, std::move(scored));
}

}  // namespace rankattack
