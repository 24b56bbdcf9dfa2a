#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rankattack/attack.hpp"
#include "rankattack/errors.hpp"
#include "rankattack/scorers.hpp"
#include "support/fixtures.hpp"

using namespace rankattack;
using fixtures::Gen;

namespace {

std::shared_ptr<const InvertedIndex> index_of(const std::vector<Document>& docs, Bm25Params params = {}) {
    auto store = fixtures::store_of(docs);
    return std::make_shared<const InvertedIndex>(InvertedIndex::build(*store, std::move(params)));
}

ScorerEndpoint stub_endpoint(std::vector<std::string> args, double timeout = 20.0) {
    ScorerEndpoint e;
    e.name = "stub";
    e.command = {RANKATTACK_STUB, "scorer"};
    e.command.insert(e.command.end(), args.begin(), args.end());
    e.timeout_seconds = timeout;
    return e;
}

std::vector<ScoreRequest> requests(std::size_t n) {
    std::vector<ScoreRequest> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({"q" + std::to_string(i % 3), "flea true", "d" + std::to_string(i),
                       std::string(i % 4, 'a') + " true flea"});
    }
    return out;
}

}  // namespace

TEST(Index, Statistics) {
    auto index = index_of({{"d1", "a b"}, {"d2", "a"}});
    EXPECT_EQ(index->num_docs(), 2u);
    EXPECT_EQ(index->df("a"), 2u);
    EXPECT_EQ(index->df("b"), 1u);
    EXPECT_EQ(index->df("zzz"), 0u);
    EXPECT_DOUBLE_EQ(index->avg_doc_length(), 1.5);
    EXPECT_EQ(index->term_frequency("a", "d1"), 1u);
    EXPECT_THROW((void)index->doc_length("nope"), DataError);
}

TEST(Index, StopwordsAreNeverIndexed) {
    Bm25Params params;
    params.stopwords = {"a"};
    auto index = index_of({{"d1", "a b"}, {"d2", "A"}}, params);
    EXPECT_EQ(index->df("a"), 0u);
    EXPECT_EQ(index->doc_length("d1"), 1u);
    EXPECT_EQ(index->doc_length("d2"), 0u);
}

TEST(Index, WorkerCountDoesNotChangeStatistics) {
    const auto corpus = fixtures::make_corpus(300, 1, 8);
    auto store = fixtures::store_of(corpus.docs);
    auto one = InvertedIndex::build(*store, {}, 1);
    auto many = InvertedIndex::build(*store, {}, 4);
    EXPECT_EQ(one.doc_ids(), many.doc_ids());
    EXPECT_EQ(one.avg_doc_length(), many.avg_doc_length());
    EXPECT_EQ(one.vocabulary_size(), many.vocabulary_size());
    for (const auto& w : fixtures::vocabulary(80)) EXPECT_EQ(one.df(w), many.df(w));
}

TEST(Params, Validation) {
    Bm25Params p;
    EXPECT_NO_THROW(p.validate());
    p.k1 = 0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.k1 = 1.2;
    p.b = 1.5;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Bm25, GoldenTwoDocuments) {
    Bm25 bm25(index_of({{"d1", "x x y"}, {"d2", "y"}}));
    // ln(2) * 2 * 2.2 / (2 + 1.2 * (0.25 + 0.75 * 1.5)), computed independently.
    EXPECT_NEAR(bm25.score("x", "d1"), 0.8355746834147286, 1e-12);
    EXPECT_EQ(bm25.score("x", "d2"), 0.0);
    EXPECT_NEAR(bm25.score_text("x", "x x y"), 0.8355746834147286, 1e-12);
}

TEST(Bm25, AbsentTermScoresZero) {
    Bm25 bm25(index_of({{"d1", "x y"}, {"d2", "y"}}));
    EXPECT_EQ(bm25.score("nothing here", "d1"), 0.0);
    EXPECT_EQ(bm25.score_text("x", "unrelated words"), 0.0);
}

TEST(Bm25, AppendingNonQueryTokenLowersScore) {
    Bm25 bm25(index_of({{"d1", "flea remedies"}, {"d2", "dog"}, {"d3", "cat food"}}));
    const double before = bm25.score_text("flea", "flea remedies");
    const double after = bm25.score_text("flea", "flea remedies true");
    EXPECT_GT(before, 0.0);
    EXPECT_LT(after, before);
}

TEST(Bm25, EmptyIndexAndUnknownDocument) {
    Bm25 empty(index_of({}));
    EXPECT_THROW((void)empty.score_text("x", "x"), DataError);
    Bm25 bm25(index_of({{"d1", "x"}}));
    EXPECT_THROW((void)bm25.score("x", "nope"), DataError);
}

TEST(Bm25, RetrieveOrdersByScoreThenId) {
    Bm25 bm25(index_of({{"c", "x"}, {"a", "x"}, {"b", "x x"}, {"z", "y"}}));
    auto r = bm25.retrieve({"q", "x"}, 10);
    ASSERT_EQ(r.docs.size(), 3u);
    EXPECT_EQ(r.docs[0].doc_id, "b");
    EXPECT_EQ(r.docs[1].doc_id, "a");
    EXPECT_EQ(r.docs[2].doc_id, "c");
    EXPECT_EQ(bm25.retrieve({"q", "x"}, 2).docs.size(), 2u);
}

TEST(Rank, TiesBreakByDocId) {
    auto r = rank_by_score("q", {{"b", 1.0}, {"a", 1.0}, {"c", 2.0}});
    EXPECT_EQ(r.docs[0].doc_id, "c");
    EXPECT_EQ(r.docs[1].doc_id, "a");
    EXPECT_EQ(r.docs[2].doc_id, "b");
    EXPECT_EQ(r.rank_of("b"), 3);
    EXPECT_EQ(r.rank_of("x"), 0);
    EXPECT_THROW(rank_by_score("q", {{"a", std::nan("")}}), DataError);
}

TEST(Rank, RankWithScoreMatchesResort) {
    Gen g(4);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<ScoredDoc> scored;
        const int n = g.between(1, 40);
        for (int i = 0; i < n; ++i) scored.push_back({"d" + std::to_string(i), static_cast<double>(g.below(6))});
        const auto ranking = rank_by_score("q", scored);
        const auto& target = g.pick(scored).doc_id;
        const double replacement = static_cast<double>(g.below(7)) - 0.5 * g.below(2);
        for (auto& s : scored) {
            if (s.doc_id == target) s.score = replacement;
        }
        ASSERT_EQ(rank_with_score(ranking, target, replacement), rank_by_score("q", scored).rank_of(target));
    }
}

TEST(Rerank, OrdersAndPermutes) {
    auto index = index_of({{"a", "flea"}, {"b", "flea flea"}, {"c", "dog"}});
    Bm25Scorer scorer(index);
    std::vector<Document> docs{{"c", "dog"}, {"a", "flea"}, {"b", "flea flea"}};
    auto r = rerank({"q", "flea"}, docs, scorer);
    ASSERT_EQ(r.docs.size(), 3u);
    EXPECT_EQ(r.docs[0].doc_id, "b");
    EXPECT_EQ(r.docs[2].doc_id, "c");
    for (int i = 0; i < 3; ++i) EXPECT_EQ(r.docs[i].rank, i + 1);
}

// Output is a permutation of the input, does not depend on input order, and
// is unchanged by a positive affine map of the scores.
TEST(RerankProperty, PermutationAndScaleInvariance) {
    Gen g(17);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoredDoc> scored;
        const int n = g.between(1, 50);
        for (int i = 0; i < n; ++i) scored.push_back({"d" + std::to_string(i), static_cast<double>(g.below(10))});
        const auto ranking = rank_by_score("q", scored);
        ASSERT_EQ(ranking.docs.size(), scored.size());
        std::set<std::string> ids;
        for (const auto& d : ranking.docs) ids.insert(d.doc_id);
        ASSERT_EQ(ids.size(), scored.size());

        auto shuffled = scored;
        std::shuffle(shuffled.begin(), shuffled.end(), g.engine());
        auto scaled = shuffled;
        for (auto& s : scaled) s.score = 3.0 * s.score + 7.0;
        const auto a = rank_by_score("q", shuffled);
        const auto b = rank_by_score("q", scaled);
        for (std::size_t i = 0; i < ranking.docs.size(); ++i) {
            ASSERT_EQ(a.docs[i].doc_id, ranking.docs[i].doc_id);
            ASSERT_EQ(b.docs[i].doc_id, ranking.docs[i].doc_id);
        }
    }
}

TEST(TokenReward, AddsPerOccurrence) {
    auto base = std::make_shared<ConstantScorer>(1.0);
    TokenRewardScorer scorer(base, "true", 0.1, "reward");
    std::vector<ScoreRequest> batch{{"q", "x", "a", "True true, TRUE!"}, {"q", "x", "b", "untrue"}};
    auto scores = scorer.score(batch);
    EXPECT_NEAR(scores[0], 1.3, 1e-12);
    EXPECT_EQ(scores[1], 1.0);
    EXPECT_EQ(scorer.name(), "reward");
}

TEST(External, ConstantStub) {
    ExternalScorer scorer(stub_endpoint({"--mode", "constant"}));
    auto scores = scorer.score(requests(10));
    ASSERT_EQ(scores.size(), 10u);
    for (double s : scores) EXPECT_EQ(s, 0.5);
    EXPECT_TRUE(scorer.score({}).empty());
}

TEST(External, ShuffledRepliesJoinByKey) {
    auto endpoint = stub_endpoint({"--mode", "reward", "--value", "0", "--shuffle"});
    endpoint.batch_size = 16;
    ExternalScorer scorer(endpoint);
    auto batch = requests(40);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i].text.clear();
        for (std::size_t k = 0; k < i % 5; ++k) batch[i].text += "true ";
    }
    auto scores = scorer.score(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_NEAR(scores[i], 0.1 * (i % 5), 1e-12) << i;
}

TEST(External, BatchSplitInvariance) {
    auto batch = requests(50);
    std::vector<double> reference;
    for (std::size_t size : {1u, 7u, 64u}) {
        auto endpoint = stub_endpoint({"--mode", "overlap"});
        endpoint.batch_size = size;
        endpoint.connections = 2;
        ExternalScorer scorer(endpoint);
        auto scores = scorer.score(batch);
        if (reference.empty()) reference = scores;
        EXPECT_EQ(scores, reference) << "batch size " << size;
    }
}

TEST(External, ReusesConnectionAcrossCalls) {
    ExternalScorer scorer(stub_endpoint({"--mode", "overlap"}));
    auto batch = requests(5);
    EXPECT_EQ(scorer.score(batch), scorer.score(batch));
}

class ExternalFault : public ::testing::TestWithParam<const char*> {};

TEST_P(ExternalFault, RaisesTransportError) {
    auto endpoint = stub_endpoint({"--fault", GetParam()}, 2.0);
    endpoint.batch_size = 8;
    ExternalScorer scorer(endpoint);
    EXPECT_THROW(scorer.score(requests(8)), TransportError);
}

INSTANTIATE_TEST_SUITE_P(Faults, ExternalFault,
                         ::testing::Values("bad-handshake", "garbage", "drop", "duplicate", "unknown", "nan",
                                           "exit"));

TEST(External, MissingCommandFailsCleanly) {
    ScorerEndpoint e;
    e.name = "ghost";
    e.command = {"/nonexistent/scorer-binary"};
    e.timeout_seconds = 2.0;
    ExternalScorer scorer(e);
    EXPECT_THROW(scorer.score(requests(1)), TransportError);
}

TEST(External, ConstructorValidation) {
    ScorerEndpoint e;
    EXPECT_THROW(ExternalScorer{e}, std::invalid_argument);
    e.transport = ScorerEndpoint::Transport::http;
    EXPECT_THROW(ExternalScorer{e}, std::invalid_argument);
    e.url = "http://127.0.0.1:1/score";
    e.batch_size = 0;
    EXPECT_THROW(ExternalScorer{e}, std::invalid_argument);
}

namespace {

// In-process HTTP scorer answering every request with its text length.
class LengthServer {
   public:
    LengthServer() {
        m_server.Post("/score", [](const httplib::Request& req, httplib::Response& res) {
            std::string body;
            std::istringstream lines(req.body);
            std::string line;
            bool first = true;
            while (std::getline(lines, line)) {
                if (line.empty()) continue;
                if (first) {
                    body += line + "\n";
                    first = false;
                    continue;
                }
                auto j = nlohmann::json::parse(line);
                nlohmann::json reply{{"qid", j["qid"]},
                                     {"docid", j["docid"]},
                                     {"score", j["text"].get<std::string>().size() / 100.0}};
                body = body + reply.dump() + "\n";
            }
            res.set_content(body, "application/x-ndjson");
        });
        m_server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
        m_port = m_server.bind_to_any_port("127.0.0.1");
        m_thread = std::thread([this] { m_server.listen_after_bind(); });
        m_server.wait_until_ready();
    }
    ~LengthServer() {
        m_server.stop();
        m_thread.join();
    }
    [[nodiscard]] std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(m_port) + path;
    }

   private:
    httplib::Server m_server;
    int m_port = 0;
    std::thread m_thread;
};

}  // namespace

TEST(External, HttpTransport) {
    LengthServer server;
    ScorerEndpoint e;
    e.name = "http";
    e.transport = ScorerEndpoint::Transport::http;
    e.url = server.url("/score");
    e.batch_size = 3;
    ExternalScorer scorer(e);
    auto batch = requests(10);
    auto scores = scorer.score(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_DOUBLE_EQ(scores[i], batch[i].text.size() / 100.0);

    e.url = server.url("/broken");
    ExternalScorer broken(e);
    EXPECT_THROW(broken.score(batch), TransportError);
}

// Stopword-only attack tokens leave BM25 scores untouched.
TEST(StopwordProperty, InjectedStopwordsAreInvisible) {
    Gen g(31);
    const auto vocab = fixtures::vocabulary(40);
    std::vector<Document> docs;
    for (int i = 0; i < 40; ++i) docs.push_back({"d" + std::to_string(i), fixtures::random_passage(g, vocab, 5, 20)});
    Bm25Params params;
    params.stopwords = {"the", "of"};
    Bm25 bm25(index_of(docs, params));
    for (int trial = 0; trial < 300; ++trial) {
        const Document& doc = g.pick(docs);
        const std::string query = g.pick(vocab) + " " + g.pick(vocab);
        const auto spec = AttackSpec::make({g.coin() ? "the" : "The of", TokenCategory::control},
                                           static_cast<Position>(g.below(3)), g.between(1, 5));
        const auto attacked = inject(doc, spec, g.engine()());
        ASSERT_EQ(bm25.score_text(query, attacked.text), bm25.score(query, doc.doc_id));
    }
}
