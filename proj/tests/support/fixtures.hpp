#pragma once

#include <stdlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rankattack/corpus_io.hpp"
#include "rankattack/metrics.hpp"
#include "rankattack/scorers.hpp"
#include "rankattack/text.hpp"

namespace fixtures {

using namespace rankattack;

// Small seeded generator for property tests.
class Gen {
   public:
    explicit Gen(std::uint64_t seed) : m_rng(seed) {}

    std::uint64_t below(std::uint64_t bound) { return draw_below(m_rng, bound); }
    int between(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1))); }
    bool coin() { return below(2) == 1; }
    double unit() { return static_cast<double>(m_rng() >> 11) * 0x1.0p-53; }
    std::mt19937_64& engine() { return m_rng; }

    template <typename T>
    const T& pick(const std::vector<T>& items) { return items[below(items.size())]; }

   private:
    std::mt19937_64 m_rng;
};

// Pseudo-words made of consonant-vowel pairs. No token of the default attack
// lexicon alternates that way, so generated text never contains one.
inline std::vector<std::string> vocabulary(std::size_t size) {
    static const char* syllables[] = {"ka", "lo", "mi", "ru", "te", "zo", "pa", "ne",
                                      "su", "vi", "do", "ge", "hu", "jo", "wa", "ye"};
    std::vector<std::string> words;
    for (std::size_t i = 0; words.size() < size; ++i) {
        std::size_t x = i;
        std::string w;
        do {
            w += syllables[x % 16];
            x /= 16;
        } while (x > 0 || w.size() < 4);
        words.push_back(w);
    }
    return words;
}

inline std::string random_passage(Gen& g, const std::vector<std::string>& vocab, int lo, int hi) {
    std::string text;
    const int n = g.between(lo, hi);
    for (int i = 0; i < n; ++i) {
        if (i > 0) text += g.below(10) == 0 ? "  " : " ";
        // Skewed draw: low indices are more frequent.
        const auto a = g.below(vocab.size());
        const auto b = g.below(vocab.size());
        text += vocab[std::min(a, b)];
        if (g.below(12) == 0) text += ".";
    }
    return text;
}

struct Corpus {
    std::vector<Document> docs;
    std::vector<Query> queries;
    std::vector<QrelRecord> qrels;
};

/// `docs` passages over a lexicon-free vocabulary, `queries` short queries and
/// graded judgments (0..3) for a dozen documents per query, chosen among the
/// ones sharing a term with the query.
inline Corpus make_corpus(std::size_t docs, std::size_t queries, std::uint64_t seed) {
    Gen g(seed);
    const auto vocab = vocabulary(300);
    Corpus c;
    for (std::size_t i = 0; i < docs; ++i) {
        c.docs.push_back({"D" + std::to_string(1000 + i), random_passage(g, vocab, 15, 60)});
    }
    for (std::size_t q = 0; q < queries; ++q) {
        std::string text;
        const int n = g.between(2, 4);
        for (int k = 0; k < n; ++k) {
            if (k > 0) text += ' ';
            text += vocab[g.below(60)];
        }
        c.queries.push_back({"Q" + std::to_string(100 + q), text});
    }
    for (const Query& q : c.queries) {
        const auto terms = tokenize(q.text);
        std::vector<const Document*> matching;
        for (const Document& d : c.docs) {
            const auto words = tokenize(d.text);
            for (const auto& t : terms) {
                if (std::find(words.begin(), words.end(), t) != words.end()) {
                    matching.push_back(&d);
                    break;
                }
            }
        }
        for (std::size_t k = 0; k < matching.size() && k < 12; ++k) {
            const Document* d = matching[g.below(matching.size())];
            bool dup = false;
            for (const QrelRecord& r : c.qrels) dup |= r.query_id == q.query_id && r.doc_id == d->doc_id;
            if (!dup) c.qrels.push_back({q.query_id, d->doc_id, g.between(0, 3)});
        }
    }
    return c;
}

inline std::unique_ptr<InMemoryStore> store_of(const std::vector<Document>& docs) {
    auto store = std::make_unique<InMemoryStore>();
    for (const Document& d : docs) store->add(d);
    return store;
}

inline QrelsTable qrels_of(const std::vector<QrelRecord>& records) {
    QrelsTable table;
    for (const QrelRecord& r : records) table.add(r);
    return table;
}

inline std::vector<PairDelta> random_deltas(Gen& g, std::size_t n, int depth) {
    std::vector<PairDelta> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({"q" + std::to_string(g.below(20)), "d" + std::to_string(i), g.between(1, depth),
                       g.between(1, depth)});
    }
    return out;
}

class TempDir {
   public:
    TempDir() {
        std::string pattern = (std::filesystem::temp_directory_path() / "rankattack-XXXXXX").string();
        if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
        m_path = pattern;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(m_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return m_path; }
    std::filesystem::path operator/(const std::string& name) const { return m_path / name; }

   private:
    std::filesystem::path m_path;
};

inline void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// collection.tsv, topics.tsv and qrels.txt for a corpus.
inline void write_corpus_files(const Corpus& c, const std::filesystem::path& dir) {
    std::string collection, topics, qrels;
    for (const Document& d : c.docs) collection += d.doc_id + "\t" + d.text + "\n";
    for (const Query& q : c.queries) topics += q.query_id + "\t" + q.text + "\n";
    for (const QrelRecord& r : c.qrels) {
        qrels += r.query_id + " 0 " + r.doc_id + " " + std::to_string(r.grade) + "\n";
    }
    write_text(dir / "collection.tsv", collection);
    write_text(dir / "topics.tsv", topics);
    write_text(dir / "qrels.txt", qrels);
}

}  // namespace fixtures
