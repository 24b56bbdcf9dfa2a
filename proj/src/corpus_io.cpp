#include "rankattack/corpus_io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "rankattack/errors.hpp"

namespace rankattack {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) fields.push_back(line.substr(start, i - start));
    }
    return fields;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_double(std::string_view text, double& out) {
    // from_chars for double is available in libstdc++ 11.
    return parse_number(text, out);
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    return in;
}

bool is_blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(),
                       [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

}  // namespace

std::string DocumentStore::get(std::string_view doc_id) const {
    auto text = find(doc_id);
    if (!text) throw DataError(fmt::format("unknown document id '{}'", doc_id));
    return std::move(*text);
}

Document DocumentStore::document(std::string_view doc_id) const {
    return Document{std::string(doc_id), get(doc_id)};
}

void InMemoryStore::add(Document doc) {
    if (doc.doc_id.empty()) throw DataError("empty document id");
    auto [it, inserted] = m_text.try_emplace(doc.doc_id, std::move(doc.text));
    if (!inserted) throw DataError(fmt::format("duplicate document id '{}'", doc.doc_id));
    m_ids.push_back(std::move(doc.doc_id));
}

bool InMemoryStore::contains(std::string_view doc_id) const {
    return m_text.find(std::string(doc_id)) != m_text.end();
}

std::optional<std::string> InMemoryStore::find(std::string_view doc_id) const {
    auto it = m_text.find(std::string(doc_id));
    if (it == m_text.end()) return std::nullopt;
    return it->second;
}

std::unique_ptr<OnDiskStore> OnDiskStore::open(const std::filesystem::path& path) {
    std::unique_ptr<OnDiskStore> store(new OnDiskStore());
    std::ifstream in = open_input(path);
    const std::string source = path.string();
    std::string line;
    std::uint64_t offset = 0;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::uint64_t line_start = offset;
        offset += line.size() + 1;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(source, line_no, "missing TAB separator");
        std::string id = line.substr(0, tab);
        if (id.empty()) throw ParseError(source, line_no, "empty document id");
        Extent extent{line_start + tab + 1, line.size() - tab - 1};
        if (!store->m_extents.emplace(id, extent).second) {
            throw ParseError(source, line_no, fmt::format("duplicate document id '{}'", id));
        }
        store->m_ids.push_back(std::move(id));
    }
    store->m_fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (store->m_fd < 0) throw DataError(fmt::format("cannot open {}", source));
    return store;
}

OnDiskStore::~OnDiskStore() {
    if (m_fd >= 0) ::close(m_fd);
}

bool OnDiskStore::contains(std::string_view doc_id) const {
    return m_extents.find(std::string(doc_id)) != m_extents.end();
}

std::optional<std::string> OnDiskStore::find(std::string_view doc_id) const {
    auto it = m_extents.find(std::string(doc_id));
    if (it == m_extents.end()) return std::nullopt;
    std::string text(it->second.length, '\0');
    std::size_t done = 0;
    while (done < text.size()) {
        ssize_t n = ::pread(m_fd, text.data() + done, text.size() - done,
                            static_cast<off_t>(it->second.offset + done));
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
            throw DataError(fmt::format("read failed for document '{}': {}", doc_id,
                                        n < 0 ? std::strerror(errno) : "truncated file"));
        }
        done += static_cast<std::size_t>(n);
    }
    return text;
}

std::unique_ptr<InMemoryStore> parse_collection(std::istream& in, const std::string& source) {
    auto store = std::make_unique<InMemoryStore>();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(source, line_no, "missing TAB separator");
        Document doc{line.substr(0, tab), line.substr(tab + 1)};
        if (doc.doc_id.empty()) throw ParseError(source, line_no, "empty document id");
        if (store->contains(doc.doc_id)) {
            throw ParseError(source, line_no, fmt::format("duplicate document id '{}'", doc.doc_id));
        }
        store->add(std::move(doc));
    }
    return store;
}

std::unique_ptr<DocumentStore> load_collection(const std::filesystem::path& path, StoreMode mode) {
    if (mode == StoreMode::disk) return OnDiskStore::open(path);
    std::ifstream in = open_input(path);
    return parse_collection(in, path.string());
}

void TopicSet::add(Query query) {
    if (query.query_id.empty()) throw DataError("empty query id");
    if (!m_index.emplace(query.query_id, m_queries.size()).second) {
        throw DataError(fmt::format("duplicate query id '{}'", query.query_id));
    }
    m_queries.push_back(std::move(query));
}

const Query* TopicSet::find(std::string_view query_id) const {
    auto it = m_index.find(std::string(query_id));
    return it == m_index.end() ? nullptr : &m_queries[it->second];
}

TopicSet parse_topics(std::istream& in, const std::string& source) {
    TopicSet topics;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(source, line_no, "missing TAB separator");
        Query query{line.substr(0, tab), line.substr(tab + 1)};
        if (query.query_id.empty()) throw ParseError(source, line_no, "empty query id");
        if (topics.find(query.query_id)) {
            throw ParseError(source, line_no, fmt::format("duplicate query id '{}'", query.query_id));
        }
        topics.add(std::move(query));
    }
    return topics;
}

TopicSet load_topics(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    return parse_topics(in, path.string());
}

void QrelsTable::add(const QrelRecord& record) {
    if (record.grade < 0) {
        throw DataError(fmt::format("negative grade for ({}, {})", record.query_id, record.doc_id));
    }
    auto& judged = m_by_query[record.query_id];
    auto [it, inserted] = judged.emplace(record.doc_id, record.grade);
    if (inserted) {
        ++m_size;
    } else if (it->second != record.grade) {
        throw DataError(fmt::format("conflicting grades {} and {} for ({}, {})", it->second,
                                    record.grade, record.query_id, record.doc_id));
    }
}

std::optional<int> QrelsTable::lookup(std::string_view query_id, std::string_view doc_id) const {
    const Judgments* judged = judgments(query_id);
    if (!judged) return std::nullopt;
    auto it = judged->find(doc_id);
    if (it == judged->end()) return std::nullopt;
    return it->second;
}

const QrelsTable::Judgments* QrelsTable::judgments(std::string_view query_id) const {
    auto it = m_by_query.find(query_id);
    return it == m_by_query.end() ? nullptr : &it->second;
}

bool QrelsTable::has_query(std::string_view query_id) const {
    return m_by_query.find(query_id) != m_by_query.end();
}

QrelsTable parse_qrels(std::istream& in, const std::string& source) {
    QrelsTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        auto fields = split_ws(line);
        if (fields.size() != 4) {
            throw ParseError(source, line_no,
                             fmt::format("expected 4 columns, found {}", fields.size()));
        }
        QrelRecord record{std::string(fields[0]), std::string(fields[2]), 0};
        if (!parse_number(fields[3], record.grade)) {
            throw ParseError(source, line_no, fmt::format("non-integer grade '{}'", fields[3]));
        }
        try {
            table.add(record);
        } catch (const DataError& e) {
            throw ParseError(source, line_no, e.what());
        }
    }
    return table;
}

QrelsTable load_qrels(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    return parse_qrels(in, path.string());
}

std::vector<RunEntry> parse_run(std::istream& in, const std::string& source) {
    std::vector<RunEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line) || line.front() == '#') continue;
        auto fields = split_ws(line);
        if (fields.size() != 6) {
            throw ParseError(source, line_no,
                             fmt::format("expected 6 columns, found {}", fields.size()));
        }
        RunEntry entry;
        entry.query_id = std::string(fields[0]);
        entry.doc_id = std::string(fields[2]);
        if (!parse_number(fields[3], entry.rank) || entry.rank < 1) {
            throw ParseError(source, line_no, fmt::format("invalid rank '{}'", fields[3]));
        }
        if (!parse_double(fields[4], entry.score)) {
            throw ParseError(source, line_no, fmt::format("invalid score '{}'", fields[4]));
        }
        entry.tag = std::string(fields[5]);
        entries.push_back(std::move(entry));
    }
    return entries;
}

std::vector<RunEntry> load_run(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    return parse_run(in, path.string());
}

void validate_run(std::span<const RunEntry> entries) {
    struct Progress {
        int last_rank = 0;
        double last_score = 0.0;
    };
    std::unordered_map<std::string, Progress> seen;
    for (const RunEntry& e : entries) {
        auto [it, fresh] = seen.try_emplace(e.query_id);
        Progress& p = it->second;
        if (e.rank != p.last_rank + 1) {
            throw DataError(fmt::format("query '{}': rank {} follows rank {}", e.query_id, e.rank,
                                        p.last_rank));
        }
        if (!fresh && e.score > p.last_score) {
            throw DataError(fmt::format("query '{}': score {} at rank {} exceeds score {} above it",
                                        e.query_id, e.score, e.rank, p.last_score));
        }
        p.last_rank = e.rank;
        p.last_score = e.score;
    }
}

void write_run(std::ostream& out, std::span<const RunEntry> entries) {
    validate_run(entries);
    for (const RunEntry& e : entries) {
        out << fmt::format("{} Q0 {} {} {} {}\n", e.query_id, e.doc_id, e.rank, e.score, e.tag);
    }
}

std::vector<QueryRun> group_run(std::span<const RunEntry> entries, std::size_t depth) {
    std::vector<QueryRun> groups;
    std::unordered_map<std::string, std::size_t> slot;
    for (const RunEntry& e : entries) {
        auto [it, fresh] = slot.try_emplace(e.query_id, groups.size());
        if (fresh) groups.push_back(QueryRun{e.query_id, {}});
        groups[it->second].entries.push_back(e);
    }
    for (QueryRun& group : groups) {
        std::stable_sort(group.entries.begin(), group.entries.end(),
                         [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
        if (depth > 0 && group.entries.size() > depth) group.entries.resize(depth);
    }
    return groups;
}

}  // namespace rankattack
