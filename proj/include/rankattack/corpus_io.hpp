#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rankattack {

struct Document {
    std::string doc_id;
    std::string text;

    bool operator==(const Document&) const = default;
};

struct Query {
    std::string query_id;
    std::string text;

    bool operator==(const Query&) const = default;
};

struct QrelRecord {
    std::string query_id;
    std::string doc_id;
    int grade = 0;
};

struct RunEntry {
    std::string query_id;
    std::string doc_id;
    int rank = 0;
    double score = 0.0;
    std::string tag;

    bool operator==(const RunEntry&) const = default;
};

/// Read-only doc_id -> text lookup. Implementations are immutable after
/// construction and safe to share between threads.
class DocumentStore {
   public:
    virtual ~DocumentStore() = default;

    [[nodiscard]] virtual std::size_t size() const = 0;
    [[nodiscard]] virtual bool contains(std::string_view doc_id) const = 0;
    [[nodiscard]] virtual std::optional<std::string> find(std::string_view doc_id) const = 0;
    /// Ids in collection order.
    [[nodiscard]] virtual const std::vector<std::string>& ids() const = 0;

    /// Throws DataError for an unknown id.
    [[nodiscard]] std::string get(std::string_view doc_id) const;
    [[nodiscard]] Document document(std::string_view doc_id) const;
};

class InMemoryStore final : public DocumentStore {
   public:
    /// Throws DataError on a duplicate id.
    void add(Document doc);

    [[nodiscard]] std::size_t size() const override { return m_ids.size(); }
    [[nodiscard]] bool contains(std::string_view doc_id) const override;
    [[nodiscard]] std::optional<std::string> find(std::string_view doc_id) const override;
    [[nodiscard]] const std::vector<std::string>& ids() const override { return m_ids; }

   private:
    std::vector<std::string> m_ids;
    std::unordered_map<std::string, std::string> m_text;
};

/// Collection file kept on disk; only (offset, length) per document is held in
/// memory. Lookups use positional reads, so concurrent readers do not contend.
class OnDiskStore final : public DocumentStore {
   public:
    static std::unique_ptr<OnDiskStore> open(const std::filesystem::path& path);
    ~OnDiskStore() override;

    OnDiskStore(const OnDiskStore&) = delete;
    OnDiskStore& operator=(const OnDiskStore&) = delete;

    [[nodiscard]] std::size_t size() const override { return m_ids.size(); }
    [[nodiscard]] bool contains(std::string_view doc_id) const override;
    [[nodiscard]] std::optional<std::string> find(std::string_view doc_id) const override;
    [[nodiscard]] const std::vector<std::string>& ids() const override { return m_ids; }

   private:
    struct Extent {
        std::uint64_t offset;
        std::uint64_t length;
    };

    OnDiskStore() = default;

    int m_fd = -1;
    std::vector<std::string> m_ids;
    std::unordered_map<std::string, Extent> m_extents;
};

enum class StoreMode { memory, disk };

/// `doc_id<TAB>text` per line. Errors carry the line number.
std::unique_ptr<InMemoryStore> parse_collection(std::istream& in,
                                                const std::string& source = "<collection>");
std::unique_ptr<DocumentStore> load_collection(const std::filesystem::path& path, StoreMode mode);

class TopicSet {
   public:
    void add(Query query);

    [[nodiscard]] const std::vector<Query>& queries() const noexcept { return m_queries; }
    [[nodiscard]] const Query* find(std::string_view query_id) const;
    [[nodiscard]] std::size_t size() const noexcept { return m_queries.size(); }

   private:
    std::vector<Query> m_queries;
    std::unordered_map<std::string, std::size_t> m_index;
};

/// `query_id<TAB>text` per line.
TopicSet parse_topics(std::istream& in, const std::string& source = "<topics>");
TopicSet load_topics(const std::filesystem::path& path);

class QrelsTable {
   public:
    using Judgments = std::map<std::string, int, std::less<>>;

    /// Throws DataError on a conflicting duplicate pair or a negative grade.
    void add(const QrelRecord& record);

    /// std::nullopt means unjudged, which is distinct from grade 0.
    [[nodiscard]] std::optional<int> lookup(std::string_view query_id,
                                            std::string_view doc_id) const;
    [[nodiscard]] const Judgments* judgments(std::string_view query_id) const;
    [[nodiscard]] bool has_query(std::string_view query_id) const;
    [[nodiscard]] std::size_t size() const noexcept { return m_size; }

   private:
    std::map<std::string, Judgments, std::less<>> m_by_query;
    std::size_t m_size = 0;
};

/// Whitespace separated `qid iter docid grade`.
QrelsTable parse_qrels(std::istream& in, const std::string& source = "<qrels>");
QrelsTable load_qrels(const std::filesystem::path& path);

/// Six-column `qid Q0 docid rank score tag`. Lines starting with '#' are
/// header comments and are skipped.
std::vector<RunEntry> parse_run(std::istream& in, const std::string& source = "<run>");
std::vector<RunEntry> load_run(const std::filesystem::path& path);

/// Throws DataError naming the query when ranks are not 1..k without gaps in
/// order of appearance, or when a score increases with rank.
void validate_run(std::span<const RunEntry> entries);
void write_run(std::ostream& out, std::span<const RunEntry> entries);

struct QueryRun {
    std::string query_id;
    std::vector<RunEntry> entries;  // ascending rank
};

/// Groups by query in first-appearance order, sorts each group by rank and
/// keeps at most `depth` entries per query (0 keeps everything).
std::vector<QueryRun> group_run(std::span<const RunEntry> entries, std::size_t depth = 0);

}  // namespace rankattack
