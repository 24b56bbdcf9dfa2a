#include "rankattack/runner.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "rankattack/errors.hpp"
#include "rankattack/oracle_bounds.hpp"
#include "rankattack/parallel.hpp"
#include "rankattack/text.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rankattack {
namespace {

// ---- config parsing ----

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
    if (!obj.is_object()) throw UsageError(fmt::format("{}: expected a JSON object", where));
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw UsageError(fmt::format("{}: unknown key '{}'", where, key));
        }
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, std::string_view where) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw UsageError(fmt::format("{}.{}: {}", where, key, e.what()));
    }
}

fs::path resolve(const fs::path& base, const std::string& raw) {
    fs::path p(raw);
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

std::optional<fs::path> optional_path(const json& obj, const char* key, const fs::path& base,
                                      std::string_view where) {
    auto raw = get_or<std::string>(obj, key, "", where);
    if (raw.empty()) return std::nullopt;
    return resolve(base, raw);
}

ScorerConfig parse_scorer(const json& obj, const fs::path& base) {
    check_keys(obj, {"name", "type", "base", "token", "reward", "value", "command", "url", "timeout",
                     "batch_size", "connections", "scores"},
               "scorers[]");
    ScorerConfig s;
    s.type = get_or<std::string>(obj, "type", "", "scorers[]");
    s.name = get_or<std::string>(obj, "name", s.type, "scorers[]");
    const std::string where = "scorers." + s.name;
    s.base = get_or<std::string>(obj, "base", "", where);
    s.token = get_or<std::string>(obj, "token", s.token, where);
    s.reward = get_or<double>(obj, "reward", s.reward, where);
    s.value = get_or<double>(obj, "value", s.value, where);
    s.endpoint.name = s.name;
    s.endpoint.command = get_or<std::vector<std::string>>(obj, "command", {}, where);
    s.endpoint.url = get_or<std::string>(obj, "url", "", where);
    s.endpoint.timeout_seconds = get_or<double>(obj, "timeout", s.endpoint.timeout_seconds, where);
    s.endpoint.batch_size = get_or<std::size_t>(obj, "batch_size", s.endpoint.batch_size, where);
    s.endpoint.connections = get_or<std::size_t>(obj, "connections", s.endpoint.connections, where);
    s.endpoint.transport = s.type == "http" ? ScorerEndpoint::Transport::http
                                            : ScorerEndpoint::Transport::subprocess;
    s.scores = optional_path(obj, "scores", base, where);
    return s;
}

GeneratorEndpoint parse_generator(const json& obj) {
    check_keys(obj, {"name", "transport", "url", "command", "timeout", "max_attempts"},
               "rewrite.generator");
    GeneratorEndpoint g;
    const auto transport = get_or<std::string>(obj, "transport", "stub", "rewrite.generator");
    if (transport == "stub") {
        g.transport = GeneratorEndpoint::Transport::stub;
    } else if (transport == "http") {
        g.transport = GeneratorEndpoint::Transport::http;
    } else if (transport == "subprocess") {
        g.transport = GeneratorEndpoint::Transport::subprocess;
    } else {
        throw UsageError(fmt::format("rewrite.generator.transport: unknown '{}'", transport));
    }
    g.name = get_or<std::string>(obj, "name", transport, "rewrite.generator");
    g.url = get_or<std::string>(obj, "url", "", "rewrite.generator");
    g.command = get_or<std::vector<std::string>>(obj, "command", {}, "rewrite.generator");
    g.timeout_seconds = get_or<double>(obj, "timeout", g.timeout_seconds, "rewrite.generator");
    g.max_attempts = get_or<int>(obj, "max_attempts", g.max_attempts, "rewrite.generator");
    return g;
}

std::string_view transport_name(GeneratorEndpoint::Transport t) {
    switch (t) {
        case GeneratorEndpoint::Transport::stub: return "stub";
        case GeneratorEndpoint::Transport::http: return "http";
        case GeneratorEndpoint::Transport::subprocess: return "subprocess";
    }
    return "?";
}

bool safe_name(std::string_view name) {
    return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

// ---- file helpers ----

void write_output(const fs::path& path, const std::vector<std::string>& header,
                  const std::function<void(std::ostream&)>& body) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(fmt::format("cannot write {}", tmp.string()));
        for (const std::string& line : header) out << line << '\n';
        body(out);
        out.flush();
        if (!out) throw DataError(fmt::format("write failed: {}", tmp.string()));
    }
    fs::rename(tmp, path);
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    return in;
}

std::string number(double value) { return fmt::format("{}", value); }

double parse_number(std::string_view text, const std::string& source, std::size_t line) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ParseError(source, line, fmt::format("bad number '{}'", text));
    }
    return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    while (true) {
        auto tab = line.find('\t');
        fields.push_back(line.substr(0, tab));
        if (tab == std::string_view::npos) break;
        line.remove_prefix(tab + 1);
    }
    return fields;
}

std::string score_key(std::string_view qid, std::string_view doc, std::string_view spec) {
    std::string key;
    key.reserve(qid.size() + doc.size() + spec.size() + 2);
    key.append(qid).push_back('\t');
    key.append(doc).push_back('\t');
    key.append(spec);
    return key;
}

/// `qid<TAB>doc_id<TAB>spec_id<TAB>score` lines; '#' lines skipped.
std::unordered_map<std::string, double> load_scores(const fs::path& path) {
    auto in = open_input(path);
    const std::string source = path.string();
    std::unordered_map<std::string, double> scores;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        auto fields = split_tabs(line);
        if (fields.size() != 4) throw ParseError(source, line_no, "expected 4 tab-separated fields");
        const double value = parse_number(fields[3], source, line_no);
        if (!std::isfinite(value)) throw ParseError(source, line_no, "non-finite score");
        auto [it, inserted] =
            scores.emplace(score_key(fields[0], fields[1], fields[2]), value);
        if (!inserted && it->second != value) {
            throw ParseError(source, line_no, "conflicting duplicate score");
        }
    }
    return scores;
}

std::string cell_text(const MetricReport& report, const std::optional<SpecIdFields>& fields) {
    return format_cell(make_cell(report, fields));
}

std::string test_fields(const TTestResult& t) {
    return fmt::format("{},{},{},{}", number(t.t), number(t.p), t.significant ? 1 : 0,
                       t.zero_variance ? 1 : 0);
}

}  // namespace

// ---- ExperimentConfig ----

ExperimentConfig ExperimentConfig::from_json(const json& doc, const fs::path& base) {
    check_keys(doc, {"collection", "topics", "qrels", "run", "store", "output_dir", "report_formats",
                     "lexicon", "bm25", "grid", "seed", "rerank_depth", "bucket_size", "workers",
                     "scorers", "bounds", "rewrite"},
               "config");
    ExperimentConfig c;
    c.collection = resolve(base, get_or<std::string>(doc, "collection", "", "config"));
    c.topics = resolve(base, get_or<std::string>(doc, "topics", "", "config"));
    c.qrels = resolve(base, get_or<std::string>(doc, "qrels", "", "config"));
    c.run = resolve(base, get_or<std::string>(doc, "run", "", "config"));
    const auto store = get_or<std::string>(doc, "store", "memory", "config");
    if (store == "memory") {
        c.store = StoreMode::memory;
    } else if (store == "disk") {
        c.store = StoreMode::disk;
    } else {
        throw UsageError(fmt::format("config.store: expected memory or disk, got '{}'", store));
    }
    c.output_dir = resolve(base, get_or<std::string>(doc, "output_dir", "out", "config"));
    c.report_formats = get_or(doc, "report_formats", c.report_formats, "config");
    c.lexicon = optional_path(doc, "lexicon", base, "config");
    if (doc.contains("bm25")) {
        const json& bm = doc.at("bm25");
        check_keys(bm, {"k1", "b", "stopwords"}, "bm25");
        c.k1 = get_or<double>(bm, "k1", c.k1, "bm25");
        c.b = get_or<double>(bm, "b", c.b, "bm25");
        c.stopwords = optional_path(bm, "stopwords", base, "bm25");
    }
    if (doc.contains("grid")) {
        const json& g = doc.at("grid");
        check_keys(g, {"positions", "repetitions", "include_identity"}, "grid");
        if (g.contains("positions")) {
            c.grid.positions.clear();
            for (const auto& name : get_or<std::vector<std::string>>(g, "positions", {}, "grid")) {
                auto pos = parse_position(name);
                if (!pos) throw UsageError(fmt::format("grid.positions: unknown '{}'", name));
                c.grid.positions.push_back(*pos);
            }
        }
        c.grid.repetitions = get_or(g, "repetitions", c.grid.repetitions, "grid");
        c.grid.include_identity = get_or<bool>(g, "include_identity", false, "grid");
    }
    if (doc.contains("seed") && !doc.at("seed").is_null()) {
        c.seed = get_or<std::uint64_t>(doc, "seed", 0, "config");
    }
    c.rerank_depth = get_or<std::size_t>(doc, "rerank_depth", c.rerank_depth, "config");
    c.bucket_size = get_or<int>(doc, "bucket_size", c.bucket_size, "config");
    c.workers = get_or<unsigned>(doc, "workers", c.workers, "config");
    if (doc.contains("scorers")) {
        if (!doc.at("scorers").is_array()) throw UsageError("config.scorers: expected an array");
        for (const json& s : doc.at("scorers")) c.scorers.push_back(parse_scorer(s, base));
    } else {
        ScorerConfig bm25;
        bm25.name = "bm25";
        bm25.type = "bm25";
        c.scorers.push_back(bm25);
    }
    if (doc.contains("bounds")) {
        check_keys(doc.at("bounds"), {"rel_threshold"}, "bounds");
        c.rel_threshold = get_or<int>(doc.at("bounds"), "rel_threshold", c.rel_threshold, "bounds");
    }
    if (doc.contains("rewrite") && !doc.at("rewrite").is_null()) {
        const json& r = doc.at("rewrite");
        check_keys(r, {"prompts", "generator", "pilot_pairs", "in_flight", "scorer"}, "rewrite");
        c.rewrite.enabled = true;
        c.rewrite.prompts = optional_path(r, "prompts", base, "rewrite");
        if (r.contains("generator")) c.rewrite.generator = parse_generator(r.at("generator"));
        c.rewrite.pilot_pairs = get_or<std::size_t>(r, "pilot_pairs", c.rewrite.pilot_pairs, "rewrite");
        c.rewrite.in_flight = get_or<unsigned>(r, "in_flight", c.rewrite.in_flight, "rewrite");
        c.rewrite.scorer = get_or<std::string>(r, "scorer", "", "rewrite");
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    auto in = open_input(path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(doc, path.parent_path());
}

json ExperimentConfig::to_json() const {
    auto opt = [](const std::optional<fs::path>& p) -> json {
        return p ? json(p->generic_string()) : json(nullptr);
    };
    json positions = json::array();
    for (Position p : grid.positions) positions.push_back(std::string(to_string(p)));
    json scorer_list = json::array();
    for (const ScorerConfig& s : scorers) {
        json entry = {{"name", s.name}, {"type", s.type}, {"scores", opt(s.scores)}};
        if (s.type == "token_reward") {
            entry["base"] = s.base;
            entry["token"] = s.token;
            entry["reward"] = s.reward;
        } else if (s.type == "constant") {
            entry["value"] = s.value;
        } else if (s.type == "subprocess" || s.type == "http") {
            entry["command"] = s.endpoint.command;
            entry["url"] = s.endpoint.url;
            entry["timeout"] = s.endpoint.timeout_seconds;
            entry["batch_size"] = s.endpoint.batch_size;
            entry["connections"] = s.endpoint.connections;
        }
        scorer_list.push_back(entry);
    }
    json doc = {
        {"collection", collection.generic_string()},
        {"topics", topics.generic_string()},
        {"qrels", qrels.generic_string()},
        {"run", run.generic_string()},
        {"store", store == StoreMode::memory ? "memory" : "disk"},
        {"output_dir", output_dir.generic_string()},
        {"report_formats", report_formats},
        {"lexicon", opt(lexicon)},
        {"bm25", {{"k1", k1}, {"b", b}, {"stopwords", opt(stopwords)}}},
        {"grid",
         {{"positions", positions},
          {"repetitions", grid.repetitions},
          {"include_identity", grid.include_identity}}},
        {"seed", seed ? json(*seed) : json(nullptr)},
        {"rerank_depth", rerank_depth},
        {"bucket_size", bucket_size},
        {"workers", workers},
        {"scorers", scorer_list},
        {"bounds", {{"rel_threshold", rel_threshold}}},
    };
    if (rewrite.enabled) {
        const GeneratorEndpoint& g = rewrite.generator;
        doc["rewrite"] = {{"prompts", opt(rewrite.prompts)},
                          {"generator",
                           {{"name", g.name},
                            {"transport", std::string(transport_name(g.transport))},
                            {"url", g.url},
                            {"command", g.command},
                            {"timeout", g.timeout_seconds},
                            {"max_attempts", g.max_attempts}}},
                          {"pilot_pairs", rewrite.pilot_pairs},
                          {"in_flight", rewrite.in_flight},
                          {"scorer", rewrite.scorer}};
    } else {
        doc["rewrite"] = nullptr;
    }
    return doc;
}

void ExperimentConfig::validate() const {
    if (collection.empty()) throw UsageError("config: collection path is required");
    if (topics.empty()) throw UsageError("config: topics path is required");
    if (rerank_depth < 10) throw UsageError("config: rerank_depth must be >= 10");
    if (bucket_size < 1) throw UsageError("config: bucket_size must be >= 1");
    if (workers < 1) throw UsageError("config: workers must be >= 1");
    if (rel_threshold < 0) throw UsageError("bounds.rel_threshold must be >= 0");
    if (!(k1 > 0.0) || b < 0.0 || b > 1.0) throw UsageError("bm25: need k1 > 0 and b in [0, 1]");
    if (report_formats.empty()) throw UsageError("config: report_formats must not be empty");
    for (const std::string& f : report_formats) {
        if (f != "csv" && f != "text") {
            throw UsageError(fmt::format("config: unknown report format '{}'", f));
        }
    }
    for (int n : grid.repetitions) {
        if (n < 1) throw UsageError("grid.repetitions: every n must be >= 1");
    }
    const bool random = std::find(grid.positions.begin(), grid.positions.end(), Position::random) !=
                        grid.positions.end();
    if (random && !grid.repetitions.empty() && !seed) {
        throw UsageError("config: seed is required when the grid has random-position specs");
    }
    if (scorers.empty()) throw UsageError("config: at least one scorer is required");
    std::set<std::string> names;
    for (const ScorerConfig& s : scorers) {
        if (!safe_name(s.name)) {
            throw UsageError(fmt::format("scorer name '{}' must match [A-Za-z0-9._-]+", s.name));
        }
        if (s.type == "token_reward") {
            if (!names.count(s.base)) {
                throw UsageError(fmt::format("scorer {}: base '{}' must be an earlier scorer", s.name,
                                             s.base));
            }
        } else if (s.type == "subprocess") {
            if (s.endpoint.command.empty()) {
                throw UsageError(fmt::format("scorer {}: subprocess needs a command", s.name));
            }
        } else if (s.type == "http") {
            if (s.endpoint.url.empty()) throw UsageError(fmt::format("scorer {}: http needs a url", s.name));
        } else if (s.type != "bm25" && s.type != "constant") {
            throw UsageError(fmt::format("scorer {}: unknown type '{}'", s.name, s.type));
        }
        if ((s.type == "subprocess" || s.type == "http") &&
            (s.endpoint.batch_size == 0 || s.endpoint.connections == 0 ||
             !(s.endpoint.timeout_seconds > 0.0))) {
            throw UsageError(fmt::format(
                "scorer {}: batch_size and connections must be >= 1 and timeout > 0", s.name));
        }
        if (!names.insert(s.name).second) {
            throw UsageError(fmt::format("duplicate scorer name '{}'", s.name));
        }
    }
    if (rewrite.enabled) {
        if (!seed) throw UsageError("config: seed is required for rewrite pilot sampling");
        if (rewrite.in_flight < 1) throw UsageError("rewrite.in_flight must be >= 1");
        if (!rewrite.scorer.empty() && !names.count(rewrite.scorer)) {
            throw UsageError(fmt::format("rewrite.scorer: unknown scorer '{}'", rewrite.scorer));
        }
        if (!safe_name(rewrite.generator.name)) {
            throw UsageError("rewrite.generator.name must match [A-Za-z0-9._-]+");
        }
        rewrite.generator.validate();
    }
}

std::string ExperimentConfig::hash() const {
    json doc = to_json();
    doc.erase("workers");
    doc.erase("output_dir");
    doc.erase("report_formats");
    for (json& s : doc["scorers"]) {
        s.erase("connections");
        s.erase("timeout");
    }
    if (doc["rewrite"].is_object()) {
        doc["rewrite"].erase("in_flight");
        doc["rewrite"]["generator"].erase("timeout");
    }
    return sha256_hex(doc.dump());
}

bool ExperimentConfig::wants(std::string_view format) const {
    return std::find(report_formats.begin(), report_formats.end(), format) != report_formats.end();
}

// ---- Pipeline ----

struct Pipeline::State {
    bool loaded = false;
    std::unique_ptr<DocumentStore> store;
    TopicSet topics;
    std::optional<QrelsTable> qrels;
    std::vector<QueryCandidates> candidates;
    std::vector<Document> docs;  // distinct candidates, first appearance order
    std::unordered_map<std::string, std::size_t> doc_index;
    std::shared_ptr<const InvertedIndex> index;
    std::vector<AttackToken> lexicon;
    std::string lexicon_hash;
    std::string inputs_hash;
    std::string config_hash;
    std::map<std::string, std::shared_ptr<Scorer>> scorers;
    std::map<std::string, std::vector<Ranking>> rankings;
    std::optional<std::vector<AttackedDocument>> attacked;  // doc-major, grid order
};

Pipeline::Pipeline(ExperimentConfig config, std::ostream& log)
    : m_config(std::move(config)), m_log(log), m_state(std::make_unique<State>()) {
    m_config.validate();
    m_state->config_hash = m_config.hash();
}

Pipeline::~Pipeline() = default;

void Pipeline::load_inputs() {
    State& s = *m_state;
    if (s.loaded) return;

    s.lexicon = default_lexicon();
    if (m_config.lexicon) {
        auto in = open_input(*m_config.lexicon);
        s.lexicon = parse_lexicon(in, m_config.lexicon->string());
    }
    std::ostringstream canonical;
    write_lexicon(canonical, s.lexicon);
    s.lexicon_hash = sha256_hex(canonical.str());

    std::string inputs;
    auto add_input = [&](std::string_view label, const fs::path& path) {
        if (!path.empty()) inputs += fmt::format("{} {}\n", label, sha256_file(path));
    };
    add_input("collection", m_config.collection);
    add_input("topics", m_config.topics);
    add_input("qrels", m_config.qrels);
    add_input("run", m_config.run);
    if (m_config.stopwords) add_input("stopwords", *m_config.stopwords);
    if (m_config.rewrite.enabled && m_config.rewrite.prompts) add_input("prompts", *m_config.rewrite.prompts);
    for (const ScorerConfig& sc : m_config.scorers) {
        if (sc.scores) add_input("scores:" + sc.name, *sc.scores);
    }
    s.inputs_hash = sha256_hex(inputs);

    s.store = load_collection(m_config.collection, m_config.store);
    s.topics = load_topics(m_config.topics);
    if (!m_config.qrels.empty()) s.qrels = load_qrels(m_config.qrels);

    auto bm25_index = [&]() -> std::shared_ptr<const InvertedIndex> {
        if (!s.index) {
            Bm25Params params{m_config.k1, m_config.b, {}};
            if (m_config.stopwords) params.stopwords = load_stopwords(*m_config.stopwords);
            s.index = std::make_shared<const InvertedIndex>(
                InvertedIndex::build(*s.store, params, m_config.workers));
        }
        return s.index;
    };

    std::vector<std::pair<Query, std::vector<std::string>>> lists;
    if (!m_config.run.empty()) {
        const auto entries = load_run(m_config.run);
        std::set<std::string> known;
        for (const QueryRun& qr : group_run(entries, m_config.rerank_depth)) {
            const Query* q = s.topics.find(qr.query_id);
            if (!q) throw DataError(fmt::format("run query {} is not in the topics file", qr.query_id));
            std::vector<std::string> ids;
            for (const RunEntry& e : qr.entries) ids.push_back(e.doc_id);
            lists.emplace_back(*q, std::move(ids));
        }
        // Topics order, so the run's query order does not matter.
        std::unordered_map<std::string, std::size_t> order;
        for (std::size_t i = 0; i < s.topics.queries().size(); ++i) {
            order[s.topics.queries()[i].query_id] = i;
        }
        std::stable_sort(lists.begin(), lists.end(), [&](const auto& a, const auto& b) {
            return order.at(a.first.query_id) < order.at(b.first.query_id);
        });
    } else {
        Bm25 bm25(bm25_index());
        for (const Query& q : s.topics.queries()) {
            Ranking r = bm25.retrieve(q, m_config.rerank_depth);
            std::vector<std::string> ids;
            for (const RankedDoc& d : r.docs) ids.push_back(d.doc_id);
            lists.emplace_back(q, std::move(ids));
        }
    }

    for (auto& [query, ids] : lists) {
        if (ids.empty()) {
            m_log << fmt::format("note: query {} has no candidates and is skipped\n", query.query_id);
            continue;
        }
        QueryCandidates qc{query, {}};
        std::set<std::string_view> seen;
        for (const std::string& id : ids) {
            if (!seen.insert(id).second) {
                throw DataError(fmt::format("query {} lists document {} twice", query.query_id, id));
            }
            auto text = s.store->find(id);
            if (!text) {
                throw DataError(fmt::format("query {}: document {} is not in the collection",
                                            query.query_id, id));
            }
            qc.docs.push_back({id, *text});
            if (s.doc_index.emplace(id, s.docs.size()).second) s.docs.push_back(qc.docs.back());
        }
        s.candidates.push_back(std::move(qc));
    }

    for (const ScorerConfig& sc : m_config.scorers) {
        std::shared_ptr<Scorer> made;
        if (sc.type == "bm25") {
            made = std::make_shared<Bm25Scorer>(bm25_index(), sc.name);
        } else if (sc.type == "token_reward") {
            made = std::make_shared<TokenRewardScorer>(s.scorers.at(sc.base), sc.token, sc.reward,
                                                       sc.name);
        } else if (sc.type == "constant") {
            made = std::make_shared<ConstantScorer>(sc.value, sc.name);
        } else {
            made = std::make_shared<ExternalScorer>(sc.endpoint);
        }
        s.scorers.emplace(sc.name, std::move(made));
    }
    s.loaded = true;
    m_log << fmt::format("loaded {} queries, {} distinct candidate documents\n", s.candidates.size(),
                         s.docs.size());
}

std::vector<std::string> Pipeline::header(std::string_view stage,
                                          std::vector<std::string> extra) const {
    const State& s = *m_state;
    std::vector<std::string> lines{
        fmt::format("# rank-attack {}", kToolVersion),
        fmt::format("# stage: {}", stage),
        fmt::format("# config: {}", s.config_hash),
        fmt::format("# inputs: {}", s.inputs_hash),
        fmt::format("# seed: {}", m_config.seed ? std::to_string(*m_config.seed) : "none"),
        fmt::format("# lexicon: {}", s.lexicon_hash),
    };
    for (std::string& e : extra) lines.push_back("# " + e);
    return lines;
}

bool Pipeline::up_to_date(const fs::path& path, const std::vector<std::string>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::string line;
    for (const std::string& want : expected) {
        if (!std::getline(in, line) || line != want) return false;
    }
    // A longer header means different settings.
    if (std::getline(in, line) && line.rfind("# ", 0) == 0) return false;
    return true;
}

Scorer& Pipeline::scorer(const std::string& name) {
    load_inputs();
    auto it = m_state->scorers.find(name);
    if (it == m_state->scorers.end()) throw UsageError(fmt::format("unknown scorer '{}'", name));
    return *it->second;
}

const ScorerConfig& Pipeline::scorer_config(const std::string& name) const {
    for (const ScorerConfig& s : m_config.scorers) {
        if (s.name == name) return s;
    }
    throw UsageError(fmt::format("unknown scorer '{}'", name));
}

std::vector<AttackSpec> Pipeline::grid() const {
    std::vector<AttackSpec> specs;
    if (m_config.grid.include_identity) specs.push_back(AttackSpec::identity());
    if (!m_config.grid.positions.empty() && !m_config.grid.repetitions.empty()) {
        auto g = build_grid(m_state->lexicon, m_config.grid.positions, m_config.grid.repetitions);
        specs.insert(specs.end(), g.begin(), g.end());
    }
    return specs;
}

fs::path Pipeline::attack() {
    load_inputs();
    State& s = *m_state;
    const fs::path path = m_config.output_dir / "attacked.tsv";
    const auto hdr = header("attack");
    const std::vector<AttackSpec> specs = grid();
    const std::uint64_t seed = m_config.seed.value_or(0);

    if (up_to_date(path, hdr)) {
        m_reused.push_back("attack");
        m_log << "attack: up to date\n";
        if (!s.attacked) {
            auto in = open_input(path);
            auto rows = parse_attacked(in, path.string());
            if (rows.size() != s.docs.size() * specs.size()) {
                throw DataError(fmt::format("{}: expected {} rows, found {}", path.string(),
                                            s.docs.size() * specs.size(), rows.size()));
            }
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto& want_doc = s.docs[i / specs.size()].doc_id;
                const auto& want_spec = specs[i % specs.size()].spec_id();
                if (rows[i].source_doc_id != want_doc || rows[i].spec_id != want_spec) {
                    throw DataError(fmt::format("{}: row {} is ({}, {}), expected ({}, {})",
                                                path.string(), i + 1, rows[i].source_doc_id,
                                                rows[i].spec_id, want_doc, want_spec));
                }
            }
            s.attacked = std::move(rows);
        }
        return path;
    }

    std::vector<AttackedDocument> rows(s.docs.size() * specs.size());
    parallel_for(s.docs.size(), m_config.workers, [&](std::size_t d) {
        const Document& doc = s.docs[d];
        for (std::size_t k = 0; k < specs.size(); ++k) {
            rows[d * specs.size() + k] =
                inject(doc, specs[k], pair_seed(seed, doc.doc_id, specs[k].spec_id()));
        }
    });
    write_output(path, hdr, [&](std::ostream& out) { write_attacked(out, rows); });
    m_log << fmt::format("attack: wrote {} rows ({} documents x {} specs) to {}\n", rows.size(),
                         s.docs.size(), specs.size(), path.string());
    s.attacked = std::move(rows);
    return path;
}

std::vector<Ranking> Pipeline::rerank(const std::string& name) {
    load_inputs();
    State& s = *m_state;
    if (auto it = s.rankings.find(name); it != s.rankings.end()) return it->second;
    Scorer& sc = scorer(name);
    const fs::path path = m_config.output_dir / fmt::format("rerank.{}.run", name);
    const auto hdr = header("rerank", {fmt::format("scorer: {}", name)});

    std::vector<Ranking> rankings(s.candidates.size());
    if (up_to_date(path, hdr)) {
        m_reused.push_back("rerank:" + name);
        m_log << fmt::format("rerank {}: up to date\n", name);
        const auto entries = load_run(path);
        const auto grouped = group_run(entries);
        if (grouped.size() != s.candidates.size()) {
            throw DataError(fmt::format("{}: query count does not match the inputs", path.string()));
        }
        for (std::size_t q = 0; q < grouped.size(); ++q) {
            if (grouped[q].query_id != s.candidates[q].query.query_id) {
                throw DataError(fmt::format("{}: unexpected query {}", path.string(), grouped[q].query_id));
            }
            rankings[q].query_id = grouped[q].query_id;
            for (const RunEntry& e : grouped[q].entries) {
                rankings[q].docs.push_back({e.doc_id, e.score, e.rank});
            }
        }
    } else {
        parallel_for(s.candidates.size(), m_config.workers, [&](std::size_t q) {
            rankings[q] = rankattack::rerank(s.candidates[q].query, s.candidates[q].docs, sc);
        });
        write_output(path, hdr, [&](std::ostream& out) {
            std::vector<RunEntry> all;
            for (const Ranking& r : rankings) {
                auto entries = to_run(r, name);
                all.insert(all.end(), entries.begin(), entries.end());
            }
            write_run(out, all);
        });
        m_log << fmt::format("rerank {}: wrote {}\n", name, path.string());
    }
    s.rankings[name] = rankings;
    return rankings;
}

void Pipeline::rerank_all() {
    for (const ScorerConfig& sc : m_config.scorers) rerank(sc.name);
}

std::map<std::string, std::vector<double>> Pipeline::attack_scores(
    const std::string& name, const std::vector<AttackSpec>& specs) {
    State& s = *m_state;
    const ScorerConfig& config = scorer_config(name);
    // Column 0 is the unattacked document, then one column per grid spec.
    const std::size_t width = specs.size() + 1;
    auto column_id = [&](std::size_t k) -> const std::string& {
        static const std::string identity(kIdentitySpecId);
        return k == 0 ? identity : specs[k - 1].spec_id();
    };

    auto from_table = [&](const std::unordered_map<std::string, double>& table,
                          const std::string& source) {
        std::map<std::string, std::vector<double>> out;
        std::vector<std::string> missing;
        std::size_t missing_count = 0;
        for (const QueryCandidates& qc : s.candidates) {
            auto& row = out[qc.query.query_id];
            row.resize(qc.docs.size() * width);
            for (std::size_t d = 0; d < qc.docs.size(); ++d) {
                for (std::size_t k = 0; k < width; ++k) {
                    auto it = table.find(score_key(qc.query.query_id, qc.docs[d].doc_id, column_id(k)));
                    if (it == table.end()) {
                        if (missing.size() < 10) {
                            missing.push_back(fmt::format("({}, {}, {})", qc.query.query_id,
                                                          qc.docs[d].doc_id, column_id(k)));
                        }
                        ++missing_count;
                        continue;
                    }
                    row[d * width + k] = it->second;
                }
            }
        }
        if (missing_count > 0) {
            throw DataError(fmt::format("{}: {} scores missing, e.g. {}{}", source, missing_count,
                                        fmt::join(missing, ", "), missing_count > missing.size() ? ", ..." : ""));
        }
        return out;
    };

    if (config.scores) {
        m_log << fmt::format("evaluate {}: using scores from {}\n", name, config.scores->string());
        return from_table(load_scores(*config.scores), config.scores->string());
    }

    const fs::path path = m_config.output_dir / fmt::format("scores.{}.tsv", name);
    const auto hdr = header("scores", {fmt::format("scorer: {}", name)});
    if (up_to_date(path, hdr)) {
        m_reused.push_back("scores:" + name);
        m_log << fmt::format("scores {}: up to date\n", name);
        return from_table(load_scores(path), path.string());
    }

    attack();
    const std::vector<Ranking> rankings = rerank(name);
    Scorer& sc = scorer(name);
    const auto& attacked = *s.attacked;
    const std::size_t grid_width = specs.size();

    struct Item {
        std::size_t query;
        std::size_t doc;
    };
    std::vector<Item> items;
    for (std::size_t q = 0; q < s.candidates.size(); ++q) {
        for (std::size_t d = 0; d < s.candidates[q].docs.size(); ++d) items.push_back({q, d});
    }
    std::map<std::string, std::vector<double>> out;
    for (const QueryCandidates& qc : s.candidates) {
        out[qc.query.query_id].resize(qc.docs.size() * width);
    }
    std::vector<std::vector<double>*> rows;
    for (const QueryCandidates& qc : s.candidates) rows.push_back(&out[qc.query.query_id]);

    parallel_for(items.size(), m_config.workers, [&](std::size_t i) {
        const QueryCandidates& qc = s.candidates[items[i].query];
        const Document& doc = qc.docs[items[i].doc];
        const Ranking& original = rankings[items[i].query];
        std::vector<double>& row = *rows[items[i].query];
        const std::size_t base = items[i].doc * width;
        row[base] = original.docs[static_cast<std::size_t>(original.rank_of(doc.doc_id) - 1)].score;

        const std::size_t first = s.doc_index.at(doc.doc_id) * grid_width;
        std::vector<ScoreRequest> batch;
        std::vector<std::size_t> columns;
        for (std::size_t k = 0; k < specs.size(); ++k) {
            if (specs[k].is_identity()) {
                row[base + 1 + k] = row[base];
                continue;
            }
            batch.push_back({qc.query.query_id, qc.query.text, doc.doc_id + "#" + specs[k].spec_id(),
                             attacked[first + k].text});
            columns.push_back(k);
        }
        if (batch.empty()) return;
        const auto scores = sc.score(batch);
        if (scores.size() != batch.size()) {
            throw TransportError(fmt::format("scorer {} returned {} scores for {} requests", name,
                                             scores.size(), batch.size()));
        }
        for (std::size_t j = 0; j < columns.size(); ++j) row[base + 1 + columns[j]] = scores[j];
    });

    write_output(path, hdr, [&](std::ostream& o) {
        for (const QueryCandidates& qc : s.candidates) {
            const auto& row = out.at(qc.query.query_id);
            for (std::size_t d = 0; d < qc.docs.size(); ++d) {
                for (std::size_t k = 0; k < width; ++k) {
                    o << qc.query.query_id << '\t' << qc.docs[d].doc_id << '\t' << column_id(k) << '\t'
                      << number(row[d * width + k]) << '\n';
                }
            }
        }
    });
    m_log << fmt::format("scores {}: wrote {}\n", name, path.string());
    return out;
}

EvaluationResult Pipeline::evaluate(const std::string& name) {
    load_inputs();
    State& s = *m_state;
    scorer_config(name);
    const std::vector<AttackSpec> specs = grid();
    const auto scores = attack_scores(name, specs);
    const std::size_t width = specs.size() + 1;

    std::vector<Ranking> originals;
    for (const QueryCandidates& qc : s.candidates) {
        const auto& row = scores.at(qc.query.query_id);
        std::vector<ScoredDoc> scored;
        for (std::size_t d = 0; d < qc.docs.size(); ++d) scored.push_back({qc.docs[d].doc_id, row[d * width]});
        originals.push_back(rank_by_score(qc.query.query_id, std::move(scored)));
    }

    EvaluationResult result;
    result.scorer = name;
    result.corrections = static_cast<int>(std::max<std::size_t>(
        1, std::count_if(specs.begin(), specs.end(), [](const AttackSpec& a) { return !a.is_identity(); })));
    for (std::size_t k = 0; k < specs.size(); ++k) {
        std::vector<PairDelta> deltas;
        for (std::size_t q = 0; q < s.candidates.size(); ++q) {
            const QueryCandidates& qc = s.candidates[q];
            const auto& row = scores.at(qc.query.query_id);
            for (std::size_t d = 0; d < qc.docs.size(); ++d) {
                const std::string& id = qc.docs[d].doc_id;
                deltas.push_back({qc.query.query_id, id, originals[q].rank_of(id),
                                  rank_with_score(originals[q], id, row[d * width + 1 + k])});
            }
        }
        if (deltas.empty()) throw DataError("no query-document pairs to evaluate");
        result.specs.push_back({specs[k], efficacy_report(specs[k].spec_id(), deltas,
                                                          result.corrections, m_config.bucket_size)});
    }
    for (const AttackToken& token : s.lexicon) {
        const SpecReport* best = nullptr;
        for (const SpecReport& r : result.specs) {
            if (r.spec.is_identity() || r.spec.token().surface != token.surface) continue;
            if (!best || r.report.mrc > best->report.mrc ||
                (r.report.mrc == best->report.mrc && r.spec.spec_id() < best->spec.spec_id())) {
                best = &r;
            }
        }
        if (best) result.best_per_token.push_back(*best);
    }

    const auto hdr = header("evaluate", {fmt::format("scorer: {}", name),
                                         fmt::format("corrections: {}", result.corrections),
                                         "t-test: paired over query-document rank pairs",
                                         fmt::format("bucket_size: {}", m_config.bucket_size)});
    const fs::path stem = m_config.output_dir / fmt::format("evaluate.{}", name);
    auto fields = [](const SpecReport& r) { return parse_spec_id(r.spec.spec_id()); };
    if (m_config.wants("csv")) {
        write_output(fs::path(stem.string() + ".specs.csv"), hdr, [&](std::ostream& o) {
            o << "spec_id,category,token,position,repetitions,pairs,mrc,sr,t,p,significant,zero_variance\n";
            for (const SpecReport& r : result.specs) {
                const bool id = r.spec.is_identity();
                o << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.spec.spec_id(),
                                 id ? "" : std::string(to_string(r.spec.token().category)),
                                 id ? "" : escape_component(r.spec.token().surface),
                                 id ? "" : std::string(to_string(r.spec.position())),
                                 r.spec.repetitions(), r.report.pairs, number(r.report.mrc),
                                 number(r.report.sr), test_fields(r.report.test));
            }
        });
        write_output(fs::path(stem.string() + ".tokens.csv"), hdr, [&](std::ostream& o) {
            o << "category,token,spec_id,position,repetitions,mrc,sr,significant,cell\n";
            for (const SpecReport& r : result.best_per_token) {
                o << fmt::format("{},{},{},{},{},{},{},{},{}\n", to_string(r.spec.token().category),
                                 escape_component(r.spec.token().surface), r.spec.spec_id(),
                                 to_string(r.spec.position()), r.spec.repetitions(),
                                 number(r.report.mrc), number(r.report.sr),
                                 r.report.test.significant ? 1 : 0,
                                 cell_text(r.report, fields(r)));
            }
        });
        write_output(fs::path(stem.string() + ".buckets.csv"), hdr, [&](std::ostream& o) {
            o << "spec_id,bucket,first_rank,last_rank,pairs,mrc\n";
            for (const SpecReport& r : result.specs) {
                for (const auto& [bucket, b] : r.report.buckets) {
                    o << fmt::format("{},{},{},{},{},{}\n", r.spec.spec_id(), bucket,
                                     bucket * m_config.bucket_size + 1,
                                     (bucket + 1) * m_config.bucket_size, b.count, number(b.mrc));
                }
            }
        });
    }
    if (m_config.wants("text")) {
        write_output(fs::path(stem.string() + ".specs.txt"), hdr, [&](std::ostream& o) {
            std::size_t w = 7;
            for (const SpecReport& r : result.specs) w = std::max(w, r.spec.spec_id().size());
            o << fmt::format("{:<{}}  {:>9}  {:>7}  {:>10}  {}\n", "spec_id", w, "MRC", "SR", "p", "cell");
            for (const SpecReport& r : result.specs) {
                o << fmt::format("{:<{}}  {:>+9.2f}  {:>6.1f}%  {:>10.3g}  {}\n", r.spec.spec_id(), w,
                                 r.report.mrc, r.report.sr * 100.0, r.report.test.p,
                                 cell_text(r.report, fields(r)));
            }
            o << fmt::format("* p < 0.05 / {} (Bonferroni), paired t-test on ranks\n", result.corrections);
        });
        write_output(fs::path(stem.string() + ".tokens.txt"), hdr, [&](std::ostream& o) {
            std::vector<EvaluationResult> one{result};
            write_token_table_text(o, one, {});
        });
    }
    m_log << fmt::format("evaluate {}: {} specs, {} pairs each\n", name, result.specs.size(),
                         result.specs.empty() ? 0 : result.specs.front().report.pairs);
    return result;
}

void Pipeline::evaluate_all() {
    for (const ScorerConfig& sc : m_config.scorers) evaluate(sc.name);
}

void Pipeline::bounds() {
    load_inputs();
    State& s = *m_state;
    if (!s.qrels) throw UsageError("bounds needs a qrels file");
    const auto hdr = header("bounds", {fmt::format("corrections: {}", kBoundsCorrections),
                                       fmt::format("rel_threshold: {}", m_config.rel_threshold),
                                       "t-test: paired over per-query metric values"});
    const fs::path csv = m_config.output_dir / "bounds.csv";
    const fs::path txt = m_config.output_dir / "bounds.txt";
    if ((!m_config.wants("csv") || up_to_date(csv, hdr)) &&
        (!m_config.wants("text") || up_to_date(txt, hdr))) {
        m_reused.push_back("bounds");
        m_log << "bounds: up to date\n";
        return;
    }
    std::vector<AttackSpec> specs;
    for (const AttackSpec& spec : grid()) {
        if (!spec.is_identity()) specs.push_back(spec);
    }
    std::vector<BoundsRow> rows;
    for (const ScorerConfig& sc : m_config.scorers) {
        m_log << fmt::format("bounds {}: {} specs over {} queries\n", sc.name, specs.size(),
                             s.candidates.size());
        rows.push_back(compute_bounds_row(s.candidates, *s.qrels, m_config.rel_threshold, specs,
                                          scorer(sc.name), m_config.seed.value_or(0),
                                          m_config.workers));
    }
    if (m_config.wants("csv")) {
        write_output(csv, hdr, [&](std::ostream& o) { write_bounds_csv(o, rows); });
    }
    if (m_config.wants("text")) {
        write_output(txt, hdr, [&](std::ostream& o) {
            write_bounds_text(o, rows);
            if (!rows.empty() && !rows.front().original.flagged.empty()) {
                o << fmt::format("queries without qrels (never attacked): {}\n",
                                 fmt::join(rows.front().original.flagged, ", "));
            }
        });
    }
}

std::vector<RewriteResult> Pipeline::rewrite() {
    load_inputs();
    State& s = *m_state;
    if (!m_config.rewrite.enabled) throw UsageError("config has no rewrite section");
    const RewriteConfig& rc = m_config.rewrite;
    const fs::path path = m_config.output_dir / "rewritten.tsv";
    const auto hdr = header("rewrite", {fmt::format("generator: {}", rc.generator.name)});

    std::vector<AttackedDocument> rows;
    std::vector<std::string> spec_ids;
    if (up_to_date(path, hdr)) {
        m_reused.push_back("rewrite");
        m_log << "rewrite: up to date\n";
        auto in = open_input(path);
        rows = parse_attacked(in, path.string());
    } else {
        std::vector<RewritePrompt> prompts = default_prompts();
        if (rc.prompts) {
            auto in = open_input(*rc.prompts);
            prompts = parse_prompts(in, rc.prompts->string());
        }
        auto generator = make_generator(rc.generator);
        fs::create_directories(m_config.output_dir);
        AuditLog audit(m_config.output_dir / "rewrite.audit.jsonl");
        const std::string selector = rc.scorer.empty() ? m_config.scorers.front().name : rc.scorer;
        const auto pilot = build_pilot(s.candidates, scorer(selector), rc.pilot_pairs, *m_config.seed);
        m_log << fmt::format("rewrite: pilot of {} pairs scored by {}\n", pilot.size(), selector);

        std::vector<std::string> selection_rows;
        std::vector<RewritePrompt> chosen;
        for (RewriteKind kind : {RewriteKind::paraphrase, RewriteKind::summarize}) {
            std::vector<RewritePrompt> candidates;
            for (const RewritePrompt& p : prompts) {
                if (p.kind == kind) candidates.push_back(p);
            }
            if (candidates.empty()) continue;
            try {
                PromptSelection sel = select_prompt(candidates, pilot, *generator, scorer(selector),
                                                    &audit, rc.in_flight);
                for (const PromptScore& ps : sel.scores) {
                    selection_rows.push_back(fmt::format("{},{},{},{},{}", to_string(kind), ps.prompt_id,
                                                         number(ps.mrc), number(ps.sr),
                                                         ps.prompt_id == sel.best.prompt_id ? 1 : 0));
                }
                chosen.push_back(sel.best);
            } catch (const PromptSelectionError& e) {
                for (const PromptScore& ps : e.partial()) {
                    selection_rows.push_back(fmt::format("{},{},{},{},0", to_string(kind), ps.prompt_id,
                                                         number(ps.mrc), number(ps.sr)));
                }
                write_output(m_config.output_dir / "rewrite.selection.partial.csv", hdr,
                             [&](std::ostream& o) {
                                 o << "kind,prompt_id,mrc,sr,selected\n";
                                 for (const auto& r : selection_rows) o << r << '\n';
                             });
                throw;
            }
        }
        if (chosen.empty()) throw DataError("no rewrite prompts to select from");
        write_output(m_config.output_dir / "rewrite.selection.csv", hdr, [&](std::ostream& o) {
            o << "kind,prompt_id,mrc,sr,selected\n";
            for (const auto& r : selection_rows) o << r << '\n';
        });
        for (const RewritePrompt& p : chosen) {
            m_log << fmt::format("rewrite: {} with prompt {} over {} documents\n", to_string(p.kind),
                                 p.prompt_id, s.docs.size());
            auto out = rewrite_all(s.docs, p, *generator, rc.in_flight, &audit, rc.generator.max_attempts);
            rows.insert(rows.end(), out.begin(), out.end());
        }
        write_output(path, hdr, [&](std::ostream& o) { write_attacked(o, rows); });
    }

    // Group rows by spec in first-appearance order.
    std::map<std::string, std::unordered_map<std::string, const AttackedDocument*>> by_spec;
    for (const AttackedDocument& r : rows) {
        if (!by_spec.count(r.spec_id)) spec_ids.push_back(r.spec_id);
        by_spec[r.spec_id][r.source_doc_id] = &r;
    }
    for (const auto& id : spec_ids) {
        for (const Document& d : s.docs) {
            if (!by_spec[id].count(d.doc_id)) {
                throw DataError(fmt::format("{}: no {} rewrite for document {}", path.string(), id, d.doc_id));
            }
        }
    }

    std::vector<RewriteResult> results;
    const int corrections = static_cast<int>(std::max<std::size_t>(1, spec_ids.size()));
    for (const ScorerConfig& sc : m_config.scorers) {
        const std::vector<Ranking> rankings = rerank(sc.name);
        Scorer& live = scorer(sc.name);
        struct Item {
            std::size_t query;
            std::size_t doc;
        };
        std::vector<Item> items;
        for (std::size_t q = 0; q < s.candidates.size(); ++q) {
            for (std::size_t d = 0; d < s.candidates[q].docs.size(); ++d) items.push_back({q, d});
        }
        std::vector<std::vector<int>> after(items.size(), std::vector<int>(spec_ids.size()));
        parallel_for(items.size(), m_config.workers, [&](std::size_t i) {
            const QueryCandidates& qc = s.candidates[items[i].query];
            const Document& doc = qc.docs[items[i].doc];
            std::vector<ScoreRequest> batch;
            for (const std::string& id : spec_ids) {
                batch.push_back({qc.query.query_id, qc.query.text, doc.doc_id + "#" + id,
                                 by_spec.at(id).at(doc.doc_id)->text});
            }
            const auto scores = live.score(batch);
            for (std::size_t k = 0; k < spec_ids.size(); ++k) {
                after[i][k] = rank_with_score(rankings[items[i].query], doc.doc_id, scores.at(k));
            }
        });
        RewriteResult result;
        result.scorer = sc.name;
        for (std::size_t k = 0; k < spec_ids.size(); ++k) {
            std::vector<PairDelta> deltas;
            for (std::size_t i = 0; i < items.size(); ++i) {
                const QueryCandidates& qc = s.candidates[items[i].query];
                const std::string& doc = qc.docs[items[i].doc].doc_id;
                deltas.push_back({qc.query.query_id, doc, rankings[items[i].query].rank_of(doc), after[i][k]});
            }
            result.reports.push_back(efficacy_report(spec_ids[k], deltas, corrections, m_config.bucket_size));
        }

        const auto rhdr = header("rewrite-evaluate", {fmt::format("scorer: {}", sc.name),
                                                      fmt::format("corrections: {}", corrections),
                                                      "t-test: paired over query-document rank pairs"});
        const fs::path stem = m_config.output_dir / fmt::format("rewrite.{}", sc.name);
        if (m_config.wants("csv")) {
            write_output(fs::path(stem.string() + ".csv"), rhdr, [&](std::ostream& o) {
                o << "spec_id,pairs,mrc,sr,t,p,significant,zero_variance,cell\n";
                for (const MetricReport& r : result.reports) {
                    o << fmt::format("{},{},{},{},{},{}\n", r.label, r.pairs, number(r.mrc), number(r.sr),
                                     test_fields(r.test), cell_text(r, std::nullopt));
                }
            });
        }
        if (m_config.wants("text")) {
            write_output(fs::path(stem.string() + ".txt"), rhdr, [&](std::ostream& o) {
                std::size_t w = 7;
                for (const MetricReport& r : result.reports) w = std::max(w, r.label.size());
                for (const MetricReport& r : result.reports) {
                    o << fmt::format("{:<{}}  {}\n", r.label, w, cell_text(r, std::nullopt));
                }
                o << fmt::format("* p < 0.05 / {} (Bonferroni), paired t-test on ranks\n", corrections);
            });
        }
        results.push_back(std::move(result));
    }
    return results;
}

void Pipeline::report() {
    load_inputs();
    std::vector<EvaluationResult> results;
    for (const ScorerConfig& sc : m_config.scorers) results.push_back(evaluate(sc.name));
    std::vector<RewriteResult> rewrites;
    if (m_config.rewrite.enabled) rewrites = rewrite();
    const auto hdr = header("report", {fmt::format("corrections: {}", results.empty() ? 1 : results.front().corrections)});
    if (m_config.wants("csv")) {
        write_output(m_config.output_dir / "report.csv", hdr,
                     [&](std::ostream& o) { write_token_table_csv(o, results, rewrites); });
    }
    if (m_config.wants("text")) {
        write_output(m_config.output_dir / "report.txt", hdr,
                     [&](std::ostream& o) { write_token_table_text(o, results, rewrites); });
    }
    m_log << fmt::format("report: written to {}\n", m_config.output_dir.string());
}

// ---- token tables ----

namespace {

struct TableRow {
    std::string group;
    std::string label;
    std::vector<std::string> cells;
};

std::vector<TableRow> token_rows(std::span<const EvaluationResult> results,
                                 std::span<const RewriteResult> rewrites) {
    std::vector<TableRow> rows;
    std::map<std::string, std::size_t> row_of;
    for (std::size_t c = 0; c < results.size(); ++c) {
        for (const SpecReport& r : results[c].best_per_token) {
            const std::string key = r.spec.token().surface;
            auto [it, inserted] = row_of.emplace(key, rows.size());
            if (inserted) {
                rows.push_back({std::string(to_string(r.spec.token().category)), key,
                                std::vector<std::string>(results.size())});
            }
            rows[it->second].cells[c] = cell_text(r.report, parse_spec_id(r.spec.spec_id()));
        }
    }
    std::vector<std::string> scorer_names;
    for (const EvaluationResult& r : results) scorer_names.push_back(r.scorer);
    for (const RewriteResult& rw : rewrites) {
        auto col = std::find(scorer_names.begin(), scorer_names.end(), rw.scorer);
        if (col == scorer_names.end()) continue;
        for (const MetricReport& r : rw.reports) {
            auto [it, inserted] = row_of.emplace(r.label, rows.size());
            if (inserted) rows.push_back({"rewrite", r.label, std::vector<std::string>(results.size())});
            rows[it->second].cells[static_cast<std::size_t>(col - scorer_names.begin())] =
                cell_text(r, std::nullopt);
        }
    }
    return rows;
}

}  // namespace

void write_token_table_text(std::ostream& out, std::span<const EvaluationResult> results,
                            std::span<const RewriteResult> rewrites) {
    const auto rows = token_rows(results, rewrites);
    std::size_t group_w = 8;
    std::size_t label_w = 5;
    for (const TableRow& r : rows) {
        group_w = std::max(group_w, r.group.size());
        label_w = std::max(label_w, r.label.size());
    }
    std::vector<std::size_t> widths;
    for (std::size_t c = 0; c < results.size(); ++c) {
        std::size_t w = results[c].scorer.size();
        for (const TableRow& r : rows) w = std::max(w, r.cells[c].size());
        widths.push_back(w);
    }
    out << fmt::format("{:<{}}  {:<{}}", "category", group_w, "token", label_w);
    for (std::size_t c = 0; c < results.size(); ++c) out << fmt::format("  {:>{}}", results[c].scorer, widths[c]);
    out << '\n';
    std::string previous;
    for (const TableRow& r : rows) {
        out << fmt::format("{:<{}}  {:<{}}", r.group == previous ? "" : r.group, group_w, r.label, label_w);
        previous = r.group;
        for (std::size_t c = 0; c < results.size(); ++c) out << fmt::format("  {:>{}}", r.cells[c], widths[c]);
        out << '\n';
    }
    out << "cell: MRC, '*' significant (Bonferroni), subscript {SR %, position, n}\n";
}

void write_token_table_csv(std::ostream& out, std::span<const EvaluationResult> results,
                           std::span<const RewriteResult> rewrites) {
    out << "category,token";
    for (const EvaluationResult& r : results) out << ',' << r.scorer;
    out << '\n';
    for (const TableRow& r : token_rows(results, rewrites)) {
        out << r.group << ',' << escape_component(r.label);
        for (const std::string& cell : r.cells) out << ",\"" << cell << '"';
        out << '\n';
    }
}

}  // namespace rankattack
