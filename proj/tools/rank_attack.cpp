// rank_attack: command-line driver for the attack / evaluation pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "rankattack/errors.hpp"
#include "rankattack/runner.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rankattack;

namespace {

struct Overrides {
    std::string config;
    std::string collection, topics, qrels, run, output_dir, lexicon, stopwords, store;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::size_t> rerank_depth;
    std::optional<int> bucket_size;
    std::optional<int> rel_threshold;
    std::vector<std::string> formats;
};

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

ExperimentConfig build_config(const Overrides& o) {
    std::string path = o.config;
    if (path.empty()) {
        if (const char* env = std::getenv(std::string(kConfigEnvVar).c_str())) path = env;
    }
    json doc = json::object();
    fs::path base;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw UsageError(fmt::format("cannot open config {}", path));
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw UsageError(fmt::format("{}: {}", path, e.what()));
        }
        base = fs::absolute(path).parent_path();
    }
    auto set_path = [&](const char* key, const std::string& value) {
        if (!value.empty()) doc[key] = absolute(value);
    };
    set_path("collection", o.collection);
    set_path("topics", o.topics);
    set_path("qrels", o.qrels);
    set_path("run", o.run);
    set_path("output_dir", o.output_dir);
    set_path("lexicon", o.lexicon);
    if (!o.stopwords.empty()) doc["bm25"]["stopwords"] = absolute(o.stopwords);
    if (!o.store.empty()) doc["store"] = o.store;
    if (o.seed) doc["seed"] = *o.seed;
    if (o.workers) doc["workers"] = *o.workers;
    if (o.rerank_depth) doc["rerank_depth"] = *o.rerank_depth;
    if (o.bucket_size) doc["bucket_size"] = *o.bucket_size;
    if (o.rel_threshold) doc["bounds"]["rel_threshold"] = *o.rel_threshold;
    if (!o.formats.empty()) doc["report_formats"] = o.formats;
    return ExperimentConfig::from_json(doc, base);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Query-independent attacks on rankers: inject, re-rank, evaluate, bound."};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kToolVersion));

    Overrides o;
    app.add_option("-c,--config", o.config,
                   fmt::format("JSON config file (default: ${})", kConfigEnvVar));
    app.add_option("--collection", o.collection, "doc_id<TAB>text collection");
    app.add_option("--topics", o.topics, "query_id<TAB>text topics");
    app.add_option("--qrels", o.qrels, "TREC qrels");
    app.add_option("--run", o.run, "first-stage TREC run (BM25 retrieval when absent)");
    app.add_option("-o,--output-dir", o.output_dir, "output directory");
    app.add_option("--lexicon", o.lexicon, "category<TAB>surface token lexicon");
    app.add_option("--stopwords", o.stopwords, "BM25 stopword list");
    app.add_option("--store", o.store, "memory | disk")->check(CLI::IsMember({"memory", "disk"}));
    app.add_option("--seed", o.seed, "global seed");
    app.add_option("-j,--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--rerank-depth", o.rerank_depth, "candidates per query (>= 10)");
    app.add_option("--bucket-size", o.bucket_size, "rank bucket width for bucketed MRC");
    app.add_option("--rel-threshold", o.rel_threshold, "grade counted as relevant in bounds");
    app.add_option("--format", o.formats, "report formats: csv, text")
        ->check(CLI::IsMember({"csv", "text"}));

    auto* attack = app.add_subcommand("attack", "write the attacked corpus");
    auto* rerank = app.add_subcommand("rerank", "re-rank candidates with every scorer");
    auto* evaluate = app.add_subcommand("evaluate", "SR / MRC per spec and per token");
    auto* bounds = app.add_subcommand("bounds", "worst / original / best nDCG@10 and P@10");
    auto* rewrite = app.add_subcommand("rewrite", "paraphrase and summary rewriting attacks");
    auto* report = app.add_subcommand("report", "token x scorer table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        Pipeline pipeline(build_config(o), std::cerr);
        if (attack->parsed()) {
            std::cout << pipeline.attack().string() << '\n';
        } else if (rerank->parsed()) {
            pipeline.rerank_all();
        } else if (evaluate->parsed()) {
            pipeline.evaluate_all();
        } else if (bounds->parsed()) {
            pipeline.bounds();
        } else if (rewrite->parsed()) {
            pipeline.rewrite();
        } else if (report->parsed()) {
            pipeline.report();
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
