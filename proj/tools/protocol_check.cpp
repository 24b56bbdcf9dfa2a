// Conformance harness for external scorers: sends randomized requests,
// checks that every response joins, that scores lie in [0, 1], and that
// scores do not depend on how a batch is split.
//
//   rank_attack_protocol_check [--requests N] [--seed S] (--url URL | -- command args...)

#include <cmath>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rankattack/errors.hpp"
#include "rankattack/scorers.hpp"
#include "rankattack/text.hpp"

using namespace rankattack;

namespace {

const std::vector<std::string> kWords = {
    "flea", "remedies", "true", "relevant:", "information", "\"quoted\"", "back\\slash", "tab\there",
    "naïve", "Ελληνικά", "кириллица", "emoji😀", "bar", "baz", "long", "time", "{json}", "a/b"};

std::string random_text(std::mt19937_64& rng, std::size_t max_words) {
    std::string out;
    const std::size_t n = draw_below(rng, max_words + 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) out.push_back(' ');
        out += kWords[draw_below(rng, kWords.size())];
    }
    return out;
}

std::vector<double> score_in_batches(ScorerEndpoint endpoint, std::size_t batch_size,
                                     const std::vector<ScoreRequest>& requests) {
    endpoint.batch_size = batch_size;
    ExternalScorer scorer(endpoint);
    return scorer.score(requests);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scorer wire-protocol conformance check."};
    std::size_t count = 10000;
    std::uint64_t seed = 1;
    std::string url;
    double timeout = 60.0;
    double tolerance = 1e-5;
    std::vector<std::string> command;
    app.add_option("--requests", count, "number of randomized requests");
    app.add_option("--seed", seed);
    app.add_option("--url", url, "HTTP scorer endpoint");
    app.add_option("--timeout", timeout, "seconds per batch");
    app.add_option("--tolerance", tolerance, "allowed score difference across batch splits");
    app.add_option("command", command, "subprocess scorer command")->expected(-1);
    CLI11_PARSE(app, argc, argv);
    if (url.empty() == command.empty()) {
        std::cerr << "give exactly one of --url or a command\n";
        return 1;
    }

    ScorerEndpoint endpoint;
    endpoint.name = "under-test";
    endpoint.timeout_seconds = timeout;
    if (url.empty()) {
        endpoint.transport = ScorerEndpoint::Transport::subprocess;
        endpoint.command = command;
    } else {
        endpoint.transport = ScorerEndpoint::Transport::http;
        endpoint.url = url;
    }

    std::mt19937_64 rng(seed);
    std::vector<ScoreRequest> requests;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t q = draw_below(rng, 50);
        requests.push_back({fmt::format("q{}", q), random_text(rng, 4), fmt::format("d{}", i),
                            random_text(rng, 40)});
    }

    int failures = 0;
    auto check = [&](bool ok, const std::string& what) {
        std::cout << (ok ? "PASS " : "FAIL ") << what << '\n';
        if (!ok) ++failures;
    };
    try {
        const auto base = score_in_batches(endpoint, 64, requests);
        check(base.size() == requests.size(),
              fmt::format("{} requests joined to {} responses", requests.size(), base.size()));
        std::size_t out_of_range = 0;
        for (double s : base) out_of_range += (std::isfinite(s) && s >= 0.0 && s <= 1.0) ? 0 : 1;
        check(out_of_range == 0, fmt::format("scores in [0, 1] ({} outside)", out_of_range));
        for (std::size_t batch : {std::size_t{1}, std::size_t{7}, std::size_t{1000}}) {
            const std::size_t n = batch == 1 ? std::min<std::size_t>(500, requests.size()) : requests.size();
            std::vector<ScoreRequest> subset(requests.begin(), requests.begin() + static_cast<long>(n));
            const auto split = score_in_batches(endpoint, batch, subset);
            double worst = 0.0;
            for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(split[i] - base[i]));
            check(worst <= tolerance,
                  fmt::format("batch size {} over {} requests: max |diff| {:.3g} <= {}", batch, n, worst,
                              tolerance));
        }
    } catch (const std::exception& e) {
        check(false, fmt::format("transport: {}", e.what()));
    }
    return failures == 0 ? 0 : 1;
}
