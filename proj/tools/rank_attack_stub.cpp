// Offline stand-ins for external processes.
//
//   rank_attack_stub scorer [--mode constant|overlap|reward] [--shuffle] [--fault ...]
//   rank_attack_stub generator [--mode upper|fixed|empty] [--text T]
//
// The scorer speaks the NDJSON protocol on stdin/stdout and echoes the
// handshake. The generator answers {"prompt"} lines with {"text"} lines.

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rankattack/scorers.hpp"
#include "rankattack/text.hpp"

using json = nlohmann::json;
using namespace rankattack;

namespace {

bool input_pending(int millis) {
    if (std::cin.rdbuf()->in_avail() > 0) return true;
    pollfd p{STDIN_FILENO, POLLIN, 0};
    return ::poll(&p, 1, millis) > 0;
}

double overlap(const std::string& query, const std::string& text) {
    const auto q = tokenize(query);
    if (q.empty()) return 0.0;
    const auto words = tokenize(text);
    const std::set<std::string> d(words.begin(), words.end());
    std::size_t hits = 0;
    for (const auto& t : q) hits += d.count(t);
    return static_cast<double>(hits) / static_cast<double>(q.size());
}

int run_scorer(const std::string& mode, double value, const std::string& token, double reward,
               bool shuffle, const std::string& fault, std::size_t fault_after) {
    std::string line;
    if (!std::getline(std::cin, line)) return 1;
    if (fault == "bad-handshake") {
        std::cout << R"({"proto":"something-else"})" << std::endl;
    } else {
        std::cout << kProtocolHandshake << std::endl;
    }
    std::size_t served = 0;
    std::vector<json> pending;
    auto emit = [&](json reply) {
        if (fault == "exit" && served == fault_after) {
            std::cout.flush();
            std::_Exit(0);
        }
        if (fault == "garbage" && served == fault_after) {
            std::cout << "not json\n";
        } else if (fault == "drop" && served == fault_after) {
            // swallow one response
        } else if (fault == "duplicate" && served == fault_after) {
            std::cout << reply.dump() << '\n' << reply.dump() << '\n';
        } else if (fault == "unknown" && served == fault_after) {
            reply["docid"] = "no-such-doc";
            std::cout << reply.dump() << '\n';
        } else if (fault == "nan" && served == fault_after) {
            reply["score"] = nullptr;
            std::cout << reply.dump() << '\n';
        } else {
            std::cout << reply.dump() << '\n';
        }
        ++served;
    };
    while (std::getline(std::cin, line)) {
        const json req = json::parse(line);
        const std::string query = req.at("query");
        const std::string text = req.at("text");
        double score = value;
        if (mode == "overlap") {
            score = overlap(query, text);
        } else if (mode == "reward") {
            const auto terms = tokenize(text);
            score = value + reward * static_cast<double>(std::count(terms.begin(), terms.end(), token));
        }
        pending.push_back({{"qid", req.at("qid")}, {"docid", req.at("docid")}, {"score", score}});
        // Answer once the client pauses, in reverse order when shuffling.
        if (!input_pending(shuffle ? 5 : 0)) {
            if (shuffle) std::reverse(pending.begin(), pending.end());
            for (json& r : pending) emit(std::move(r));
            pending.clear();
            std::cout.flush();
        }
    }
    return 0;
}

int run_generator(const std::string& mode, const std::string& fixed) {
    std::string line;
    while (std::getline(std::cin, line)) {
        const std::string prompt = json::parse(line).at("prompt");
        std::string text;
        if (mode == "fixed") {
            text = fixed;
        } else if (mode == "empty") {
            text = "   ";
        } else {
            text = prompt;
            for (char& c : text) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        std::cout << json{{"text", text}}.dump() << std::endl;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stub scorer and generator processes for offline tests."};
    app.require_subcommand(1);

    std::string scorer_mode = "constant";
    double value = 0.5;
    std::string token = "true";
    double reward = 0.1;
    bool shuffle = false;
    std::string fault;
    std::size_t fault_after = 3;
    auto* scorer = app.add_subcommand("scorer", "NDJSON scorer on stdin/stdout");
    scorer->add_option("--mode", scorer_mode)->check(CLI::IsMember({"constant", "overlap", "reward"}));
    scorer->add_option("--value", value, "constant score, or the base score in reward mode");
    scorer->add_option("--token", token);
    scorer->add_option("--reward", reward);
    scorer->add_flag("--shuffle", shuffle, "answer each burst in reverse order");
    scorer->add_option("--fault-after", fault_after, "responses served before the fault");
    scorer->add_option("--fault", fault)
        ->check(CLI::IsMember({"", "bad-handshake", "garbage", "drop", "duplicate", "unknown", "nan", "exit"}));

    std::string generator_mode = "upper";
    std::string fixed;
    auto* generator = app.add_subcommand("generator", "{prompt} -> {text} lines");
    generator->add_option("--mode", generator_mode)->check(CLI::IsMember({"upper", "fixed", "empty"}));
    generator->add_option("--text", fixed);

    CLI11_PARSE(app, argc, argv);
    std::ios::sync_with_stdio(false);
    if (scorer->parsed()) return run_scorer(scorer_mode, value, token, reward, shuffle, fault, fault_after);
    return run_generator(generator_mode, fixed);
}
