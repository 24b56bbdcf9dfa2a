#include "rankattack/rewrite.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "rankattack/metrics.hpp"
#include "rankattack/parallel.hpp"
#include "rankattack/subprocess.hpp"
#include "rankattack/text.hpp"

namespace rankattack {

using json = nlohmann::json;

std::string_view to_string(RewriteKind kind) {
    return kind == RewriteKind::paraphrase ? "paraphrase" : "summarize";
}

std::optional<RewriteKind> parse_rewrite_kind(std::string_view name) {
    if (name == "paraphrase") return RewriteKind::paraphrase;
    if (name == "summarize") return RewriteKind::summarize;
    return std::nullopt;
}

void RewritePrompt::validate() const {
    if (prompt_id.empty()) throw DataError("prompt with an empty prompt_id");
    const auto first = template_text.find(kPassageSlot);
    if (first == std::string::npos ||
        template_text.find(kPassageSlot, first + kPassageSlot.size()) != std::string::npos) {
        throw DataError(fmt::format("prompt {}: template needs exactly one {} slot", prompt_id,
                                    kPassageSlot));
    }
}

std::string RewritePrompt::fill(std::string_view passage) const {
    const auto at = template_text.find(kPassageSlot);
    if (at == std::string::npos) throw DataError(fmt::format("prompt {} has no passage slot", prompt_id));
    std::string out = template_text.substr(0, at);
    out += passage;
    out += template_text.substr(at + kPassageSlot.size());
    return out;
}

std::vector<RewritePrompt> default_prompts() {
    using K = RewriteKind;
    return {
        {"para-1", "Rewrite the following passage in your own words, keeping its meaning:\n\n{passage}",
         K::paraphrase},
        {"para-2", "Paraphrase this text so that it reads naturally and stays accurate:\n\n{passage}",
         K::paraphrase},
        {"para-3",
         "Rephrase the passage below so it is relevant and true to the original facts:\n\n{passage}",
         K::paraphrase},
        {"para-4", "Improve the wording of this passage without adding new information:\n\n{passage}",
         K::paraphrase},
        {"para-5", "Reword the passage below for a search engine audience:\n\n{passage}",
         K::paraphrase},
        {"sum-1", "Summarize the following passage in one sentence:\n\n{passage}", K::summarize},
        {"sum-2", "Write a short summary of this text:\n\n{passage}", K::summarize},
        {"sum-3", "Give a brief, relevant and true summary of the passage below:\n\n{passage}",
         K::summarize},
        {"sum-4", "State the main point of this passage in a few words:\n\n{passage}", K::summarize},
        {"sum-5", "Write a one-line abstract for the following text:\n\n{passage}", K::summarize},
    };
}

std::vector<RewritePrompt> parse_prompts(std::istream& in, const std::string& source) {
    std::vector<RewritePrompt> prompts;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        RewritePrompt prompt;
        try {
            const json obj = json::parse(line);
            prompt.prompt_id = obj.at("prompt_id").get<std::string>();
            prompt.template_text = obj.at("template").get<std::string>();
            const auto kind = parse_rewrite_kind(obj.at("kind").get<std::string>());
            if (!kind) throw ParseError(source, line_no, "kind must be paraphrase or summarize");
            prompt.kind = *kind;
        } catch (const json::exception& e) {
            throw ParseError(source, line_no, e.what());
        }
        try {
            prompt.validate();
        } catch (const DataError& e) {
            throw ParseError(source, line_no, e.what());
        }
        if (!seen.insert(prompt.prompt_id).second) {
            throw ParseError(source, line_no, "duplicate prompt_id " + prompt.prompt_id);
        }
        prompts.push_back(std::move(prompt));
    }
    return prompts;
}

void write_prompts(std::ostream& out, std::span<const RewritePrompt> prompts) {
    for (const RewritePrompt& p : prompts) {
        json obj = {{"prompt_id", p.prompt_id},
                    {"template", p.template_text},
                    {"kind", std::string(to_string(p.kind))}};
        out << obj.dump() << '\n';
    }
}

std::string StubGenerator::paraphrase_text(std::string_view passage) {
    const std::string_view body = trim(passage);
    if (body.empty()) return "True relevant";
    std::string text(body);
    if (std::isupper(static_cast<unsigned char>(text.front()))) {
        text.front() = static_cast<char>(std::tolower(static_cast<unsigned char>(text.front())));
    }
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    // Second sentence: first non-space after a terminator that is followed by space.
    std::size_t insert_at = std::string::npos;
    for (std::size_t i = 0; i + 1 < text.size(); ++i) {
        if ((text[i] == '.' || text[i] == '!' || text[i] == '?') && is_space(text[i + 1])) {
            std::size_t start = i + 1;
            while (start < text.size() && is_space(text[start])) ++start;
            if (start == text.size()) break;
            std::size_t end = start;
            while (end < text.size() && !is_space(text[end])) ++end;
            insert_at = end;
            break;
        }
    }
    if (insert_at == std::string::npos) {
        text += " relevant";
    } else {
        text.insert(insert_at, " relevant");
    }
    return "True " + text;
}

std::string StubGenerator::summary_text(std::string_view passage) {
    std::string out = "relevant true";
    const auto words = split_words(passage);
    for (std::size_t i = 0; i < words.size() && i < 8; ++i) {
        out.push_back(' ');
        out += words[i];
    }
    return out;
}

std::string StubGenerator::generate(const GenerationRequest& request) {
    return request.kind == RewriteKind::paraphrase ? paraphrase_text(request.passage)
                                                   : summary_text(request.passage);
}

void GeneratorEndpoint::validate() const {
    if (name.empty()) throw UsageError("generator needs a name");
    if (!(timeout_seconds > 0.0)) throw UsageError(fmt::format("generator {}: timeout must be > 0", name));
    if (max_attempts < 1) throw UsageError(fmt::format("generator {}: max_attempts must be >= 1", name));
    if (transport == Transport::http && url.empty()) {
        throw UsageError(fmt::format("generator {}: http transport needs a url", name));
    }
    if (transport == Transport::subprocess && command.empty()) {
        throw UsageError(fmt::format("generator {}: subprocess transport needs a command", name));
    }
}

namespace {

std::string parse_generation(std::string_view line, const std::string& generator) {
    try {
        const json obj = json::parse(line);
        return obj.at("text").get<std::string>();
    } catch (const json::exception&) {
        throw TransportError(fmt::format("generator {}: malformed response '{}'", generator, line));
    }
}

class HttpGenerator final : public Generator {
   public:
    explicit HttpGenerator(GeneratorEndpoint endpoint) : m_endpoint(std::move(endpoint)) {
        const std::string& url = m_endpoint.url;
        auto scheme = url.find("://");
        auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        m_base = slash == std::string::npos ? url : url.substr(0, slash);
        m_path = slash == std::string::npos ? "/" : url.substr(slash);
    }

    [[nodiscard]] std::string name() const override { return m_endpoint.name; }

    std::string generate(const GenerationRequest& request) override {
        httplib::Client client(m_base);
        const auto seconds =
            static_cast<time_t>(std::max(1.0, std::ceil(m_endpoint.timeout_seconds)));
        client.set_connection_timeout(seconds, 0);
        client.set_read_timeout(seconds, 0);
        client.set_write_timeout(seconds, 0);
        const json body = {{"prompt", request.prompt}};
        auto response = client.Post(m_path, body.dump(), "application/json");
        if (!response) {
            throw TransportError(fmt::format("generator {}: HTTP request failed ({})", name(),
                                             httplib::to_string(response.error())),
                                 true);
        }
        if (response->status != 200) {
            throw TransportError(fmt::format("generator {}: HTTP status {}", name(), response->status),
                                 response->status >= 500);
        }
        return parse_generation(response->body, name());
    }

   private:
    GeneratorEndpoint m_endpoint;
    std::string m_base;
    std::string m_path;
};

class SubprocessGenerator final : public Generator {
   public:
    explicit SubprocessGenerator(GeneratorEndpoint endpoint) : m_endpoint(std::move(endpoint)) {}

    [[nodiscard]] std::string name() const override { return m_endpoint.name; }

    std::string generate(const GenerationRequest& request) override {
        const json body = {{"prompt", request.prompt}};
        std::lock_guard lock(m_mutex);
        if (!m_process) m_process = std::make_unique<Subprocess>(m_endpoint.command);
        try {
            auto lines = m_process->exchange(
                body.dump() + "\n", 1,
                std::chrono::milliseconds(static_cast<long>(m_endpoint.timeout_seconds * 1000.0)));
            return parse_generation(lines.front(), name());
        } catch (const TransportError&) {
            m_process.reset();  // restart on the next call
            throw;
        }
    }

   private:
    GeneratorEndpoint m_endpoint;
    std::mutex m_mutex;
    std::unique_ptr<Subprocess> m_process;
};

}  // namespace

std::unique_ptr<Generator> make_generator(const GeneratorEndpoint& endpoint) {
    endpoint.validate();
    switch (endpoint.transport) {
        case GeneratorEndpoint::Transport::stub: return std::make_unique<StubGenerator>();
        case GeneratorEndpoint::Transport::http: return std::make_unique<HttpGenerator>(endpoint);
        case GeneratorEndpoint::Transport::subprocess:
            return std::make_unique<SubprocessGenerator>(endpoint);
    }
    throw UsageError("unknown generator transport");
}

AuditLog::AuditLog(const std::filesystem::path& path) : m_out(path, std::ios::app) {
    if (!m_out) throw DataError(fmt::format("cannot open audit log {}", path.string()));
}

void AuditLog::record(std::string_view generator, std::string_view prompt_id,
                      std::string_view doc_id, std::string_view prompt, std::string_view text) {
    const json entry = {{"generator", generator},
                        {"prompt_id", prompt_id},
                        {"doc_id", doc_id},
                        {"prompt", prompt},
                        {"text", text}};
    const std::string line = entry.dump() + "\n";
    std::lock_guard lock(m_mutex);
    m_out << line;
    m_out.flush();
}

std::string rewrite_spec_id(const RewritePrompt& prompt, std::string_view generator) {
    return fmt::format("rw/{}/{}/{}", to_string(prompt.kind), escape_component(prompt.prompt_id),
                       escape_component(generator));
}

namespace {

std::string generate_for(const Document& doc, const RewritePrompt& prompt, Generator& generator,
                         AuditLog* audit, int max_attempts) {
    GenerationRequest request{prompt.fill(doc.text), doc.text, prompt.kind};
    std::string raw;
    for (int attempt = 1;; ++attempt) {
        try {
            raw = generator.generate(request);
            break;
        } catch (const TransportError& e) {
            if (!e.retryable() || attempt >= max_attempts) {
                throw TransportError(fmt::format("doc {}: {}", doc.doc_id, e.what()), e.retryable());
            }
        }
    }
    if (audit) audit->record(generator.name(), prompt.prompt_id, doc.doc_id, request.prompt, raw);
    std::string text(trim(raw));
    if (text.empty()) {
        throw DataError(fmt::format("generator {} returned empty text for doc {} (prompt {})",
                                    generator.name(), doc.doc_id, prompt.prompt_id));
    }
    return text;
}

}  // namespace

AttackedDocument paraphrase(const Document& doc, const RewritePrompt& prompt, Generator& generator,
                            AuditLog* audit, int max_attempts) {
    return {doc.doc_id, rewrite_spec_id(prompt, generator.name()),
            generate_for(doc, prompt, generator, audit, max_attempts)};
}

AttackedDocument summarize_prepend(const Document& doc, const RewritePrompt& prompt,
                                   Generator& generator, AuditLog* audit, int max_attempts) {
    std::string summary = generate_for(doc, prompt, generator, audit, max_attempts);
    return {doc.doc_id, rewrite_spec_id(prompt, generator.name()), summary + " " + doc.text};
}

AttackedDocument rewrite(const Document& doc, const RewritePrompt& prompt, Generator& generator,
                         AuditLog* audit, int max_attempts) {
    return prompt.kind == RewriteKind::paraphrase
               ? paraphrase(doc, prompt, generator, audit, max_attempts)
               : summarize_prepend(doc, prompt, generator, audit, max_attempts);
}

std::vector<AttackedDocument> rewrite_all(std::span<const Document> docs,
                                          const RewritePrompt& prompt, Generator& generator,
                                          unsigned in_flight, AuditLog* audit, int max_attempts) {
    prompt.validate();
    std::vector<AttackedDocument> out(docs.size());
    parallel_for(docs.size(), in_flight, [&](std::size_t i) {
        out[i] = rewrite(docs[i], prompt, generator, audit, max_attempts);
    });
    return out;
}

std::vector<PilotPair> build_pilot(std::span<const QueryCandidates> queries, Scorer& scorer,
                                   std::size_t count, std::uint64_t seed) {
    struct Slot {
        std::size_t query;
        std::size_t doc;
    };
    std::vector<std::shared_ptr<const Ranking>> contexts;
    std::vector<Slot> slots;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        contexts.push_back(std::make_shared<const Ranking>(
            rerank(queries[q].query, queries[q].docs, scorer)));
        for (std::size_t d = 0; d < queries[q].docs.size(); ++d) slots.push_back({q, d});
    }
    // Partial Fisher-Yates with the portable draw.
    std::mt19937_64 rng(seed);
    const std::size_t take = std::min(count, slots.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + draw_below(rng, slots.size() - i);
        std::swap(slots[i], slots[j]);
    }
    std::vector<PilotPair> pilot;
    pilot.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        const Slot& s = slots[i];
        pilot.push_back({queries[s.query].query, queries[s.query].docs[s.doc], contexts[s.query]});
    }
    return pilot;
}

PromptSelection select_prompt(std::span<const RewritePrompt> candidates,
                              std::span<const PilotPair> pilot, Generator& generator,
                              Scorer& scorer, AuditLog* audit, unsigned in_flight) {
    if (candidates.empty()) throw std::invalid_argument("no candidate prompts");
    if (pilot.empty()) throw std::invalid_argument("empty pilot set");
    PromptSelection selection;
    std::size_t best = 0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const RewritePrompt& prompt = candidates[c];
        prompt.validate();
        std::vector<PairDelta> deltas(pilot.size());
        try {
            std::vector<AttackedDocument> rewritten(pilot.size());
            parallel_for(pilot.size(), in_flight, [&](std::size_t i) {
                rewritten[i] = rewrite(pilot[i].doc, prompt, generator, audit);
            });
            std::vector<ScoreRequest> batch;
            batch.reserve(pilot.size());
            for (std::size_t i = 0; i < pilot.size(); ++i) {
                batch.push_back({pilot[i].query.query_id, pilot[i].query.text,
                                 fmt::format("{}#{}", pilot[i].doc.doc_id, i), rewritten[i].text});
            }
            const std::vector<double> scores = scorer.score(batch);
            for (std::size_t i = 0; i < pilot.size(); ++i) {
                const Ranking& context = *pilot[i].context;
                deltas[i] = {pilot[i].query.query_id, pilot[i].doc.doc_id,
                             rank_or_tail(context, pilot[i].doc.doc_id),
                             rank_with_score(context, pilot[i].doc.doc_id, scores.at(i))};
            }
        } catch (const TransportError& e) {
            throw PromptSelectionError(
                fmt::format("prompt selection aborted at {}: {}", prompt.prompt_id, e.what()),
                selection.scores);
        }
        selection.scores.push_back({prompt.prompt_id, mean_rank_change(deltas), success_rate(deltas)});
        const PromptScore& current = selection.scores.back();
        const PromptScore& leader = selection.scores[best];
        if (current.mrc > leader.mrc ||
            (current.mrc == leader.mrc && current.prompt_id < leader.prompt_id)) {
            best = c;
        }
    }
    selection.best = candidates[best];
    return selection;
}

}  // namespace rankattack
