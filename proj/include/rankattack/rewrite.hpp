#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "rankattack/attack.hpp"
#include "rankattack/corpus_io.hpp"
#include "rankattack/errors.hpp"
#include "rankattack/scorers.hpp"

namespace rankattack {

enum class RewriteKind { paraphrase, summarize };

std::string_view to_string(RewriteKind kind);
std::optional<RewriteKind> parse_rewrite_kind(std::string_view name);

inline constexpr std::string_view kPassageSlot = "{passage}";

struct RewritePrompt {
    std::string prompt_id;
    std::string template_text;  // exactly one {passage} slot
    RewriteKind kind = RewriteKind::paraphrase;

    /// Throws DataError unless the template holds exactly one passage slot and
    /// the id is non-empty.
    void validate() const;
    [[nodiscard]] std::string fill(std::string_view passage) const;
};

/// Five paraphrasing and five summarisation prompts shipped with the tool.
std::vector<RewritePrompt> default_prompts();

/// JSONL, one {"prompt_id", "template", "kind"} object per line.
std::vector<RewritePrompt> parse_prompts(std::istream& in, const std::string& source = "<prompts>");
void write_prompts(std::ostream& out, std::span<const RewritePrompt> prompts);

/// What a generator receives. Only `prompt` crosses a transport; `passage` and
/// `kind` let the in-process stub act without parsing the prompt. Queries are
/// never part of a request.
struct GenerationRequest {
    std::string prompt;
    std::string passage;
    RewriteKind kind = RewriteKind::paraphrase;
};

/// Text generator. Implementations are safe to call from several threads.
class Generator {
   public:
    virtual ~Generator() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    /// Throws TransportError (retryable) on transport failure or timeout.
    virtual std::string generate(const GenerationRequest& request) = 0;
};

/// Deterministic offline generator. Paraphrase: lowercases a leading ASCII
/// capital, prepends "True " and inserts " relevant" after the first word of
/// the second sentence (or at the end without one). Summarize: "relevant true"
/// followed by the first eight words of the passage.
class StubGenerator final : public Generator {
   public:
    [[nodiscard]] std::string name() const override { return "stub"; }
    std::string generate(const GenerationRequest& request) override;

    static std::string paraphrase_text(std::string_view passage);
    static std::string summary_text(std::string_view passage);
};

struct GeneratorEndpoint {
    enum class Transport { stub, http, subprocess };

    std::string name = "stub";
    Transport transport = Transport::stub;
    std::string url;                   // http: POST {"prompt"} -> {"text"}
    std::vector<std::string> command;  // subprocess: one JSON object per line
    double timeout_seconds = 120.0;
    int max_attempts = 3;

    void validate() const;
};

std::unique_ptr<Generator> make_generator(const GeneratorEndpoint& endpoint);

/// Append-only JSONL record of every generator request and response.
class AuditLog {
   public:
    explicit AuditLog(const std::filesystem::path& path);

    void record(std::string_view generator, std::string_view prompt_id, std::string_view doc_id,
                std::string_view prompt, std::string_view text);

   private:
    std::mutex m_mutex;
    std::ofstream m_out;
};

/// `rw/<kind>/<prompt_id>/<generator>` with escaped components.
std::string rewrite_spec_id(const RewritePrompt& prompt, std::string_view generator);

/// Generator output stripped of surrounding whitespace. Throws DataError
/// naming the document when the generation is empty.
AttackedDocument paraphrase(const Document& doc, const RewritePrompt& prompt, Generator& generator,
                            AuditLog* audit = nullptr, int max_attempts = 1);

/// summary + ' ' + original text; the original is kept byte-identical as suffix.
AttackedDocument summarize_prepend(const Document& doc, const RewritePrompt& prompt,
                                   Generator& generator, AuditLog* audit = nullptr,
                                   int max_attempts = 1);

/// Dispatches on prompt.kind.
AttackedDocument rewrite(const Document& doc, const RewritePrompt& prompt, Generator& generator,
                         AuditLog* audit = nullptr, int max_attempts = 1);

/// Rewrites every document with at most `in_flight` generator calls running.
/// Output order follows `docs`.
std::vector<AttackedDocument> rewrite_all(std::span<const Document> docs,
                                          const RewritePrompt& prompt, Generator& generator,
                                          unsigned in_flight, AuditLog* audit = nullptr,
                                          int max_attempts = 1);

struct PilotPair {
    Query query;
    Document doc;
    std::shared_ptr<const Ranking> context;  // original ranking of the query's candidates
};

/// Samples `count` (query, document) pairs without replacement from the
/// re-ranked candidates, deterministically for a given seed.
std::vector<PilotPair> build_pilot(std::span<const QueryCandidates> queries, Scorer& scorer,
                                   std::size_t count, std::uint64_t seed);

struct PromptScore {
    std::string prompt_id;
    double mrc = 0.0;
    double sr = 0.0;
};

struct PromptSelection {
    RewritePrompt best;
    std::vector<PromptScore> scores;  // candidate order
};

/// Thrown when the scorer or generator fails mid-selection; carries the
/// prompts evaluated so far.
class PromptSelectionError : public TransportError {
   public:
    PromptSelectionError(const std::string& what, std::vector<PromptScore> partial)
        : TransportError(what), m_partial(std::move(partial)) {}

    [[nodiscard]] const std::vector<PromptScore>& partial() const noexcept { return m_partial; }

   private:
    std::vector<PromptScore> m_partial;
};

/// Argmax of MRC over the pilot pairs; ties go to the smallest prompt_id.
/// Throws std::invalid_argument for no candidates or an empty pilot.
PromptSelection select_prompt(std::span<const RewritePrompt> candidates,
                              std::span<const PilotPair> pilot, Generator& generator,
                              Scorer& scorer, AuditLog* audit = nullptr, unsigned in_flight = 1);

}  // namespace rankattack
