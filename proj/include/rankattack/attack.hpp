#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rankattack/corpus_io.hpp"

namespace rankattack {

enum class TokenCategory { prompt, control, synonym, subword };
enum class Position { start, end, random };

std::string_view to_string(TokenCategory category);
std::optional<TokenCategory> parse_category(std::string_view name);
/// "start" | "end" | "random"
std::string_view to_string(Position position);
/// Accepts the long names and the one-letter report forms s/e/r.
std::optional<Position> parse_position(std::string_view name);
char position_letter(Position position);

struct AttackToken {
    std::string surface;  // may contain spaces, e.g. "relevant: true"
    TokenCategory category = TokenCategory::prompt;

    bool operator==(const AttackToken&) const = default;
};

/// One point of the injection grid. The default-constructed value is not
/// valid; use make() or identity().
class AttackSpec {
   public:
    /// Throws std::invalid_argument for an empty surface or repetitions < 1.
    static AttackSpec make(AttackToken token, Position position, int repetitions);
    /// The no-op attack; its spec_id sorts ahead of every injection spec.
    static AttackSpec identity();

    [[nodiscard]] bool is_identity() const noexcept { return m_repetitions == 0; }
    [[nodiscard]] const AttackToken& token() const noexcept { return m_token; }
    [[nodiscard]] Position position() const noexcept { return m_position; }
    [[nodiscard]] int repetitions() const noexcept { return m_repetitions; }
    [[nodiscard]] const std::string& spec_id() const noexcept { return m_spec_id; }

    bool operator==(const AttackSpec& other) const { return m_spec_id == other.m_spec_id; }

   private:
    AttackToken m_token;
    Position m_position = Position::start;
    int m_repetitions = 0;
    std::string m_spec_id;
};

inline constexpr std::string_view kIdentitySpecId = "identity";

/// Fields recovered from an injection spec_id (`inj/<surface>/<s|e|r>/<n>`).
struct SpecIdFields {
    std::string surface;
    Position position;
    int repetitions;
};
std::optional<SpecIdFields> parse_spec_id(std::string_view spec_id);

struct AttackedDocument {
    std::string source_doc_id;
    std::string spec_id;
    std::string text;

    bool operator==(const AttackedDocument&) const = default;
};

/// d' = f(d, spec). No query input exists by construction. The seed is only
/// consumed by random-position specs.
AttackedDocument inject(const Document& doc, const AttackSpec& spec, std::uint64_t seed);

/// Per-pair RNG seed: a hash of (global seed, doc_id, spec_id), so every pair
/// draws an independent stream regardless of evaluation order.
std::uint64_t pair_seed(std::uint64_t global_seed, std::string_view doc_id,
                        std::string_view spec_id);

/// Cartesian product in lexicon order, then start/end/random, then ascending
/// repetitions. Throws std::invalid_argument for an empty lexicon or a
/// duplicate surface.
std::vector<AttackSpec> build_grid(std::span<const AttackToken> lexicon,
                                   std::span<const Position> positions,
                                   std::span<const int> repetitions);

/// The 21 tokens of the prompt/control/synonym/sub-word study.
std::vector<AttackToken> default_lexicon();

/// `category<TAB>surface` per line; blank lines and '#' comments are skipped.
std::vector<AttackToken> parse_lexicon(std::istream& in, const std::string& source = "<lexicon>");
void write_lexicon(std::ostream& out, std::span<const AttackToken> lexicon);

/// `source_doc_id<TAB>spec_id<TAB>text`; '#' lines are header comments.
void write_attacked(std::ostream& out, std::span<const AttackedDocument> docs);
std::vector<AttackedDocument> parse_attacked(std::istream& in,
                                             const std::string& source = "<attacked>");

}  // namespace rankattack
