#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace rankattack {

/// Lowercases and splits on non-alphanumeric code points. ASCII follows the C
/// locale; Latin-1, Latin Extended-A, Greek and Cyrillic letters are folded to
/// lowercase; other non-ASCII code points outside the punctuation and symbol
/// blocks count as word characters. Invalid UTF-8 bytes act as separators.
std::vector<std::string> tokenize(std::string_view text);

/// Whitespace (space, tab, CR, LF, VT, FF) separated words.
std::vector<std::string_view> split_words(std::string_view text);

/// FNV-1a 64-bit; used for stable per-pair RNG seeding, not for integrity.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
/// Hex SHA-256 of a file's bytes, read in chunks. Throws DataError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// Percent-style escaping for identifiers embedded in TSV and spec ids:
/// space becomes '+', and '%', '+', '/', control bytes and TAB become %XX.
std::string escape_component(std::string_view raw);
std::string unescape_component(std::string_view escaped);

std::string_view trim(std::string_view text);

/// Unbiased draw from [0, bound) by rejection. Portable: depends only on the
/// engine output sequence, which the standard fixes for mt19937_64.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t bound);

}  // namespace rankattack
