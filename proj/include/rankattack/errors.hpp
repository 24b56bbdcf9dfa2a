#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rankattack {

/// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// A parse failure at a known line of some source.
class ParseError : public DataError {
   public:
    ParseError(std::string source, std::size_t line, const std::string& what)
        : DataError(source + ":" + std::to_string(line) + ": " + what),
          m_source(std::move(source)),
          m_line(line) {}

    [[nodiscard]] const std::string& source() const noexcept { return m_source; }
    [[nodiscard]] std::size_t line() const noexcept { return m_line; }

   private:
    std::string m_source;
    std::size_t m_line;
};

/// Scorer or generator transport failure (CLI exit code 3).
class TransportError : public std::runtime_error {
   public:
    TransportError(const std::string& what, bool retryable = false)
        : std::runtime_error(what), m_retryable(retryable) {}

    [[nodiscard]] bool retryable() const noexcept { return m_retryable; }

   private:
    bool m_retryable;
};

/// Bad configuration or command line (CLI exit code 1).
class UsageError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace rankattack
