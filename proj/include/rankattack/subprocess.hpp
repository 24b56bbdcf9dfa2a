#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <sys/types.h>
#include <vector>

namespace rankattack {

/// A child process with line-oriented stdin/stdout pipes. stderr is inherited.
/// Not thread-safe; callers serialize access per instance.
class Subprocess {
   public:
    /// Throws TransportError if the program cannot be started.
    explicit Subprocess(const std::vector<std::string>& argv);
    ~Subprocess();

    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;

    /// Writes `payload` while concurrently collecting `lines` newline-terminated
    /// lines from the child, so large batches cannot deadlock on full pipes.
    /// Throws TransportError (retryable) on timeout or when the child exits.
    std::vector<std::string> exchange(std::string_view payload, std::size_t lines,
                                      std::chrono::milliseconds timeout);

    [[nodiscard]] pid_t pid() const noexcept { return m_pid; }

   private:
    void shutdown() noexcept;

    pid_t m_pid = -1;
    int m_stdin = -1;
    int m_stdout = -1;
    std::string m_pending;  // bytes read past the last complete line
};

}  // namespace rankattack
