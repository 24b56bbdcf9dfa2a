#include "rankattack/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <thread>

#include <fmt/format.h>

#include "rankattack/errors.hpp"

namespace rankattack {
namespace {

void set_nonblocking(int fd) {
    int flags = ::fcntl(fd, F_GETFL);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

}  // namespace

Subprocess::Subprocess(const std::vector<std::string>& argv) {
    if (argv.empty()) throw TransportError("empty command line");
    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw TransportError("pipe failed");
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        throw TransportError("pipe failed");
    }
    // A dead reader must surface as EPIPE, not kill the parent.
    ::signal(SIGPIPE, SIG_IGN);

    std::vector<char*> args;
    for (const std::string& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    m_pid = ::fork();
    if (m_pid < 0) throw TransportError("fork failed");
    if (m_pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::execvp(args[0], args.data());
        _exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    m_stdin = to_child[1];
    m_stdout = from_child[0];
    set_nonblocking(m_stdin);
    set_nonblocking(m_stdout);
}

Subprocess::~Subprocess() { shutdown(); }

void Subprocess::shutdown() noexcept {
    if (m_stdin >= 0) ::close(m_stdin);
    if (m_stdout >= 0) ::close(m_stdout);
    m_stdin = m_stdout = -1;
    if (m_pid > 0) {
        int status = 0;
        for (int attempt = 0; attempt < 50; ++attempt) {
            if (::waitpid(m_pid, &status, WNOHANG) != 0) {
                m_pid = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(m_pid, SIGKILL);
        ::waitpid(m_pid, &status, 0);
        m_pid = -1;
    }
}

std::vector<std::string> Subprocess::exchange(std::string_view payload, std::size_t lines,
                                              std::chrono::milliseconds timeout) {
    if (m_stdout < 0) throw TransportError("subprocess is closed", true);
    std::vector<std::string> out;
    auto take_lines = [&] {
        std::size_t pos;
        while (out.size() < lines && (pos = m_pending.find('\n')) != std::string::npos) {
            out.push_back(m_pending.substr(0, pos));
            m_pending.erase(0, pos + 1);
        }
    };
    take_lines();

    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::size_t written = 0;
    std::array<char, 65536> buffer{};
    while (written < payload.size() || out.size() < lines) {
        auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) {
            throw TransportError(
                fmt::format("subprocess timed out after {} ms", timeout.count()), true);
        }
        std::array<pollfd, 2> fds{};
        nfds_t count = 0;
        int read_slot = -1;
        int write_slot = -1;
        if (out.size() < lines) {
            fds[count] = {m_stdout, POLLIN, 0};
            read_slot = static_cast<int>(count++);
        }
        if (written < payload.size()) {
            fds[count] = {m_stdin, POLLOUT, 0};
            write_slot = static_cast<int>(count++);
        }
        int ready = ::poll(fds.data(), count, static_cast<int>(remaining.count()));
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw TransportError(fmt::format("poll failed: {}", std::strerror(errno)), true);
        }
        if (write_slot >= 0 && fds[write_slot].revents != 0) {
            if (fds[write_slot].revents & (POLLERR | POLLHUP)) {
                throw TransportError("subprocess closed its input", true);
            }
            ssize_t n = ::write(m_stdin, payload.data() + written, payload.size() - written);
            if (n < 0 && errno != EAGAIN && errno != EINTR) {
                throw TransportError(fmt::format("write failed: {}", std::strerror(errno)), true);
            }
            if (n > 0) written += static_cast<std::size_t>(n);
        }
        if (read_slot >= 0 && fds[read_slot].revents != 0) {
            ssize_t n = ::read(m_stdout, buffer.data(), buffer.size());
            if (n == 0) throw TransportError("subprocess exited", true);
            if (n < 0 && errno != EAGAIN && errno != EINTR) {
                throw TransportError(fmt::format("read failed: {}", std::strerror(errno)), true);
            }
            if (n > 0) {
                m_pending.append(buffer.data(), static_cast<std::size_t>(n));
                take_lines();
            }
        }
    }
    return out;
}

}  // namespace rankattack
