#pragma once

// Line-oriented external speech-engine protocol: one sentence per line on the
// child's standard input, one transcript per line back, order- and
// count-preserving. Lets a real TTS→STT stack stand in for the simulated
// channel.

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "telephonetic/error.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

namespace detail {

inline void set_nonblocking(int fd) {
    int flags = fcntl(fd, F_GETFL, 0);
    if (flags < 0 || fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
        throw engine_error(std::string("fcntl failed: ") + std::strerror(errno));
}

inline std::string truncate_for_log(const std::string& s, std::size_t limit = 300) {
    if (s.size() <= limit) return s;
    return s.substr(0, limit) + "… (" + std::to_string(s.size()) + " bytes total)";
}

}  // namespace detail

inline std::vector<std::string> external_roundtrip(const std::vector<std::string>& batch,
                                                   const std::string& command,
                                                   int timeout_ms = 120000) {
    if (batch.empty()) return {};
    if (command.empty()) throw engine_error("external engine command is empty");

    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0 || pipe(err_pipe) != 0)
        throw engine_error(std::string("pipe failed: ") + std::strerror(errno));

    pid_t pid = fork();
    if (pid < 0) throw engine_error(std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }

    close(in_pipe[0]);
    close(out_pipe[1]);
    close(err_pipe[1]);

    std::string input;
    for (const auto& line : batch) input += line + "\n";

    detail::set_nonblocking(in_pipe[1]);
    detail::set_nonblocking(out_pipe[0]);
    detail::set_nonblocking(err_pipe[0]);

    std::string out_buf, err_buf;
    std::size_t written = 0;
    int write_fd = in_pipe[1], read_fd = out_pipe[0], errread_fd = err_pipe[0];
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    bool timed_out = false;

    // Interleave writing and reading so a chatty engine can't deadlock us.
    while (read_fd >= 0 || errread_fd >= 0 || write_fd >= 0) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            timed_out = true;
            break;
        }
        int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
        if (wait_ms < 1) wait_ms = 1;

        struct pollfd fds[3];
        nfds_t nfds = 0;
        int wi = -1, ri = -1, ei = -1;
        if (write_fd >= 0) {
            wi = static_cast<int>(nfds);
            fds[nfds++] = {write_fd, POLLOUT, 0};
        }
        if (read_fd >= 0) {
            ri = static_cast<int>(nfds);
            fds[nfds++] = {read_fd, POLLIN, 0};
        }
        if (errread_fd >= 0) {
            ei = static_cast<int>(nfds);
            fds[nfds++] = {errread_fd, POLLIN, 0};
        }
        int rc = poll(fds, nfds, wait_ms);
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (rc == 0) continue;  // re-check deadline

        char buf[4096];
        if (wi >= 0 && (fds[wi].revents & (POLLOUT | POLLERR | POLLHUP))) {
            if (fds[wi].revents & (POLLERR | POLLHUP)) {
                close(write_fd);
                write_fd = -1;
            } else {
                ssize_t n = write(write_fd, input.data() + written,
                                  std::min<std::size_t>(input.size() - written, 65536));
                if (n > 0) written += static_cast<std::size_t>(n);
                if (n < 0 && errno != EAGAIN && errno != EINTR) {
                    close(write_fd);
                    write_fd = -1;
                }
                if (written == input.size()) {
                    close(write_fd);  // signal end of input
                    write_fd = -1;
                }
            }
        }
        if (ri >= 0 && (fds[ri].revents & (POLLIN | POLLERR | POLLHUP))) {
            ssize_t n = read(read_fd, buf, sizeof buf);
            if (n > 0) {
                out_buf.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) {
                close(read_fd);
                read_fd = -1;
            }
        }
        if (ei >= 0 && (fds[ei].revents & (POLLIN | POLLERR | POLLHUP))) {
            ssize_t n = read(errread_fd, buf, sizeof buf);
            if (n > 0) {
                err_buf.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) {
                close(errread_fd);
                errread_fd = -1;
            }
        }
    }

    if (write_fd >= 0) close(write_fd);
    if (read_fd >= 0) close(read_fd);
    if (errread_fd >= 0) close(errread_fd);

    int status = 0;
    if (timed_out) {
        kill(pid, SIGKILL);
        waitpid(pid, &status, 0);
        throw engine_error("external engine timed out after " + std::to_string(timeout_ms) +
                           " ms; received " + std::to_string(out_buf.size()) + " bytes before the kill");
    }
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        std::string why = WIFEXITED(status)
                              ? "exited with status " + std::to_string(WEXITSTATUS(status))
                              : "terminated by signal " + std::to_string(WTERMSIG(status));
        throw engine_error("external engine " + why +
                           (err_buf.empty() ? "" : "; stderr: " + detail::truncate_for_log(err_buf)));
    }

    std::vector<std::string> lines;
    for (std::string_view l : split_lines(out_buf)) lines.emplace_back(l);
    if (lines.size() != batch.size())
        throw engine_error("external engine returned " + std::to_string(lines.size()) +
                           " lines for " + std::to_string(batch.size()) + " inputs" +
                           (err_buf.empty() ? "" : "; stderr: " + detail::truncate_for_log(err_buf)));
    return lines;
}

}  // namespace telephonetic
