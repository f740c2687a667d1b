#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "neuropipe/nifti.hpp"
#include "neuropipe/transforms.hpp"

namespace fs = std::filesystem;

namespace neuropipe {

namespace {

// Counting permits for concurrent subprocesses.
class PermitPool {
public:
    void set_limit(int limit) {
        std::lock_guard lock(mu_);
        limit_ = limit;
        cv_.notify_all();
    }
    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return active_ < limit_; });
        ++active_;
    }
    void release() {
        std::lock_guard lock(mu_);
        --active_;
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int limit_ = 2;
    int active_ = 0;
};

PermitPool& permit_pool() {
    static PermitPool pool;
    return pool;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::string read_tail(const fs::path& path, size_t max_bytes = 2048) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        return {};
    }
    auto size = static_cast<size_t>(f.tellg());
    size_t take = std::min(size, max_bytes);
    f.seekg(static_cast<std::streamoff>(size - take));
    std::string tail(take, '\0');
    f.read(tail.data(), static_cast<std::streamsize>(take));
    return tail;
}

struct TempDirGuard {
    fs::path dir;
    ~TempDirGuard() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
};

// Runs `sh -c cmd` with stderr captured; returns the exit status or throws
// CommandTimeout after killing the child.
int run_with_timeout(const std::string& cmd, const fs::path& stderr_path,
                     double timeout_seconds) {
    pid_t pid = fork();
    if (pid < 0) {
        raise(ErrorCode::CommandFailed, "fork failed");
    }
    if (pid == 0) {
        int fd = open(stderr_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
        if (fd >= 0) {
            dup2(fd, 2);
            close(fd);
        }
        execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }

    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(static_cast<int64_t>(timeout_seconds * 1000));
    int status = 0;
    while (true) {
        pid_t done = waitpid(pid, &status, WNOHANG);
        if (done == pid) {
            break;
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            raise(ErrorCode::CommandTimeout,
                  "command exceeded " + std::to_string(timeout_seconds) + " s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (WIFEXITED(status)) {
        return WEXITSTATUS(status);
    }
    return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

}  // namespace

void set_external_command_permits(int permits) {
    require(permits >= 1, ErrorCode::InvalidArgument, "permits must be >= 1");
    permit_pool().set_limit(permits);
}

AffineVolume run_external(const std::string& command_template, const AffineVolume& v,
                          double timeout_seconds) {
    require(command_template.find("{input}") != std::string::npos &&
                command_template.find("{output}") != std::string::npos,
            ErrorCode::InvalidArgument, "command template needs {input} and {output}");

    static std::atomic<uint64_t> counter{0};
    fs::path dir = fs::temp_directory_path() /
                   ("neuropipe-" + std::to_string(getpid()) + "-" +
                    std::to_string(counter.fetch_add(1)));
    fs::create_directories(dir);
    TempDirGuard guard{dir};

    fs::path input_path = dir / "input.nii";
    fs::path output_path = dir / "output.nii";
    fs::path stderr_path = dir / "stderr.txt";
    write_nifti(v, input_path.string(), false);

    std::string cmd = replace_all(command_template, "{input}", input_path.string());
    cmd = replace_all(cmd, "{output}", output_path.string());

    permit_pool().acquire();
    int exit_code;
    try {
        exit_code = run_with_timeout(cmd, stderr_path, timeout_seconds);
    } catch (...) {
        permit_pool().release();
        throw;
    }
    permit_pool().release();

    if (exit_code != 0) {
        raise(ErrorCode::CommandFailed, "exit code " + std::to_string(exit_code) +
                                            "; stderr: " + read_tail(stderr_path));
    }
    if (!fs::exists(output_path)) {
        raise(ErrorCode::OutputMissing, "command produced no output file");
    }
    return read_nifti(output_path.string());
}

}  // namespace neuropipe
