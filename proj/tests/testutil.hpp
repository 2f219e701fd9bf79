#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace testutil {

/// Fresh scratch directory under the system temp root; wiped on construction
/// and on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("changeforge_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

/// Path of the command-line binary under test (exported by ctest).
inline std::string cli_binary() {
    const char* bin = std::getenv("CHANGEFORGE_BIN");
    if (!bin || !*bin)
        throw std::runtime_error("CHANGEFORGE_BIN is not set; run through ctest");
    return bin;
}

/// Run the CLI with `args`, redirecting output into `log`; returns the exit
/// code (negative if the child did not exit normally).
inline int run_cli(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd =
        cli_binary() + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -2;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b) {
    return slurp(a) == slurp(b);
}

} // namespace testutil
