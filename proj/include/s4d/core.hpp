// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace s4d {

// Validation problems (bad files, bad shapes, bad flags) -> exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical problems (non-finite values, failed checks) -> exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline void require_numeric(bool cond, const std::string& msg) {
    if (!cond) throw NumericError(msg);
}

// ---------------------------------------------------------------- logging

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("S4D_LOG");
        if (!e) return LogLevel::Info;
        if (std::strcmp(e, "error") == 0) return LogLevel::Error;
        if (std::strcmp(e, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return lvl;
}

template <class... Args>
void log_info(const char* fmt, Args... args) {
    if (log_level() >= LogLevel::Info) {
        std::fprintf(stderr, "[s4d] ");
        std::fprintf(stderr, fmt, args...);
        std::fprintf(stderr, "\n");
    }
}

template <class... Args>
void log_debug(const char* fmt, Args... args) {
    if (log_level() >= LogLevel::Debug) {
        std::fprintf(stderr, "[s4d:debug] ");
        std::fprintf(stderr, fmt, args...);
        std::fprintf(stderr, "\n");
    }
}

// ---------------------------------------------------------------- threading

// Global worker count for parallel loops. 0 = hardware concurrency.
inline int& thread_count() {
    static int n = 0;
    return n;
}

inline int effective_threads() {
    int n = thread_count();
    if (n <= 0) {
        unsigned hc = std::thread::hardware_concurrency();
        n = hc ? static_cast<int>(hc) : 1;
    }
    return n;
}

// Runs fn(i) for i in [0, n). Work is pulled chunk-by-chunk from an atomic
// counter, so results must only depend on i, never on the executing thread.
// Callers that reduce must store partials indexed by i (or by a chunk id
// derived from i alone) and merge serially afterwards; that keeps artifacts
// byte-identical for any --threads value.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = effective_threads();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    int spawn = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    pool.reserve(spawn);
    for (int t = 1; t < spawn; ++t) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------- hashing

// FNV-1a, used for content hashes in manifests and reports.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace s4d
