#include "pointpose/util.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <thread>
#include <vector>

namespace pointpose {

LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("POINTPOSE_LOG");
        if (!e) return LogLevel::info;
        if (std::strcmp(e, "error") == 0) return LogLevel::error;
        if (std::strcmp(e, "debug") == 0) return LogLevel::debug;
        return LogLevel::info;
    }();
    return lvl;
}

void log_msg(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

static std::atomic<int> g_jobs{0};

int job_count() {
    int j = g_jobs.load();
    if (j > 0) return j;
    const char* e = std::getenv("POINTPOSE_JOBS");
    if (e) {
        int v = std::atoi(e);
        if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void set_job_count(int n) { g_jobs.store(n); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn, int64_t min_grain) {
    if (n <= 0) return;
    int jobs = job_count();
    if (jobs <= 1 || n <= min_grain) {
        fn(0, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(jobs, (n + min_grain - 1) / min_grain);
    int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(chunks - 1));
    for (int64_t c = 1; c < chunks; ++c) {
        int64_t b = c * per, e = std::min(n, (c + 1) * per);
        if (b >= e) break;
        threads.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, std::min(n, per));
    for (auto& t : threads) t.join();
}

}  // namespace pointpose
