#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>

namespace pointpose {

// splitmix64, used to derive independent child seeds from a master seed.
inline uint64_t hash_mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return hash_mix(master ^ hash_mix(stream + 0x51ull));
}

inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(master, a), b);
}

using Rng = std::mt19937_64;

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Level comes from POINTPOSE_LOG={error,info,debug}; default info.
LogLevel log_level();
void log_msg(LogLevel lvl, const std::string& msg);
inline void log_error(const std::string& m) { log_msg(LogLevel::error, m); }
inline void log_info(const std::string& m) { log_msg(LogLevel::info, m); }
inline void log_debug(const std::string& m) { log_msg(LogLevel::debug, m); }

// Worker cap for internal parallelism (--jobs / POINTPOSE_JOBS).
int job_count();
void set_job_count(int n);

// Runs fn(begin,end) over disjoint chunks of [0,n). Each output element is
// written by exactly one chunk, so results do not depend on the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t min_grain = 1024);

}  // namespace pointpose
