#include "pointpose/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "pointpose/util.hpp"

namespace pointpose::kern {

#if !defined(POINTPOSE_HAVE_AVX2)
const Table* avx2_table() { return nullptr; }
#endif

namespace {
std::atomic<const Table*> g_active{nullptr};

const Table* resolve() {
    const char* e = std::getenv("POINTPOSE_KERNELS");
    if (e) {
        if (std::strcmp(e, "scalar") == 0) return &scalar_table();
        if (std::strcmp(e, "avx2") == 0 && avx2_table()) return avx2_table();
        log_error(std::string("unknown/unavailable POINTPOSE_KERNELS value: ") + e);
    }
    if (const Table* t = avx2_table()) return t;
    return &scalar_table();
}
}  // namespace

const Table& active() {
    const Table* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = resolve();
        g_active.store(t, std::memory_order_release);
        log_debug(std::string("kernel lane: ") + t->name);
    }
    return *t;
}

void set_active(const char* name) {
    if (std::strcmp(name, "scalar") == 0) {
        g_active.store(&scalar_table());
        return;
    }
    if (std::strcmp(name, "avx2") == 0) {
        if (const Table* t = avx2_table()) {
            g_active.store(t);
            return;
        }
        throw std::runtime_error("avx2 kernels unavailable on this CPU/build");
    }
    throw std::runtime_error(std::string("unknown kernel lane: ") + name);
}

}  // namespace pointpose::kern
