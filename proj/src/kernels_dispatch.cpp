#include "ortho/kernels.hpp"

#include <atomic>
#include <cstring>
#include <stdexcept>
#include <string>

namespace ortho::kern {

const Kernels *avx2_impl(); // defined in kernels_avx2.cpp

const Kernels *avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        return avx2_impl();
#endif
    return nullptr;
}

namespace {
std::atomic<const Kernels *> g_active{nullptr};

const Kernels *pick_default() {
    if (const Kernels *v = avx2()) return v;
    return &scalar();
}
} // namespace

const Kernels &active() {
    const Kernels *k = g_active.load(std::memory_order_relaxed);
    if (!k) {
        k = pick_default();
        g_active.store(k, std::memory_order_relaxed);
    }
    return *k;
}

void select(const char *name) {
    if (std::strcmp(name, "auto") == 0) {
        g_active.store(pick_default(), std::memory_order_relaxed);
    } else if (std::strcmp(name, "scalar") == 0) {
        g_active.store(&scalar(), std::memory_order_relaxed);
    } else if (std::strcmp(name, "avx2") == 0) {
        const Kernels *v = avx2();
        if (!v) throw std::runtime_error("kernels: avx2 backend not available on this CPU");
        g_active.store(v, std::memory_order_relaxed);
    } else {
        throw std::runtime_error(std::string("kernels: unknown backend '") + name + "'");
    }
}

} // namespace ortho::kern
