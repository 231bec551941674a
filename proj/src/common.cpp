#include "gridest/common.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gridest {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

std::uint64_t sub_seed(std::uint64_t master, const std::string& tag) {
    return splitmix64(master ^ splitmix64(fnv1a(tag)));
}

namespace parallel {

namespace {
std::atomic<int> g_max_threads{0};
}

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }

int max_threads() {
    int cap = g_max_threads.load();
#ifdef _OPENMP
    int hw = omp_get_max_threads();
#else
    int hw = 1;
#endif
    if (cap == 0 || cap > hw) return hw;
    return cap;
}

} // namespace parallel

} // namespace gridest
