#include "phimesa/common.hpp"

#include <atomic>
#include <charconv>
#include <cstdlib>

namespace phimesa {

namespace {

int read_env_threads() {
    const char* s = std::getenv("PHI_MESA_THREADS");
    if (s == nullptr || *s == '\0') return 1;
    int n = 0;
    auto [ptr, ec] = std::from_chars(s, s + std::char_traits<char>::length(s), n);
    if (ec != std::errc{} || *ptr != '\0' || n < 1) return 1;
    return n;
}

std::atomic<int> g_threads{-1};

}  // namespace

int max_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n < 0) {
        n = read_env_threads();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_max_threads(int n) {
    g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace phimesa
