#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "phimesa/common.hpp"
#include "phimesa/kernels.hpp"

using namespace phimesa;
using namespace phimesa::kernels;

namespace {

template <typename T>
std::vector<T> random_matrix(size_t rows, size_t cols, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<T> out(rows * cols);
    for (auto& v : out)
        v = static_cast<T>((static_cast<double>(rng() >> 11) * 0x1.0p-53) * 2.0 - 1.0);
    return out;
}

template <typename T>
std::vector<T> transpose(const std::vector<T>& a, size_t rows, size_t cols) {
    std::vector<T> out(a.size());
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    return out;
}

template <typename T>
bool bit_equal(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

struct ThreadGuard {
    ~ThreadGuard() { set_max_threads(1); }
};

}  // namespace

TEST_CASE("serial matmul matches hand-computed products") {
    // [1 2 3; 4 5 6] * [7 8; 9 10; 11 12] = [58 64; 139 154]
    const std::vector<float> a{1, 2, 3, 4, 5, 6};
    const std::vector<float> b{7, 8, 9, 10, 11, 12};
    std::vector<float> c(4, -1.0f);
    matmul_serial(a.data(), b.data(), c.data(), 2, 3, 2);
    CHECK(c[0] == 58.0f);
    CHECK(c[1] == 64.0f);
    CHECK(c[2] == 139.0f);
    CHECK(c[3] == 154.0f);

    // Identity on the right leaves the input untouched.
    const std::vector<float> eye{1, 0, 0, 1};
    std::vector<float> d(4, 0.0f);
    matmul_serial(c.data(), eye.data(), d.data(), 2, 2, 2);
    CHECK(bit_equal(c, d));
}

TEST_CASE("transposed operand flags read the same values as explicit transposes") {
    const size_t m = 7, k = 5, n = 6;
    const auto a = random_matrix<float>(m, k, 21);
    const auto b = random_matrix<float>(k, n, 22);
    const auto at = transpose(a, m, k);  // [k x m]
    const auto bt = transpose(b, k, n);  // [n x k]

    std::vector<float> plain(m * n), via_ta(m * n), via_tb(m * n), via_both(m * n);
    matmul_serial(a.data(), b.data(), plain.data(), m, k, n);
    matmul_serial(at.data(), b.data(), via_ta.data(), m, k, n, true, false);
    matmul_serial(a.data(), bt.data(), via_tb.data(), m, k, n, false, true);
    matmul_serial(at.data(), bt.data(), via_both.data(), m, k, n, true, true);

    // Same multiplicands in the same order, so bitwise identical.
    CHECK(bit_equal(plain, via_ta));
    CHECK(bit_equal(plain, via_tb));
    CHECK(bit_equal(plain, via_both));
}

TEST_CASE("accumulate adds onto the preloaded output") {
    const size_t m = 4, k = 3, n = 5;
    const auto a = random_matrix<double>(m, k, 31);
    const auto b = random_matrix<double>(k, n, 32);
    auto c = random_matrix<double>(m, n, 33);

    // Oracle: start from the preload and add products in ascending p order,
    // mirroring the kernel's accumulation order exactly.
    std::vector<double> want = c;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double acc = want[i * n + j];
            for (size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            want[i * n + j] = acc;
        }

    matmul_serial(a.data(), b.data(), c.data(), m, k, n, false, false, true);
    CHECK(bit_equal(c, want));
}

TEST_CASE("degenerate shapes are handled") {
    const auto a = random_matrix<float>(3, 4, 41);
    const auto b = random_matrix<float>(4, 2, 42);

    // k = 0: no products, so the output is zeroed...
    std::vector<float> c(6, 9.0f);
    matmul_serial(a.data(), b.data(), c.data(), 3, 0, 2);
    for (float v : c) CHECK(v == 0.0f);

    // ...unless accumulating, which leaves the preload alone.
    std::vector<float> kept(6, 9.0f);
    matmul_serial(a.data(), b.data(), kept.data(), 3, 0, 2, false, false, true);
    for (float v : kept) CHECK(v == 9.0f);

    // m = 0 and n = 0 are no-ops.
    std::vector<float> empty;
    matmul_serial(a.data(), b.data(), empty.data(), 0, 4, 2);
    matmul_serial(a.data(), b.data(), empty.data(), 3, 4, 0);

    // 1x1 product.
    const float x = 3.0f, y = -2.0f;
    float z = 0.0f;
    matmul_serial(&x, &y, &z, 1, 1, 1);
    CHECK(z == -6.0f);
}

TEST_CASE("parallel matmul is bit-identical to serial at any thread count") {
    ThreadGuard guard;
    const size_t m = 17, k = 9, n = 13;
    const auto af = random_matrix<float>(m, k, 51);
    const auto bf = random_matrix<float>(k, n, 52);
    std::vector<float> serial(m * n);
    matmul_serial(af.data(), bf.data(), serial.data(), m, k, n);

    for (int nt : {1, 2, 3, 8}) {
        set_max_threads(nt);
        std::vector<float> out(m * n, -7.0f);
        matmul(af.data(), bf.data(), out.data(), m, k, n);
        CHECK(bit_equal(out, serial));
    }

    // Same contract for doubles and for the transposed/accumulate paths.
    const auto ad = random_matrix<double>(m, k, 53);
    const auto bd = random_matrix<double>(n, k, 54);  // used with trans_b
    auto base = random_matrix<double>(m, n, 55);

    std::vector<double> serial_d = base;
    set_max_threads(1);
    matmul(ad.data(), bd.data(), serial_d.data(), m, k, n, false, true, true);

    set_max_threads(4);
    std::vector<double> par_d = base;
    matmul(ad.data(), bd.data(), par_d.data(), m, k, n, false, true, true);
    CHECK(bit_equal(par_d, serial_d));
}

TEST_CASE("parallel matmul repeated at a fixed thread count is deterministic") {
    ThreadGuard guard;
    const size_t m = 12, k = 8, n = 10;
    const auto a = random_matrix<float>(m, k, 61);
    const auto b = random_matrix<float>(k, n, 62);
    set_max_threads(3);
    std::vector<float> first(m * n), second(m * n);
    matmul(a.data(), b.data(), first.data(), m, k, n);
    matmul(a.data(), b.data(), second.data(), m, k, n);
    CHECK(bit_equal(first, second));
}

TEST_CASE("parallel_for covers every index exactly once") {
    ThreadGuard guard;
    for (int nt : {1, 4}) {
        set_max_threads(nt);
        std::vector<long long> slots(257, -1);
        parallel_for(static_cast<long long>(slots.size()),
                     [&](long long i) { slots[static_cast<size_t>(i)] = i * i; });
        for (size_t i = 0; i < slots.size(); ++i)
            CHECK(slots[i] == static_cast<long long>(i) * static_cast<long long>(i));
    }

    // Zero and negative counts run nothing.
    set_max_threads(4);
    bool ran = false;
    parallel_for(0, [&](long long) { ran = true; });
    parallel_for(-5, [&](long long) { ran = true; });
    CHECK_FALSE(ran);
}

TEST_CASE("thread cap setter clamps and reports") {
    ThreadGuard guard;
    set_max_threads(5);
    CHECK(max_threads() == 5);
    set_max_threads(1);
    CHECK(max_threads() == 1);
    set_max_threads(0);
    CHECK(max_threads() == 1);
    set_max_threads(-3);
    CHECK(max_threads() == 1);
}
