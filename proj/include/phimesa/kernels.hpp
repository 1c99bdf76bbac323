#pragma once

// Dense kernels used by the transformer and the cut search. Every parallel
// variant partitions work so that each output element is produced by exactly
// the same sequence of floating-point operations as the serial reference;
// results are required to be bit-identical at any thread count, and the test
// suite holds them to that.

#include <cstddef>

#include "phimesa/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace phimesa::kernels {

// C[m x n] = A op B, where A is [m x k] (or [k x m] when trans_a) and
// B is [k x n] (or [n x k] when trans_b). Row-major storage throughout.
// When accumulate is set the product is added onto C instead of replacing it.
template <typename T>
void matmul_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n, bool trans_a = false, bool trans_b = false,
                   bool accumulate = false) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = accumulate ? c[i * n + j] : T(0);
            for (std::size_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
}

namespace detail {

template <typename T>
void matmul_rows(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n, bool trans_a, bool trans_b, bool accumulate,
                 std::size_t row_begin, std::size_t row_end) {
    for (std::size_t i = row_begin; i < row_end; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = accumulate ? c[i * n + j] : T(0);
            for (std::size_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
}

}  // namespace detail

// Parallel dispatch: rows of C are independent, so splitting them across
// threads reproduces the serial arithmetic exactly.
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
            std::size_t n, bool trans_a = false, bool trans_b = false,
            bool accumulate = false) {
#ifdef _OPENMP
    const int nt = max_threads();
    if (nt > 1 && m > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (long long i = 0; i < static_cast<long long>(m); ++i) {
            detail::matmul_rows(a, b, c, m, k, n, trans_a, trans_b, accumulate,
                                static_cast<std::size_t>(i),
                                static_cast<std::size_t>(i) + 1);
        }
        return;
    }
#endif
    detail::matmul_rows(a, b, c, m, k, n, trans_a, trans_b, accumulate, 0, m);
}

// Generic index-parallel loop with the same bit-identity contract: the body
// must write only to slots owned by its index.
template <typename Body>
void parallel_for(long long count, const Body& body) {
#ifdef _OPENMP
    const int nt = max_threads();
    if (nt > 1 && count > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (long long i = 0; i < count; ++i) body(i);
        return;
    }
#endif
    for (long long i = 0; i < count; ++i) body(i);
}

}  // namespace phimesa::kernels
