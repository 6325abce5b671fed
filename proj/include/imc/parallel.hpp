#pragma once

#include <cstddef>
#include <cstdlib>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace imc::par {

/// Worker count: IMC_THREADS env var if set, otherwise the OpenMP default.
/// Read once per process.
inline int thread_count() {
    static const int n = [] {
        if (const char* env = std::getenv("IMC_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
#ifdef _OPENMP
        return omp_get_max_threads();
#else
        return 1;
#endif
    }();
    return n;
}

/// Parallel loop over [0, n). Each index must write only its own output
/// slots; results are then independent of scheduling and thread count.
template <class F>
inline void for_n(std::size_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        f(static_cast<std::size_t>(i));
#else
    for (std::size_t i = 0; i < n; ++i) f(i);
#endif
}

// Reductions are blocked on a fixed grid and combined in chunk order, so the
// result does not depend on the number of threads.
constexpr std::size_t kChunk = 256;

inline std::size_t chunk_count(std::size_t n) { return n == 0 ? 0 : (n - 1) / kChunk + 1; }

inline std::pair<std::size_t, std::size_t> chunk_range(std::size_t chunk, std::size_t n) {
    const std::size_t begin = chunk * kChunk;
    const std::size_t end = begin + kChunk < n ? begin + kChunk : n;
    return {begin, end};
}

/// Deterministic parallel sum of f(i) over [0, n).
template <class F>
inline double sum_n(std::size_t n, F&& f) {
    const std::size_t nc = chunk_count(n);
    std::vector<double> partial(nc, 0.0);
    for_n(nc, [&](std::size_t c) {
        auto [b, e] = chunk_range(c, n);
        double s = 0.0;
        for (std::size_t i = b; i < e; ++i) s += f(i);
        partial[c] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace imc::par
