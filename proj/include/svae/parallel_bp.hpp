#pragma once

// Temporally parallel Gaussian chain inference: prefix scan of filter elements
// under (x), suffix scan of smoother elements under (+).
//
// Filter element t, a kernel over (a = z_{t-1}, b = z_t):
//   f: -1/2 a'Phi11 a - phi1'a + a'Phi12 b + phi2'b - 1/2 b'Phi22 b
//   g: -1/2 a'Gamma a + gamma'a
// Smoother element t, over (z_t, z_{t+1}), has the same layout with E / eps.

#include <algorithm>
#include <atomic>
#include <optional>

#include "svae/chain_bp.hpp"
#include "svae/thread_pool.hpp"

namespace svae::parallel {

struct FilterElement {
    Mat Phi11, phi1, Phi12, phi2, Phi22;
    Mat Gamma, gamma;
};

struct SmootherElement {
    Mat E11, eps1, E12, eps2, E22;
};

struct ScanStats {
    int depth = 0;         // combines on the critical path
    long long combines = 0;
};

std::vector<FilterElement> make_filter_elements(const chain::ChainPotentials<Mat>& p, ThreadPool* pool = nullptr);
FilterElement combine_filter(const FilterElement& a, const FilterElement& b);

std::vector<SmootherElement> make_smoother_elements(const chain::ChainPotentials<Mat>& p,
                                                    const chain::FilterResult<Mat>& fr, ThreadPool* pool = nullptr);
SmootherElement combine_smoother(const SmootherElement& a, const SmootherElement& b);

// Work-efficient inclusive scan; the combine tree depends only on the length.
template <class E, class Op>
std::vector<E> inclusive_scan(const std::vector<E>& xs, Op op, ThreadPool* pool, ScanStats* stats);

chain::FilterResult<Mat> parallel_filter(const chain::ChainPotentials<Mat>& p, ThreadPool* pool = nullptr,
                                         ScanStats* stats = nullptr);
chain::SmoothResult<Mat> parallel_smooth(const chain::ChainPotentials<Mat>& p, const chain::FilterResult<Mat>& fr,
                                         ThreadPool* pool = nullptr, ScanStats* stats = nullptr);

// ---------------------------------------------------------------------------

namespace detail {
inline void run(ThreadPool* pool, int n, const std::function<void(int)>& fn) {
    if (pool)
        pool->parallel_for(n, fn);
    else
        for (int i = 0; i < n; ++i) fn(i);
}
}  // namespace detail

template <class E, class Op>
std::vector<E> inclusive_scan(const std::vector<E>& xs, Op op, ThreadPool* pool, ScanStats* stats) {
    const int T = static_cast<int>(xs.size());
    if (T == 0) return {};
    int n = 1, levels = 0;
    while (n < T) {
        n *= 2;
        ++levels;
    }
    std::vector<std::optional<E>> x(n);
    std::vector<int> depth(n, 0);
    for (int i = 0; i < T; ++i) x[i] = xs[i];
    std::atomic<long long> combines{0};

    auto join = [&](const std::optional<E>& a, int da, const std::optional<E>& b, int db, int& dout) -> std::optional<E> {
        if (!a) {
            dout = db;
            return b;
        }
        if (!b) {
            dout = da;
            return a;
        }
        ++combines;
        dout = std::max(da, db) + 1;
        return op(*a, *b);
    };

    // up-sweep
    for (int d = 0; d < levels; ++d) {
        const int stride = 2 << d, half = 1 << d;
        detail::run(pool, n / stride, [&](int k) {
            const int right = k * stride + stride - 1, left = right - half;
            int dd;
            x[right] = join(x[left], depth[left], x[right], depth[right], dd);
            depth[right] = dd;
        });
    }
    // down-sweep to exclusive prefixes
    x[n - 1].reset();
    depth[n - 1] = 0;
    for (int d = levels - 1; d >= 0; --d) {
        const int stride = 2 << d, half = 1 << d;
        detail::run(pool, n / stride, [&](int k) {
            const int right = k * stride + stride - 1, left = right - half;
            std::optional<E> t = x[left];
            const int dt = depth[left];
            x[left] = x[right];
            depth[left] = depth[right];
            int dd;
            x[right] = join(x[right], depth[right], t, dt, dd);
            depth[right] = dd;
        });
    }
    // inclusive: exclusive prefix (x) a_i
    std::vector<E> out(T);
    std::vector<int> fdepth(T);
    detail::run(pool, T, [&](int i) {
        int dd;
        // xs[i] enters the scan untouched at depth 0
        out[i] = *join(x[i], depth[i], std::optional<E>(xs[i]), 0, dd);
        fdepth[i] = dd;
    });
    if (stats) {
        stats->depth = T ? *std::max_element(fdepth.begin(), fdepth.end()) : 0;
        stats->combines = combines.load();
    }
    return out;
}

}  // namespace svae::parallel
