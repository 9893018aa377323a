// Times the OpenMP kernels against the serial reference implementations and
// cross-checks their outputs. Run with OMP_NUM_THREADS to vary parallelism.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <omp.h>

#include "mstl/kmeans.hpp"
#include "mstl/ops.hpp"
#include "mstl/reference.hpp"
#include "mstl/rng.hpp"

using namespace mstl;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
    fn(); // warmup
    const auto start = Clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    const auto stop = Clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / repeats;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    return worst;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-24s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   max|diff| %.2e\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

} // namespace

int main() {
    std::printf("kernel benchmark, %d OpenMP threads\n\n", omp_get_max_threads());
    Rng rng(42);

    { // conv2d forward
        const int N = 8, C = 8, H = 32, W = 32, O = 16, K = 3;
        auto x = random_uniform({N, C, H, W}, rng, -1.0f, 1.0f);
        auto k = random_uniform({O, C, K, K}, rng, -1.0f, 1.0f);
        auto b = random_uniform({O}, rng, -1.0f, 1.0f);
        std::vector<float> serial_out;
        const double serial_ms = time_ms(
            [&] { serial_out = reference::conv2d(x->values, N, C, H, W, k->values, O, K, K, b->values, 1, 1); },
            5);
        TensorPtr parallel_out;
        const double parallel_ms = time_ms([&] { parallel_out = conv2d(x, k, b, 1, 1); }, 5);
        report("conv2d 8x8x32x32 O16", serial_ms, parallel_ms, max_abs_diff(parallel_out->values, serial_out));
    }

    { // dense forward
        const int N = 256, F = 512, U = 256;
        auto x = random_uniform({N, F}, rng, -1.0f, 1.0f);
        auto w = random_uniform({F, U}, rng, -1.0f, 1.0f);
        auto b = random_uniform({U}, rng, -1.0f, 1.0f);
        std::vector<float> serial_out;
        const double serial_ms =
            time_ms([&] { serial_out = reference::dense(x->values, N, F, w->values, U, b->values); }, 10);
        TensorPtr parallel_out;
        const double parallel_ms = time_ms([&] { parallel_out = dense(x, w, b); }, 10);
        report("dense 256x512x256", serial_ms, parallel_ms, max_abs_diff(parallel_out->values, serial_out));
    }

    { // average pooling
        const int N = 16, C = 16, H = 64, W = 64;
        auto x = random_uniform({N, C, H, W}, rng, -1.0f, 1.0f);
        std::vector<float> serial_out;
        const double serial_ms =
            time_ms([&] { serial_out = reference::pool_avg2d(x->values, N, C, H, W, 2, 2); }, 10);
        TensorPtr parallel_out;
        const double parallel_ms = time_ms([&] { parallel_out = pool_avg2d(x, 2, 2); }, 10);
        report("pool_avg2d 16x16x64x64", serial_ms, parallel_ms,
               max_abs_diff(parallel_out->values, serial_out));
    }

    { // k-means assignment scan
        const int64_t n = 20000;
        const int dim = 32, k = 16;
        FeatureMatrix X;
        X.rows = n;
        X.dim = dim;
        X.data.resize(static_cast<size_t>(n) * dim);
        for (auto& v : X.data) v = rng.uniform(-1.0f, 1.0f);
        ClusteringModel model;
        model.k = k;
        model.dim = dim;
        model.centroids.resize(static_cast<size_t>(k) * dim);
        for (auto& v : model.centroids) v = rng.uniform(-1.0f, 1.0f);

        std::vector<int> serial_out(static_cast<size_t>(n));
        const double serial_ms = time_ms(
            [&] {
                for (int64_t i = 0; i < n; ++i)
                    serial_out[static_cast<size_t>(i)] =
                        reference::nearest_centroid(X.row(i), model.centroids, k, dim);
            },
            5);
        std::vector<int> parallel_out;
        const double parallel_ms = time_ms([&] { parallel_out = assign_clusters(model, X); }, 5);
        int64_t mismatches = 0;
        for (int64_t i = 0; i < n; ++i)
            if (serial_out[static_cast<size_t>(i)] != parallel_out[static_cast<size_t>(i)]) ++mismatches;
        std::printf("%-24s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   mismatches %lld\n",
                    "kmeans assign 20k/32/16", serial_ms, parallel_ms, serial_ms / parallel_ms,
                    static_cast<long long>(mismatches));
    }

    return 0;
}
