#include "mstl/reference.hpp"

#include <algorithm>
#include <cmath>

namespace mstl::reference {

std::vector<float> conv2d(const std::vector<float>& x, int N, int C, int H, int W,
                          const std::vector<float>& k, int O, int KH, int KW,
                          const std::vector<float>& b, int stride, int padding) {
    const int HO = (H + 2 * padding - KH) / stride + 1;
    const int WO = (W + 2 * padding - KW) / stride + 1;
    std::vector<float> y(static_cast<size_t>(N) * O * HO * WO);
    size_t yi = 0;
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int ho = 0; ho < HO; ++ho)
                for (int wo = 0; wo < WO; ++wo) {
                    double acc = b[o];
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw) {
                                const int hi = ho * stride - padding + kh;
                                const int wi = wo * stride - padding + kw;
                                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                const double xv = x[((static_cast<size_t>(n) * C + c) * H + hi) * W + wi];
                                const double kv = k[((static_cast<size_t>(o) * C + c) * KH + kh) * KW + kw];
                                acc += xv * kv;
                            }
                    y[yi++] = static_cast<float>(acc);
                }
    return y;
}

std::vector<float> dense(const std::vector<float>& x, int N, int F,
                         const std::vector<float>& w, int U, const std::vector<float>& b) {
    std::vector<float> y(static_cast<size_t>(N) * U);
    for (int n = 0; n < N; ++n)
        for (int u = 0; u < U; ++u) {
            double acc = b[u];
            for (int f = 0; f < F; ++f)
                acc += static_cast<double>(x[static_cast<size_t>(n) * F + f]) * w[static_cast<size_t>(f) * U + u];
            y[static_cast<size_t>(n) * U + u] = static_cast<float>(acc);
        }
    return y;
}

std::vector<float> pool_avg2d(const std::vector<float>& x, int N, int C, int H, int W,
                              int window, int stride) {
    const int HO = (H - window) / stride + 1;
    const int WO = (W - window) / stride + 1;
    std::vector<float> y(static_cast<size_t>(N) * C * HO * WO);
    size_t yi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int ho = 0; ho < HO; ++ho)
                for (int wo = 0; wo < WO; ++wo) {
                    double acc = 0.0;
                    for (int kh = 0; kh < window; ++kh)
                        for (int kw = 0; kw < window; ++kw)
                            acc += x[((static_cast<size_t>(n) * C + c) * H + ho * stride + kh) * W + wo * stride + kw];
                    y[yi++] = static_cast<float>(acc / (window * window));
                }
    return y;
}

std::vector<float> pool_global_avg(const std::vector<float>& x, int N, int C, int H, int W) {
    std::vector<float> y(static_cast<size_t>(N) * C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int i = 0; i < H * W; ++i) acc += x[((static_cast<size_t>(n) * C + c) * H * W) + i];
            y[static_cast<size_t>(n) * C + c] = static_cast<float>(acc / (H * W));
        }
    return y;
}

double bce(const std::vector<float>& prob, const std::vector<float>& label, float eps) {
    double acc = 0.0;
    for (size_t i = 0; i < prob.size(); ++i) {
        const double p = std::clamp(prob[i], eps, 1.0f - eps);
        acc += label[i] > 0.5f ? -std::log(p) : -std::log(1.0 - p);
    }
    return acc / static_cast<double>(prob.size());
}

double sparse_ce(const std::vector<float>& prob, int N, int K, const std::vector<int>& labels, float eps) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const double p = std::clamp(prob[static_cast<size_t>(n) * K + labels[n]], eps, 1.0f - eps);
        acc += -std::log(p);
    }
    return acc / N;
}

int nearest_centroid(const float* point, const std::vector<float>& centroids, int k, int dim) {
    int best = 0;
    double best_d = 0.0;
    for (int c = 0; c < k; ++c) {
        double d = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double diff = static_cast<double>(point[j]) - centroids[static_cast<size_t>(c) * dim + j];
            d += diff * diff;
        }
        if (c == 0 || d < best_d) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

double inertia(const std::vector<float>& rows, int64_t n, int dim, const std::vector<float>& centroids, int k) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const float* p = rows.data() + i * dim;
        const int c = nearest_centroid(p, centroids, k, dim);
        for (int j = 0; j < dim; ++j) {
            const double diff = static_cast<double>(p[j]) - centroids[static_cast<size_t>(c) * dim + j];
            total += diff * diff;
        }
    }
    return total;
}

double auc_pairwise(const std::vector<float>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return pairs ? wins / static_cast<double>(pairs) : 0.0;
}

} // namespace mstl::reference
