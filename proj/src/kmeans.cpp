#include "mstl/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mstl {

namespace {

double sq_dist(const float* a, const float* b, int dim) {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) {
        const double d = static_cast<double>(a[j]) - b[j];
        acc += d * d;
    }
    return acc;
}

// Per-point nearest centroid + squared distance; parallel over points, each
// point fully owned by one thread.
void assign_pass(const FeatureMatrix& X, const std::vector<float>& centroids, int k,
                 std::vector<int>& assign, std::vector<double>& dist2) {
    const int dim = X.dim;
#pragma omp parallel for schedule(static) if (X.rows * k * dim > 16384)
    for (int64_t i = 0; i < X.rows; ++i) {
        const float* p = X.row(i);
        int best = 0;
        double best_d = sq_dist(p, centroids.data(), dim);
        for (int c = 1; c < k; ++c) {
            const double d = sq_dist(p, centroids.data() + static_cast<size_t>(c) * dim, dim);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        assign[static_cast<size_t>(i)] = best;
        dist2[static_cast<size_t>(i)] = best_d;
    }
}

std::vector<float> kmeanspp_init(const FeatureMatrix& X, int k, Rng& rng) {
    const int dim = X.dim;
    std::vector<float> centroids(static_cast<size_t>(k) * dim);
    std::vector<uint8_t> chosen(static_cast<size_t>(X.rows), 0);
    std::vector<double> d2(static_cast<size_t>(X.rows), 0.0);

    int64_t first = static_cast<int64_t>(rng.below(static_cast<uint64_t>(X.rows)));
    std::copy_n(X.row(first), dim, centroids.begin());
    chosen[static_cast<size_t>(first)] = 1;

    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int64_t i = 0; i < X.rows; ++i) {
            double best = sq_dist(X.row(i), centroids.data(), dim);
            for (int cc = 1; cc < c; ++cc)
                best = std::min(best, sq_dist(X.row(i), centroids.data() + static_cast<size_t>(cc) * dim, dim));
            d2[static_cast<size_t>(i)] = chosen[static_cast<size_t>(i)] ? 0.0 : best;
            total += d2[static_cast<size_t>(i)];
        }
        int64_t pick = -1;
        if (total > 0.0) {
            const double u = rng.uniform_double() * total;
            double cum = 0.0;
            for (int64_t i = 0; i < X.rows; ++i) {
                cum += d2[static_cast<size_t>(i)];
                if (u < cum) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) pick = X.rows - 1;
        } else {
            // All remaining mass is zero (duplicates); take the first free point.
            for (int64_t i = 0; i < X.rows; ++i)
                if (!chosen[static_cast<size_t>(i)]) {
                    pick = i;
                    break;
                }
            if (pick < 0) pick = 0;
        }
        std::copy_n(X.row(pick), dim, centroids.begin() + static_cast<size_t>(c) * dim);
        chosen[static_cast<size_t>(pick)] = 1;
    }
    return centroids;
}

ClusteringModel kmeans_single(const FeatureMatrix& X, int k, uint64_t seed, const KmeansOptions& opts) {
    const int dim = X.dim;
    Rng rng(seed);
    ClusteringModel model;
    model.k = k;
    model.dim = dim;
    model.seed = seed;
    model.centroids = kmeanspp_init(X, k, rng);

    std::vector<int> assign(static_cast<size_t>(X.rows));
    std::vector<double> dist2(static_cast<size_t>(X.rows));
    std::vector<double> sums(static_cast<size_t>(k) * dim);
    std::vector<int64_t> counts(static_cast<size_t>(k));

    auto record_inertia = [&]() {
        double inertia = 0.0;
        for (int64_t i = 0; i < X.rows; ++i) inertia += dist2[static_cast<size_t>(i)];
        if (!model.inertia_history.empty() &&
            inertia > model.inertia_history.back() * (1.0 + 1e-12) + 1e-12)
            throw NumericError("kmeans: inertia increased from " +
                               std::to_string(model.inertia_history.back()) + " to " +
                               std::to_string(inertia));
        model.inertia_history.push_back(inertia);
        model.inertia = inertia;
    };

    assign_pass(X, model.centroids, k, assign, dist2);
    record_inertia();

    for (int iter = 1; iter <= opts.max_iter; ++iter) {
        // Update step: serial accumulation in row order keeps runs bit-equal.
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int64_t i = 0; i < X.rows; ++i) {
            const int c = assign[static_cast<size_t>(i)];
            const float* p = X.row(i);
            double* s = sums.data() + static_cast<size_t>(c) * dim;
            for (int j = 0; j < dim; ++j) s[j] += p[j];
            ++counts[static_cast<size_t>(c)];
        }
        double shift = 0.0;
        std::vector<float> updated = model.centroids;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) continue;
            float* dst = updated.data() + static_cast<size_t>(c) * dim;
            const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
            for (int j = 0; j < dim; ++j)
                dst[j] = static_cast<float>(sums[static_cast<size_t>(c) * dim + j] * inv);
        }
        // Repair empty clusters: move each onto the currently worst-served
        // point (ties to the lowest row index).
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] != 0) continue;
            int64_t farthest = 0;
            for (int64_t i = 1; i < X.rows; ++i)
                if (dist2[static_cast<size_t>(i)] > dist2[static_cast<size_t>(farthest)]) farthest = i;
            std::copy_n(X.row(farthest), dim, updated.begin() + static_cast<size_t>(c) * dim);
            dist2[static_cast<size_t>(farthest)] = 0.0; // claimed; next repair picks another point
        }
        for (int c = 0; c < k; ++c)
            shift = std::max(shift, std::sqrt(sq_dist(updated.data() + static_cast<size_t>(c) * dim,
                                                      model.centroids.data() + static_cast<size_t>(c) * dim,
                                                      dim)));
        model.centroids = std::move(updated);

        assign_pass(X, model.centroids, k, assign, dist2);
        record_inertia();
        model.iterations_run = iter;
        if (shift < opts.tol) break;
    }
    return model;
}

} // namespace

void validate_features(const FeatureMatrix& X) {
    if (X.rows < 1 || X.dim < 1) throw InputError("features: empty matrix");
    if (static_cast<int64_t>(X.data.size()) != X.rows * X.dim)
        throw InputError("features: data size does not match rows*dim");
    for (float v : X.data)
        if (!std::isfinite(v)) throw NumericError("features: non-finite value");
}

FeatureMatrix gather_rows(const FeatureMatrix& X, const std::vector<int64_t>& rows) {
    FeatureMatrix out;
    out.rows = static_cast<int64_t>(rows.size());
    out.dim = X.dim;
    out.data.resize(static_cast<size_t>(out.rows) * X.dim);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(X.row(rows[i]), X.dim, out.data.data() + i * static_cast<size_t>(X.dim));
    return out;
}

ClusteringModel kmeans_fit(const FeatureMatrix& X, int k, uint64_t seed, const KmeansOptions& opts) {
    validate_features(X);
    if (k < 2) throw InputError("kmeans: k must be at least 2");
    if (k > X.rows)
        throw InputError("kmeans: k=" + std::to_string(k) + " exceeds row count " + std::to_string(X.rows));
    if (opts.restarts < 1 || opts.max_iter < 1) throw InputError("kmeans: bad options");

    ClusteringModel best;
    for (int r = 0; r < opts.restarts; ++r) {
        ClusteringModel m = kmeans_single(X, k, Rng::mix(seed, 0xC1u, static_cast<uint64_t>(r)), opts);
        if (r == 0 || m.inertia < best.inertia) best = std::move(m);
    }
    best.seed = seed;
    return best;
}

std::vector<int> assign_clusters(const ClusteringModel& model, const FeatureMatrix& X) {
    if (X.dim != model.dim)
        throw InputError("assign: feature dim " + std::to_string(X.dim) + " vs model dim " +
                         std::to_string(model.dim));
    std::vector<int> assign(static_cast<size_t>(X.rows));
    std::vector<double> dist2(static_cast<size_t>(X.rows));
    assign_pass(X, model.centroids, model.k, assign, dist2);
    return assign;
}

double compute_inertia(const ClusteringModel& model, const FeatureMatrix& X) {
    std::vector<int> assign(static_cast<size_t>(X.rows));
    std::vector<double> dist2(static_cast<size_t>(X.rows));
    assign_pass(X, model.centroids, model.k, assign, dist2);
    double total = 0.0;
    for (double d : dist2) total += d;
    return total;
}

double heldout_silhouette(const FeatureMatrix& X, const std::vector<int64_t>& rows,
                          const ClusteringModel& model) {
    if (model.k < 2) throw InputError("silhouette: needs at least 2 centroids");
    const size_t n = rows.size();
    if (n < 2) return 0.0;

    // Membership of held-out points comes from the training-fit centroids;
    // the silhouette itself is computed among the held-out points.
    std::vector<int> member(n);
    for (size_t i = 0; i < n; ++i) {
        const float* p = X.row(rows[i]);
        int best = 0;
        double best_d = sq_dist(p, model.centroids.data(), model.dim);
        for (int c = 1; c < model.k; ++c) {
            const double d = sq_dist(p, model.centroids.data() + static_cast<size_t>(c) * model.dim, model.dim);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        member[i] = best;
    }

    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const float* p = X.row(rows[i]);
        std::vector<double> mean_dist(static_cast<size_t>(model.k), 0.0);
        std::vector<int64_t> counts(static_cast<size_t>(model.k), 0);
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            mean_dist[static_cast<size_t>(member[j])] += std::sqrt(sq_dist(p, X.row(rows[j]), model.dim));
            ++counts[static_cast<size_t>(member[j])];
        }
        const int own = member[i];
        if (counts[static_cast<size_t>(own)] == 0) continue; // singleton: s = 0
        const double a = mean_dist[static_cast<size_t>(own)] / static_cast<double>(counts[static_cast<size_t>(own)]);
        double b = std::numeric_limits<double>::max();
        for (int c = 0; c < model.k; ++c) {
            if (c == own || counts[static_cast<size_t>(c)] == 0) continue;
            b = std::min(b, mean_dist[static_cast<size_t>(c)] / static_cast<double>(counts[static_cast<size_t>(c)]));
        }
        if (b == std::numeric_limits<double>::max()) continue; // no other cluster present: s = 0
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

KSelection select_k(const FeatureMatrix& X, const std::vector<int>& grid, int folds, uint64_t seed,
                    const KmeansOptions& opts, ClusterScoreFn score, const std::string& score_name) {
    validate_features(X);
    if (grid.empty()) throw ConfigError("select_k: empty grid");
    if (folds < 2) throw InputError("select_k: folds must be at least 2");

    std::vector<int64_t> order(static_cast<size_t>(X.rows));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(seed, 0xF01D));
    rng.shuffle(order);

    // Round-robin folds over the shuffled order; sizes differ by at most 1.
    std::vector<std::vector<int64_t>> fold_rows(static_cast<size_t>(folds));
    for (size_t i = 0; i < order.size(); ++i)
        fold_rows[i % static_cast<size_t>(folds)].push_back(order[i]);

    int64_t min_train = X.rows;
    for (const auto& f : fold_rows) min_train = std::min(min_train, X.rows - static_cast<int64_t>(f.size()));
    const int max_k = *std::max_element(grid.begin(), grid.end());
    if (max_k > min_train)
        throw InputError("select_k: max grid value " + std::to_string(max_k) +
                         " exceeds smallest training fold size " + std::to_string(min_train));

    std::vector<int> sorted_grid = grid;
    std::sort(sorted_grid.begin(), sorted_grid.end());

    KSelection sel;
    sel.folds = folds;
    sel.seed = seed;
    sel.criterion = score_name;
    double best_score = -std::numeric_limits<double>::max();
    for (int k : sorted_grid) {
        double mean_score = 0.0;
        for (int f = 0; f < folds; ++f) {
            std::vector<int64_t> train_rows;
            for (int g = 0; g < folds; ++g)
                if (g != f)
                    train_rows.insert(train_rows.end(), fold_rows[static_cast<size_t>(g)].begin(),
                                      fold_rows[static_cast<size_t>(g)].end());
            auto train = gather_rows(X, train_rows);
            auto model = kmeans_fit(train, k,
                                    Rng::mix(seed, static_cast<uint64_t>(k), static_cast<uint64_t>(f)), opts);
            mean_score += score(X, fold_rows[static_cast<size_t>(f)], model);
        }
        mean_score /= folds;
        sel.scores.emplace_back(k, mean_score);
        if (mean_score > best_score) { // strict: ties keep the smaller k
            best_score = mean_score;
            sel.k_best = k;
        }
    }
    return sel;
}

SoftLabelSet assign_soft_labels(const ClusteringModel& model, const FeatureMatrix& X) {
    SoftLabelSet set;
    set.labels = assign_clusters(model, X);
    set.k = model.k;
    set.provenance.clustering_seed = model.seed;
    return set;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) throw InputError("ari: label vectors must match and be non-empty");
    const int ka = *std::max_element(a.begin(), a.end()) + 1;
    const int kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<int64_t> table(static_cast<size_t>(ka) * kb, 0);
    for (size_t i = 0; i < a.size(); ++i) ++table[static_cast<size_t>(a[i]) * kb + b[i]];

    auto choose2 = [](int64_t n) { return n * (n - 1) / 2; };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (int i = 0; i < ka; ++i) {
        int64_t row = 0;
        for (int j = 0; j < kb; ++j) {
            row += table[static_cast<size_t>(i) * kb + j];
            sum_ij += static_cast<double>(choose2(table[static_cast<size_t>(i) * kb + j]));
        }
        sum_a += static_cast<double>(choose2(row));
    }
    for (int j = 0; j < kb; ++j) {
        int64_t col = 0;
        for (int i = 0; i < ka; ++i) col += table[static_cast<size_t>(i) * kb + j];
        sum_b += static_cast<double>(choose2(col));
    }
    const double total = static_cast<double>(choose2(static_cast<int64_t>(a.size())));
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0; // degenerate: single cluster both sides
    return (sum_ij - expected) / (max_index - expected);
}

} // namespace mstl
