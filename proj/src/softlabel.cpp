#include "mstl/softlabel.hpp"

#include <algorithm>

namespace mstl {

FeatureMatrix extract_features(const ModelGraph& base, const SampleSet& samples) {
    if (samples.count == 0) throw DataError("extract_features: empty sample set");
    if (samples.sample_shape != base.spec.input_shape)
        throw DataError("extract_features: sample shape " + shape_str(samples.sample_shape) +
                        " does not match model input " + shape_str(base.spec.input_shape));

    // Probe the base output size with the first sample.
    const int64_t sample_size = numel(samples.sample_shape);
    auto probe = base.spec.input_shape;
    probe.insert(probe.begin(), 1);
    auto first = make_tensor(probe, {samples.images.begin(), samples.images.begin() + sample_size});
    const int64_t dim = forward_base(base, first)->size();

    FeatureMatrix X;
    X.rows = samples.count;
    X.dim = static_cast<int>(dim);
    X.data.resize(static_cast<size_t>(X.rows) * dim);

    std::string error_msg;
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < samples.count; ++i) {
        try {
            NoGradGuard no_grad;
            auto x = make_tensor(probe, {samples.images.begin() + i * sample_size,
                                         samples.images.begin() + (i + 1) * sample_size});
            auto features = forward_base(base, x);
            std::copy_n(features->values.data(), dim, X.data.data() + i * dim);
        } catch (const std::exception& ex) {
#pragma omp critical
            if (error_msg.empty()) error_msg = ex.what();
        }
    }
    if (!error_msg.empty()) throw DataError(error_msg);
    validate_features(X);
    return X;
}

FeatureMatrix extract_features(const ModelGraph& base, const DatasetManifest& m, const Shape& chw) {
    SampleSet set;
    set.sample_shape = chw;
    set.count = static_cast<int64_t>(m.entries.size());
    if (set.count == 0) throw DataError("extract_features: manifest '" + m.name + "' is empty");
    const int64_t sample_size = numel(chw);
    set.images.resize(set.count * sample_size);
    set.labels.assign(static_cast<size_t>(set.count), -1);

    std::string error_msg;
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < set.count; ++i) {
        try {
            auto img = load_entry(m, m.entries[static_cast<size_t>(i)], chw);
            std::copy_n(img.data(), sample_size, set.images.data() + i * sample_size);
        } catch (const std::exception& ex) {
#pragma omp critical
            if (error_msg.empty()) error_msg = ex.what();
        }
    }
    if (!error_msg.empty()) throw DataError(error_msg);

    auto X = extract_features(base, set);
    X.sample_ids.reserve(m.entries.size());
    for (const auto& e : m.entries) X.sample_ids.push_back(e.ref);
    return X;
}

SoftLabelResult make_soft_labels(const FeatureMatrix& features, const std::vector<int>& grid,
                                 int folds, uint64_t seed, const std::string& extractor_id) {
    SoftLabelResult result;
    result.selection = select_k(features, grid, folds, seed);
    result.model = kmeans_fit(features, result.selection.k_best, seed);
    result.labels = assign_soft_labels(result.model, features);
    result.labels.provenance.extractor_id = extractor_id;
    result.labels.provenance.selection = result.selection;

    std::vector<int64_t> per_cluster(static_cast<size_t>(result.labels.k), 0);
    for (int l : result.labels.labels) ++per_cluster[static_cast<size_t>(l)];
    for (int c = 0; c < result.labels.k; ++c)
        if (per_cluster[static_cast<size_t>(c)] == 0)
            throw DataError("soft labels: cluster " + std::to_string(c) + " has no samples");
    return result;
}

DatasetManifest apply_soft_labels(const DatasetManifest& src, const SoftLabelSet& labels) {
    if (labels.labels.size() != src.entries.size())
        throw InputError("apply_soft_labels: " + std::to_string(labels.labels.size()) + " labels for " +
                         std::to_string(src.entries.size()) + " entries");
    DatasetManifest out = src;
    out.name = src.name + "-soft";
    out.classes.clear();
    for (int c = 0; c < labels.k; ++c) out.classes.push_back("cluster" + std::to_string(c));
    for (size_t i = 0; i < out.entries.size(); ++i) {
        out.entries[i].label = labels.labels[i];
        out.entries[i].split = Split::unassigned;
    }
    out.ratios = {0.0, 0.0, 0.0};
    out.notes.push_back("soft-labels k=" + std::to_string(labels.k) + " extractor=" +
                        labels.provenance.extractor_id + " seed=" +
                        std::to_string(labels.provenance.clustering_seed) + " criterion=" +
                        labels.provenance.selection.criterion);
    return out;
}

} // namespace mstl
