#include "mstl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mstl/image_io.hpp"
#include "mstl/synth.hpp"

namespace mstl {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= line.size()) {
        const size_t next = line.find('\t', pos);
        out.push_back(line.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

std::string serialize_manifest(const DatasetManifest& m) {
    std::ostringstream out;
    out << "mstl-manifest v1\n";
    out << "name\t" << m.name << "\n";
    out << "classes";
    for (const auto& c : m.classes) out << "\t" << c;
    out << "\n";
    out << "ratios\t" << format_double(m.ratios[0]) << "\t" << format_double(m.ratios[1]) << "\t"
        << format_double(m.ratios[2]) << "\n";
    out << "seed\t" << m.seed << "\n";
    for (const auto& n : m.notes) out << "note\t" << n << "\n";
    out << "entries\t" << m.entries.size() << "\n";
    for (const auto& e : m.entries) {
        out << e.ref << "\t";
        if (e.label < 0) out << "-";
        else out << e.label;
        out << "\t" << split_name(e.split) << "\n";
    }
    return out.str();
}

} // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    throw FormatError("manifest: unknown split '" + s + "'");
}

int64_t DatasetManifest::count(Split s) const {
    int64_t n = 0;
    for (const auto& e : entries)
        if (e.split == s) ++n;
    return n;
}

void validate_manifest(const DatasetManifest& m) {
    if (m.name.empty()) throw DataError("manifest: name must not be empty");
    for (const auto& e : m.entries) {
        if (e.label >= static_cast<int>(m.classes.size()))
            throw DataError("manifest '" + m.name + "': label " + std::to_string(e.label) + " for ref '" +
                            e.ref + "' exceeds class count " + std::to_string(m.classes.size()));
    }
    const double sum = m.ratios[0] + m.ratios[1] + m.ratios[2];
    if (sum != 0.0 && std::abs(sum - 1.0) > 1e-9)
        throw DataError("manifest '" + m.name + "': split ratios sum to " + format_double(sum));
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open " + path);
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();

    std::string line;
    int lineno = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++lineno;
        return true;
    };
    auto fail = [&](const std::string& msg) -> void {
        throw FormatError("manifest " + path + ":" + std::to_string(lineno) + ": " + msg);
    };

    if (!next_line() || line != "mstl-manifest v1") fail("expected header 'mstl-manifest v1'");
    size_t expected_entries = 0;
    bool in_entries = false;
    while (next_line()) {
        auto fields = split_tabs(line);
        if (!in_entries) {
            if (fields[0] == "name" && fields.size() == 2) {
                m.name = fields[1];
            } else if (fields[0] == "classes") {
                m.classes.assign(fields.begin() + 1, fields.end());
            } else if (fields[0] == "ratios" && fields.size() == 4) {
                try {
                    for (int i = 0; i < 3; ++i) m.ratios[static_cast<size_t>(i)] = std::stod(fields[static_cast<size_t>(i) + 1]);
                } catch (const std::exception&) {
                    fail("bad ratio value");
                }
            } else if (fields[0] == "seed" && fields.size() == 2) {
                try {
                    m.seed = std::stoull(fields[1]);
                } catch (const std::exception&) {
                    fail("bad seed value");
                }
            } else if (fields[0] == "note" && fields.size() == 2) {
                m.notes.push_back(fields[1]);
            } else if (fields[0] == "entries" && fields.size() == 2) {
                try {
                    expected_entries = std::stoull(fields[1]);
                } catch (const std::exception&) {
                    fail("bad entry count");
                }
                in_entries = true;
            } else {
                fail("unknown header field '" + fields[0] + "'");
            }
        } else {
            if (fields.size() != 3) fail("entry needs ref<TAB>label<TAB>split");
            ManifestEntry e;
            e.ref = fields[0];
            if (fields[1] == "-") {
                e.label = -1;
            } else {
                try {
                    e.label = std::stoi(fields[1]);
                } catch (const std::exception&) {
                    fail("bad label '" + fields[1] + "'");
                }
                if (e.label < 0) fail("negative label");
            }
            try {
                e.split = split_from_name(fields[2]);
            } catch (const FormatError&) {
                fail("bad split '" + fields[2] + "'");
            }
            m.entries.push_back(std::move(e));
        }
    }
    if (!in_entries) fail("missing 'entries' section");
    if (m.entries.size() != expected_entries)
        throw FormatError("manifest " + path + ": declared " + std::to_string(expected_entries) +
                          " entries but found " + std::to_string(m.entries.size()));
    validate_manifest(m);
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    validate_manifest(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("manifest: cannot write " + path);
    out << serialize_manifest(m);
    if (!out) throw IoError("manifest: write failed for " + path);
}

std::string manifest_hash(const DatasetManifest& m) {
    const std::string text = serialize_manifest(m);
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void verify_refs(const DatasetManifest& m) {
    namespace fs = std::filesystem;
    for (const auto& e : m.entries) {
        if (is_synth_ref(e.ref)) continue;
        fs::path p = fs::path(e.ref).is_absolute() ? fs::path(e.ref) : fs::path(m.base_dir) / e.ref;
        if (!fs::exists(p))
            throw DataError("manifest '" + m.name + "': unresolvable ref '" + e.ref + "' (looked at " +
                            p.string() + ")");
    }
}

void split_manifest(DatasetManifest& m, std::array<double, 3> ratios, uint64_t seed, bool stratified) {
    for (double r : ratios)
        if (r < 0.0) throw InputError("split: ratios must be non-negative");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw InputError("split: ratios must sum to 1");
    if (m.entries.empty()) throw DataError("split: manifest '" + m.name + "' has no entries");

    std::map<int, std::vector<int64_t>> groups;
    if (stratified) {
        for (int64_t i = 0; i < static_cast<int64_t>(m.entries.size()); ++i) {
            if (m.entries[static_cast<size_t>(i)].label < 0)
                throw DataError("split: stratified split needs labels; ref '" +
                                m.entries[static_cast<size_t>(i)].ref + "' has none");
            groups[m.entries[static_cast<size_t>(i)].label].push_back(i);
        }
    } else {
        auto& all = groups[0];
        for (int64_t i = 0; i < static_cast<int64_t>(m.entries.size()); ++i) all.push_back(i);
    }

    Rng rng(seed);
    for (auto& [label, indices] : groups) {
        rng.shuffle(indices);
        const int64_t n = static_cast<int64_t>(indices.size());
        int64_t n_train = static_cast<int64_t>(std::floor(n * ratios[0]));
        const int64_t n_val = static_cast<int64_t>(std::floor(n * ratios[1]));
        const int64_t n_test = static_cast<int64_t>(std::floor(n * ratios[2]));
        n_train += n - (n_train + n_val + n_test); // remainder goes to train
        const int64_t counts[3] = {n_train, n_val, n_test};
        for (int s = 0; s < 3; ++s) {
            if (ratios[static_cast<size_t>(s)] > 0.0 && counts[s] == 0) {
                const std::string cls = stratified ? m.classes.empty()
                                                         ? std::to_string(label)
                                                         : m.classes[static_cast<size_t>(label)]
                                                   : "(all)";
                throw DataError("split: class '" + cls + "' has too few samples (" + std::to_string(n) +
                                ") for a non-empty " + split_name(static_cast<Split>(s)) + " split");
            }
        }
        int64_t pos = 0;
        for (int64_t i = 0; i < n_train; ++i) m.entries[static_cast<size_t>(indices[static_cast<size_t>(pos++)])].split = Split::train;
        for (int64_t i = 0; i < n_val; ++i) m.entries[static_cast<size_t>(indices[static_cast<size_t>(pos++)])].split = Split::val;
        for (int64_t i = 0; i < n_test; ++i) m.entries[static_cast<size_t>(indices[static_cast<size_t>(pos++)])].split = Split::test;
    }
    m.ratios = ratios;
    m.seed = seed;
}

TensorPtr SampleSet::batch(const std::vector<int64_t>& indices) const {
    const int64_t sample_size = numel(sample_shape);
    auto t = zeros({static_cast<int>(indices.size()), sample_shape[0], sample_shape[1], sample_shape[2]});
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= count) throw InputError("batch: sample index out of range");
        std::copy_n(images.data() + indices[i] * sample_size, sample_size,
                    t->values.data() + static_cast<int64_t>(i) * sample_size);
    }
    return t;
}

TensorPtr SampleSet::all() const {
    auto t = make_tensor({static_cast<int>(count), sample_shape[0], sample_shape[1], sample_shape[2]}, images);
    return t;
}

std::vector<float> load_entry(const DatasetManifest& m, const ManifestEntry& e, const Shape& chw) {
    if (is_synth_ref(e.ref)) return render_synth_ref(e.ref, chw);
    namespace fs = std::filesystem;
    const fs::path p = fs::path(e.ref).is_absolute() ? fs::path(e.ref) : fs::path(m.base_dir) / e.ref;
    return load_image(p.string(), chw)->values;
}

SampleSet load_split(const DatasetManifest& m, Split split, const Shape& chw) {
    if (chw.size() != 3) throw InputError("load_split: target shape must be C,H,W");
    std::vector<int64_t> picked;
    for (int64_t i = 0; i < static_cast<int64_t>(m.entries.size()); ++i)
        if (m.entries[static_cast<size_t>(i)].split == split) picked.push_back(i);
    if (picked.empty())
        throw DataError("load_split: manifest '" + m.name + "' has no entries in split '" +
                        split_name(split) + "'");

    SampleSet set;
    set.sample_shape = chw;
    set.count = static_cast<int64_t>(picked.size());
    const int64_t sample_size = numel(chw);
    set.images.resize(set.count * sample_size);
    set.labels.resize(static_cast<size_t>(set.count));

    std::string error_msg;
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < set.count; ++i) {
        try {
            const ManifestEntry& e = m.entries[static_cast<size_t>(picked[static_cast<size_t>(i)])];
            auto img = load_entry(m, e, chw);
            std::copy_n(img.data(), sample_size, set.images.data() + i * sample_size);
            set.labels[static_cast<size_t>(i)] = e.label;
        } catch (const std::exception& ex) {
#pragma omp critical
            if (error_msg.empty()) error_msg = ex.what();
        }
    }
    if (!error_msg.empty()) throw DataError(error_msg);
    return set;
}

} // namespace mstl
