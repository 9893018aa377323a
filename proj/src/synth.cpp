#include "mstl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mstl/image_io.hpp"

namespace mstl {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void validate_synth_config(const SyntheticDomainConfig& cfg) {
    if (cfg.n_classes < 2) throw ConfigError("synth: n_classes must be at least 2");
    if (cfg.samples_per_class < 1) throw ConfigError("synth: samples_per_class must be positive");
    if (cfg.image_size < 8) throw ConfigError("synth: image_size must be at least 8");
    if (cfg.noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be non-negative");
    if (cfg.blob_amplitude <= 0.0 || cfg.blob_amplitude > 1.0)
        throw ConfigError("synth: blob_amplitude must be in (0,1]");
    if (cfg.blob_radius_frac <= 0.0 || cfg.ring_radius_frac <= 0.0)
        throw ConfigError("synth: blob/ring radius fractions must be positive");
    if (cfg.domains.empty()) throw ConfigError("synth: at least one domain required");
    for (const auto& d : cfg.domains) {
        if (d.name.empty()) throw ConfigError("synth: domain name must not be empty");
        if (d.shift < 0.0 || d.shift > 1.0)
            throw ConfigError("synth: shift for domain '" + d.name + "' must be in [0,1]");
    }
}

std::vector<float> render_sample(const SyntheticDomainConfig& cfg, int domain_index, int cls, int sample) {
    if (domain_index < 0 || domain_index >= static_cast<int>(cfg.domains.size()))
        throw InputError("synth: domain index out of range");
    if (cls < 0 || cls >= cfg.n_classes) throw InputError("synth: class out of range");
    const double shift = cfg.domains[static_cast<size_t>(domain_index)].shift;
    const int S = cfg.image_size;

    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(domain_index),
                     static_cast<uint64_t>(cls) * 1000003ULL + static_cast<uint64_t>(sample)));

    // Class geometry: a gaussian blob whose center sits on a fixed ring
    // position per class, with a small per-sample jitter.
    const double angle = kTau * cls / cfg.n_classes - kTau / 4.0;
    const double ring = cfg.ring_radius_frac * S;
    const double jitter = 0.03 * S;
    const double cx = S / 2.0 + ring * std::cos(angle) + rng.uniform(-1.0f, 1.0f) * jitter;
    const double cy = S / 2.0 + ring * std::sin(angle) + rng.uniform(-1.0f, 1.0f) * jitter;
    const double sigma = cfg.blob_radius_frac * S;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    // Style (domain shift): background level, diagonal grating, blob contrast.
    const double background = 0.35 * shift;
    const double grating_amp = 0.20 * shift;
    const double grating_freq = kTau / (S / 2.0);
    const double grating_phase = rng.uniform(0.0f, static_cast<float>(kTau));
    const double blob_gain = cfg.blob_amplitude * (1.0 - 0.25 * shift);

    std::vector<float> img(static_cast<size_t>(S) * S);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double dx = x - cx;
            const double dy = y - cy;
            double v = background;
            v += grating_amp * std::sin(grating_freq * (x + y) + grating_phase);
            v += blob_gain * std::exp(-(dx * dx + dy * dy) * inv2s2);
            v += rng.normal(0.0f, static_cast<float>(cfg.noise_sigma));
            img[static_cast<size_t>(y) * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return img;
}

std::string synth_ref(const SyntheticDomainConfig& cfg, int domain_index, int cls, int sample) {
    const double shift = cfg.domains[static_cast<size_t>(domain_index)].shift;
    return "synth:v1;" + std::to_string(cfg.seed) + ";" + std::to_string(domain_index) + ";" +
           std::to_string(cfg.n_classes) + ";" + std::to_string(cls) + ";" + std::to_string(sample) + ";" +
           std::to_string(cfg.image_size) + ";" + format_double(shift) + ";" +
           format_double(cfg.noise_sigma) + ";" + format_double(cfg.blob_amplitude) + ";" +
           format_double(cfg.blob_radius_frac) + ";" + format_double(cfg.ring_radius_frac);
}

bool is_synth_ref(const std::string& ref) { return ref.rfind("synth:", 0) == 0; }

std::vector<float> render_synth_ref(const std::string& ref, const Shape& target_chw) {
    std::vector<std::string> parts;
    size_t pos = 6; // past "synth:"
    while (pos <= ref.size()) {
        const size_t next = ref.find(';', pos);
        parts.push_back(ref.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    if (parts.size() != 12 || parts[0] != "v1") throw DataError("synth: malformed ref '" + ref + "'");
    SyntheticDomainConfig cfg;
    int domain_index = 0, cls = 0, sample = 0;
    try {
        cfg.seed = std::stoull(parts[1]);
        domain_index = std::stoi(parts[2]);
        cfg.n_classes = std::stoi(parts[3]);
        cls = std::stoi(parts[4]);
        sample = std::stoi(parts[5]);
        cfg.image_size = std::stoi(parts[6]);
        const double shift = std::stod(parts[7]);
        cfg.noise_sigma = std::stod(parts[8]);
        cfg.blob_amplitude = std::stod(parts[9]);
        cfg.blob_radius_frac = std::stod(parts[10]);
        cfg.ring_radius_frac = std::stod(parts[11]);
        cfg.domains.assign(static_cast<size_t>(domain_index) + 1, DomainSpec{});
        cfg.domains.back() = {"ref", shift, -1};
    } catch (const std::exception&) {
        throw DataError("synth: malformed ref '" + ref + "'");
    }
    auto img = render_sample(cfg, domain_index, cls, sample);
    return adapt_image(std::move(img), 1, cfg.image_size, cfg.image_size, target_chw);
}

namespace {

DatasetManifest domain_manifest(const SyntheticDomainConfig& cfg, int domain_index) {
    const DomainSpec& dom = cfg.domains[static_cast<size_t>(domain_index)];
    const int n = dom.samples_per_class > 0 ? dom.samples_per_class : cfg.samples_per_class;
    DatasetManifest m;
    m.name = dom.name;
    for (int c = 0; c < cfg.n_classes; ++c) m.classes.push_back("class" + std::to_string(c));
    m.seed = cfg.seed;
    m.notes.push_back("generator=synthetic-domains/v1 shift=" + format_double(dom.shift));
    for (int c = 0; c < cfg.n_classes; ++c)
        for (int s = 0; s < n; ++s)
            m.entries.push_back({synth_ref(cfg, domain_index, c, s), c, Split::unassigned});
    return m;
}

} // namespace

std::vector<DatasetManifest> gen_synthetic_domains(const SyntheticDomainConfig& cfg) {
    validate_synth_config(cfg);
    std::vector<DatasetManifest> out;
    for (size_t d = 0; d < cfg.domains.size(); ++d)
        out.push_back(domain_manifest(cfg, static_cast<int>(d)));
    return out;
}

std::vector<DatasetManifest> gen_synthetic_domains_to_dir(const SyntheticDomainConfig& cfg,
                                                          const std::string& out_dir) {
    validate_synth_config(cfg);
    namespace fs = std::filesystem;
    std::vector<DatasetManifest> out;
    for (size_t d = 0; d < cfg.domains.size(); ++d) {
        const DomainSpec& dom = cfg.domains[d];
        const int n = dom.samples_per_class > 0 ? dom.samples_per_class : cfg.samples_per_class;
        const fs::path dir = fs::path(out_dir) / dom.name;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("synth: cannot create " + dir.string());

        DatasetManifest m;
        m.name = dom.name;
        for (int c = 0; c < cfg.n_classes; ++c) m.classes.push_back("class" + std::to_string(c));
        m.seed = cfg.seed;
        m.notes.push_back("generator=synthetic-domains/v1 shift=" + format_double(dom.shift));
        m.base_dir = dir.string();

        for (int c = 0; c < cfg.n_classes; ++c) {
            for (int s = 0; s < n; ++s) {
                auto img = render_sample(cfg, static_cast<int>(d), c, s);
                RawImage raw;
                raw.channels = 1;
                raw.height = cfg.image_size;
                raw.width = cfg.image_size;
                raw.pixels.resize(img.size());
                for (size_t i = 0; i < img.size(); ++i)
                    raw.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 255.0f));
                char name[64];
                std::snprintf(name, sizeof(name), "c%02d_s%04d.png", c, s);
                write_png((dir / name).string(), raw);
                m.entries.push_back({name, c, Split::unassigned});
            }
        }
        save_manifest(m, (dir / "dataset.manifest").string());
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace mstl
