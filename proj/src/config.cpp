#include "mstl/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace mstl {

namespace {

using Json = nlohmann::ordered_json;

void require_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& context) {
    if (!obj.is_object()) throw ConfigError("config: '" + context + "' must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + (context.empty() ? key : context + "." + key) + "'");
}

std::string hash_hex(const std::string& text) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SyntheticDomainConfig parse_synthetic(const Json& j, std::string* dir) {
    require_keys(j, {"n_classes", "samples_per_class", "image_size", "noise_sigma", "blob_amplitude",
                     "blob_radius_frac", "ring_radius_frac", "dir", "domains"},
                 "datasets.synthetic");
    SyntheticDomainConfig cfg;
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    cfg.samples_per_class = j.value("samples_per_class", cfg.samples_per_class);
    cfg.image_size = j.value("image_size", cfg.image_size);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.blob_amplitude = j.value("blob_amplitude", cfg.blob_amplitude);
    cfg.blob_radius_frac = j.value("blob_radius_frac", cfg.blob_radius_frac);
    cfg.ring_radius_frac = j.value("ring_radius_frac", cfg.ring_radius_frac);
    if (j.contains("dir")) *dir = j.at("dir").get<std::string>();
    if (j.contains("domains")) {
        cfg.domains.clear();
        for (const Json& d : j.at("domains")) {
            require_keys(d, {"name", "shift", "samples_per_class"}, "datasets.synthetic.domains[]");
            DomainSpec spec;
            spec.name = d.at("name").get<std::string>();
            spec.shift = d.at("shift").get<double>();
            spec.samples_per_class = d.value("samples_per_class", -1);
            cfg.domains.push_back(std::move(spec));
        }
    }
    return cfg;
}

ArchitectureSpec parse_architecture(const Json& j) {
    require_keys(j, {"family", "stem_channels", "blocks_per_stage", "growth_or_width",
                     "compression_theta", "input_shape"},
                 "architecture");
    ArchitectureSpec arch;
    arch.family = family_from_name(j.at("family").get<std::string>());
    arch.stem_channels = j.at("stem_channels").get<int>();
    arch.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
    arch.growth_or_width = j.at("growth_or_width").get<int>();
    arch.compression_theta = j.value("compression_theta", 1.0f);
    arch.input_shape = j.at("input_shape").get<Shape>();
    return arch;
}

TransferStage parse_stage(const Json& j, size_t index) {
    const std::string context = "plan.stages[" + std::to_string(index) + "]";
    require_keys(j, {"name", "dataset", "task", "labeling", "freeze", "head", "dropout", "split",
                     "stratified", "hyper", "init_from"},
                 context);
    TransferStage s;
    s.name = j.at("name").get<std::string>();
    s.dataset = j.at("dataset").get<std::string>();
    if (j.contains("task")) s.task = task_from_name(j.at("task").get<std::string>());

    if (j.contains("labeling")) {
        const Json& lab = j.at("labeling");
        if (lab.is_string()) {
            if (lab.get<std::string>() != "hard")
                throw ConfigError("config: " + context + ".labeling must be \"hard\" or {\"soft\": {...}}");
            s.labeling.kind = LabelingSpec::Kind::hard;
        } else {
            require_keys(lab, {"soft"}, context + ".labeling");
            const Json& soft = lab.at("soft");
            require_keys(soft, {"grid", "folds", "extractor"}, context + ".labeling.soft");
            s.labeling.kind = LabelingSpec::Kind::soft;
            if (soft.contains("grid")) s.labeling.grid = soft.at("grid").get<std::vector<int>>();
            if (soft.contains("folds")) s.labeling.folds = soft.at("folds").get<int>();
            if (soft.contains("extractor")) s.extractor_checkpoint = soft.at("extractor").get<std::string>();
        }
    }

    if (j.contains("freeze")) s.freeze.fraction_shallowest_frozen = j.at("freeze").get<float>();
    if (j.contains("head")) {
        const std::string head = j.at("head").get<std::string>();
        if (head == "keep") s.head = TransferStage::HeadPolicy::keep;
        else if (head == "reinit") s.head = TransferStage::HeadPolicy::reinit;
        else throw ConfigError("config: " + context + ".head must be \"keep\" or \"reinit\"");
    }
    if (j.contains("dropout")) s.dropout_before_output = j.at("dropout").get<float>();
    if (j.contains("split")) {
        const auto ratios = j.at("split").get<std::vector<double>>();
        if (ratios.size() != 3)
            throw ConfigError("config: " + context + ".split must be [train, val, test]");
        s.split_ratios = {ratios[0], ratios[1], ratios[2]};
    }
    if (j.contains("stratified")) s.stratified = j.at("stratified").get<bool>();

    if (j.contains("hyper")) {
        const Json& h = j.at("hyper");
        require_keys(h, {"learning_rate", "momentum", "batch_size", "epochs", "seed"}, context + ".hyper");
        s.hyper.learning_rate = h.value("learning_rate", s.hyper.learning_rate);
        s.hyper.momentum = h.value("momentum", s.hyper.momentum);
        s.hyper.batch_size = h.value("batch_size", s.hyper.batch_size);
        s.hyper.epochs = h.value("epochs", s.hyper.epochs);
        s.hyper.seed = h.value("seed", s.hyper.seed);
    }

    if (j.contains("init_from")) {
        const Json& init = j.at("init_from");
        if (init.is_string()) {
            const std::string v = init.get<std::string>();
            if (v == "random") s.init_from = TransferStage::InitFrom::random;
            else if (v == "previous") s.init_from = TransferStage::InitFrom::previous_stage;
            else
                throw ConfigError("config: " + context +
                                  ".init_from must be \"random\", \"previous\" or {\"checkpoint\": path}");
        } else {
            require_keys(init, {"checkpoint"}, context + ".init_from");
            s.init_from = TransferStage::InitFrom::checkpoint;
            s.init_checkpoint = init.at("checkpoint").get<std::string>();
        }
    }
    return s;
}

} // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin) {
    Json j;
    try {
        j = Json::parse(json_text);
    } catch (const Json::parse_error& e) {
        throw ConfigError("config " + origin + ": " + e.what());
    }
    try {
        require_keys(j, {"seed", "output_dir", "datasets", "architecture", "head", "plan"}, "");
        ExperimentConfig cfg;
        cfg.config_hash = hash_hex(json_text);
        cfg.seed = j.value("seed", 0ULL);
        if (!j.contains("output_dir")) throw ConfigError("config: missing 'output_dir'");
        cfg.output_dir = j.at("output_dir").get<std::string>();

        if (j.contains("datasets")) {
            const Json& ds = j.at("datasets");
            require_keys(ds, {"synthetic", "manifests"}, "datasets");
            if (ds.contains("synthetic"))
                cfg.synthetic = parse_synthetic(ds.at("synthetic"), &cfg.synthetic_dir);
            if (ds.contains("manifests")) {
                const Json& m = ds.at("manifests");
                if (!m.is_object()) throw ConfigError("config: datasets.manifests must be an object");
                for (const auto& [name, path] : m.items())
                    cfg.manifests[name] = path.get<std::string>();
            }
        }

        if (!j.contains("architecture")) throw ConfigError("config: missing 'architecture'");
        cfg.arch = parse_architecture(j.at("architecture"));

        if (j.contains("head")) {
            require_keys(j.at("head"), {"hidden_units"}, "head");
            cfg.head_hidden = j.at("head").value("hidden_units", cfg.head_hidden);
        }

        if (!j.contains("plan")) throw ConfigError("config: missing 'plan'");
        const Json& plan = j.at("plan");
        require_keys(plan, {"stages", "arms"}, "plan");
        if (!plan.contains("stages")) throw ConfigError("config: missing 'plan.stages'");
        size_t idx = 0;
        for (const Json& stage : plan.at("stages")) cfg.plan.stages.push_back(parse_stage(stage, idx++));
        if (plan.contains("arms")) {
            const Json& arms = plan.at("arms");
            if (!arms.is_object()) throw ConfigError("config: plan.arms must be an object");
            for (const auto& [name, indices] : arms.items())
                cfg.plan.arms[name] = indices.get<std::vector<int>>();
        }
        cfg.plan.seed = cfg.seed;
        return cfg;
    } catch (const Json::exception& e) {
        throw ConfigError("config " + origin + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto cfg = parse_config(text, path);
    cfg.base_dir = std::filesystem::path(path).parent_path().string();
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    validate_spec(cfg.arch);
    if (cfg.head_hidden <= 0) throw ConfigError("config: head.hidden_units must be positive");
    if (cfg.synthetic) {
        validate_synth_config(*cfg.synthetic);
        if (cfg.synthetic->image_size != cfg.arch.input_shape[1] ||
            cfg.synthetic->image_size != cfg.arch.input_shape[2])
            throw ConfigError("config: synthetic image_size " + std::to_string(cfg.synthetic->image_size) +
                              " does not match architecture input " + shape_str(cfg.arch.input_shape));
    }
    validate_plan(cfg.plan);

    std::set<std::string> known;
    if (cfg.synthetic)
        for (const auto& d : cfg.synthetic->domains) known.insert(d.name);
    namespace fs = std::filesystem;
    for (const auto& [name, path] : cfg.manifests) {
        if (known.count(name))
            throw ConfigError("config: dataset '" + name + "' defined both as synthetic domain and manifest");
        const fs::path p = fs::path(path).is_absolute() ? fs::path(path) : fs::path(cfg.base_dir) / path;
        if (!fs::exists(p))
            throw ResolutionError("config: manifest for dataset '" + name + "' not found at " + p.string());
        known.insert(name);
    }
    for (const auto& stage : cfg.plan.stages) {
        if (!known.count(stage.dataset))
            throw ResolutionError("config: stage '" + stage.name + "' references undefined dataset '" +
                                  stage.dataset + "'");
        if (stage.init_from == TransferStage::InitFrom::checkpoint && !fs::exists(stage.init_checkpoint))
            throw ResolutionError("config: stage '" + stage.name + "' init checkpoint not found at " +
                                  stage.init_checkpoint);
        if (!stage.extractor_checkpoint.empty() && !fs::exists(stage.extractor_checkpoint))
            throw ResolutionError("config: stage '" + stage.name + "' extractor checkpoint not found at " +
                                  stage.extractor_checkpoint);
    }
}

std::map<std::string, DatasetManifest> resolve_datasets(const ExperimentConfig& cfg,
                                                        bool persist_synthetic,
                                                        const std::string& run_dir) {
    std::map<std::string, DatasetManifest> out;
    if (cfg.synthetic) {
        namespace fs = std::filesystem;
        auto manifests = persist_synthetic
                             ? gen_synthetic_domains_to_dir(
                                   *cfg.synthetic, (fs::path(run_dir) / cfg.synthetic_dir).string())
                             : gen_synthetic_domains(*cfg.synthetic);
        for (auto& m : manifests) out[m.name] = std::move(m);
    }
    for (const auto& [name, path] : cfg.manifests) {
        namespace fs = std::filesystem;
        const fs::path p = fs::path(path).is_absolute() ? fs::path(path) : fs::path(cfg.base_dir) / path;
        out[name] = load_manifest(p.string());
    }
    return out;
}

} // namespace mstl
