#include "mstl/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mstl {

namespace {

using Json = nlohmann::ordered_json;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

void put_block(std::vector<uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class Reader {
public:
    Reader(const uint8_t* data, size_t size, std::string origin)
        : data_(data), size_(size), origin_(std::move(origin)) {}

    size_t offset() const { return pos_; }

    void need(size_t n, const char* what) {
        if (pos_ + n > size_)
            throw FormatError("checkpoint " + origin_ + ": truncated while reading " + what + " at offset " +
                              std::to_string(pos_));
    }

    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = static_cast<uint32_t>(data_[pos_]) | (static_cast<uint32_t>(data_[pos_ + 1]) << 8) |
                     (static_cast<uint32_t>(data_[pos_ + 2]) << 16) |
                     (static_cast<uint32_t>(data_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }

    uint8_t u8(const char* what) {
        need(1, what);
        return data_[pos_++];
    }

    float f32(const char* what) {
        const uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::string block(const char* what) {
        const uint32_t len = u32(what);
        need(len, what);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
        pos_ += len;
        return s;
    }

    bool done() const { return pos_ == size_; }
    const std::string& origin() const { return origin_; }

private:
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    std::string origin_;
};

Json spec_to_json(const Checkpoint& c) {
    Json j;
    j["family"] = family_name(c.arch.family);
    j["stem_channels"] = c.arch.stem_channels;
    j["blocks_per_stage"] = c.arch.blocks_per_stage;
    j["growth_or_width"] = c.arch.growth_or_width;
    j["compression_theta"] = c.arch.compression_theta;
    j["input_shape"] = c.arch.input_shape;
    Json head;
    head["task"] = task_name(c.head.task);
    head["classes"] = c.head.classes;
    head["hidden_units"] = c.head.hidden_units;
    head["dropout_rate"] = c.head.dropout_rate;
    j["head"] = std::move(head);
    Json params = Json::array();
    for (size_t i = 0; i < c.param_names.size(); ++i) {
        Json p;
        p["name"] = c.param_names[i];
        p["shape"] = c.param_shapes[i];
        p["trainable"] = c.trainable[i] != 0;
        params.push_back(std::move(p));
    }
    j["params"] = std::move(params);
    return j;
}

Json meta_to_json(const CheckpointMeta& m) {
    Json j;
    j["stage"] = m.stage;
    j["epoch"] = m.epoch;
    j["val_accuracy"] = m.val_accuracy;
    j["seed"] = m.seed;
    j["config_hash"] = m.config_hash;
    j["rng_algorithm"] = m.rng_algorithm;
    return j;
}

} // namespace

Checkpoint make_checkpoint(const ModelGraph& g, const std::vector<std::vector<float>>* velocity,
                           const CheckpointMeta& meta) {
    Checkpoint c;
    c.arch = g.spec;
    c.head = g.head;
    for (const auto& p : g.params) {
        c.param_names.push_back(p.name);
        c.param_shapes.push_back(p.tensor->shape);
        c.trainable.push_back(p.trainable ? 1 : 0);
        c.values.push_back(p.tensor->values);
    }
    if (velocity) {
        if (velocity->size() != g.params.size())
            throw InputError("checkpoint: velocity count does not match parameter count");
        c.velocity = *velocity;
    }
    c.meta = meta;
    return c;
}

ModelGraph restore_graph(const Checkpoint& c) {
    ModelGraph g = build_model(c.arch, 0);
    if (c.head.task != TaskKind::none)
        attach_head(g, c.head.task, c.head.classes, c.head.hidden_units, c.head.dropout_rate, 0);
    if (g.params.size() != c.param_names.size())
        throw FormatError("checkpoint: rebuilt graph has " + std::to_string(g.params.size()) +
                          " params but file stores " + std::to_string(c.param_names.size()));
    for (size_t i = 0; i < g.params.size(); ++i) {
        NamedParam& p = g.params[i];
        if (p.name != c.param_names[i])
            throw FormatError("checkpoint: param order mismatch at " + std::to_string(i) + ": rebuilt '" +
                              p.name + "' vs stored '" + c.param_names[i] + "'");
        if (p.tensor->shape != c.param_shapes[i])
            throw FormatError("checkpoint: shape mismatch for '" + p.name + "'");
        p.tensor->values = c.values[i];
        p.trainable = c.trainable[i] != 0;
        p.tensor->requires_grad = p.trainable;
    }
    return g;
}

std::vector<uint8_t> checkpoint_bytes(const Checkpoint& c) {
    std::vector<uint8_t> out;
    out.push_back('M');
    out.push_back('S');
    out.push_back('T');
    out.push_back('L');
    put_u32(out, Checkpoint::kFormatVersion);
    put_block(out, spec_to_json(c).dump());
    for (const auto& v : c.values)
        for (float f : v) put_f32(out, f);
    out.push_back(c.velocity.empty() ? 0 : 1);
    for (const auto& v : c.velocity)
        for (float f : v) put_f32(out, f);
    put_block(out, meta_to_json(c.meta).dump());
    return out;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    const auto bytes = checkpoint_bytes(c);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(bytes.data(), bytes.size(), path);

    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "MSTL", 4) != 0)
        throw FormatError("checkpoint " + path + ": bad magic at offset 0");
    Reader body(bytes.data() + 4, bytes.size() - 4, path);
    const uint32_t version = body.u32("version");
    if (version != Checkpoint::kFormatVersion)
        throw FormatError("checkpoint " + path + ": unsupported format version " + std::to_string(version));

    Checkpoint c;
    const std::string spec_json = body.block("graph spec");
    try {
        const Json j = Json::parse(spec_json);
        c.arch.family = family_from_name(j.at("family").get<std::string>());
        c.arch.stem_channels = j.at("stem_channels").get<int>();
        c.arch.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
        c.arch.growth_or_width = j.at("growth_or_width").get<int>();
        c.arch.compression_theta = j.at("compression_theta").get<float>();
        c.arch.input_shape = j.at("input_shape").get<Shape>();
        const Json& h = j.at("head");
        c.head.task = task_from_name(h.at("task").get<std::string>());
        c.head.classes = h.at("classes").get<int>();
        c.head.hidden_units = h.at("hidden_units").get<int>();
        c.head.dropout_rate = h.at("dropout_rate").get<float>();
        for (const Json& p : j.at("params")) {
            c.param_names.push_back(p.at("name").get<std::string>());
            c.param_shapes.push_back(p.at("shape").get<Shape>());
            c.trainable.push_back(p.at("trainable").get<bool>() ? 1 : 0);
        }
    } catch (const Json::exception& e) {
        throw FormatError("checkpoint " + path + ": bad graph spec JSON: " + e.what());
    }

    for (size_t i = 0; i < c.param_names.size(); ++i) {
        const int64_t n = numel(c.param_shapes[i]);
        std::vector<float> v(static_cast<size_t>(n));
        for (int64_t k = 0; k < n; ++k) v[static_cast<size_t>(k)] = body.f32("param values");
        c.values.push_back(std::move(v));
    }
    const uint8_t has_velocity = body.u8("velocity flag");
    if (has_velocity) {
        for (size_t i = 0; i < c.param_names.size(); ++i) {
            const int64_t n = numel(c.param_shapes[i]);
            std::vector<float> v(static_cast<size_t>(n));
            for (int64_t k = 0; k < n; ++k) v[static_cast<size_t>(k)] = body.f32("velocity values");
            c.velocity.push_back(std::move(v));
        }
    }
    const std::string meta_json = body.block("metadata");
    try {
        const Json j = Json::parse(meta_json);
        c.meta.stage = j.at("stage").get<std::string>();
        c.meta.epoch = j.at("epoch").get<int>();
        c.meta.val_accuracy = j.at("val_accuracy").get<double>();
        c.meta.seed = j.at("seed").get<uint64_t>();
        c.meta.config_hash = j.at("config_hash").get<std::string>();
        c.meta.rng_algorithm = j.at("rng_algorithm").get<std::string>();
    } catch (const Json::exception& e) {
        throw FormatError("checkpoint " + path + ": bad metadata JSON: " + e.what());
    }
    if (!body.done())
        throw FormatError("checkpoint " + path + ": " + std::to_string(bytes.size() - 4 - body.offset()) +
                          " trailing bytes after metadata");
    return c;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("hash: cannot open " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[8192];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

} // namespace mstl
