#include "mstl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mstl {

namespace {

using Json = nlohmann::ordered_json;

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

void check_scores_labels(const std::vector<float>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw InputError("eval: empty input");
    if (scores.size() != labels.size())
        throw InputError("eval: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    for (int l : labels)
        if (l != 0 && l != 1) throw InputError("eval: labels must be binary, got " + std::to_string(l));
}

} // namespace

ConfusionMatrix confusion(const std::vector<float>& scores, const std::vector<int>& labels,
                          float threshold) {
    check_scores_labels(scores, labels);
    ConfusionMatrix cm;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool positive = scores[i] >= threshold;
        if (labels[i] == 1) (positive ? cm.tp : cm.fn)++;
        else (positive ? cm.fp : cm.tn)++;
    }
    return cm;
}

Metrics metrics_of(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw InputError("metrics: empty confusion matrix");
    Metrics m;
    m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    if (cm.tp + cm.fp > 0) {
        m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    } else {
        m.flags.precision_undefined = true;
    }
    if (cm.tp + cm.fn > 0) {
        m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    } else {
        m.flags.recall_undefined = true;
    }
    if (!m.flags.precision_undefined && !m.flags.recall_undefined && m.precision + m.recall > 0.0) {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.flags.f1_undefined = true;
    }
    return m;
}

std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<float>& scores,
                                                 const std::vector<int>& labels) {
    check_scores_labels(scores, labels);
    int64_t npos = 0, nneg = 0;
    for (int l : labels) (l == 1 ? npos : nneg)++;
    if (npos == 0 || nneg == 0)
        throw InputError("roc_auc: both classes must be present (got " + std::to_string(npos) +
                         " positive, " + std::to_string(nneg) + " negative)");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0});
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        const float t = scores[order[i]];
        // absorb the whole tie group at this threshold
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        roc.push_back({static_cast<double>(fp) / static_cast<double>(nneg),
                       static_cast<double>(tp) / static_cast<double>(npos)});
    }

    double auc = 0.0;
    for (size_t j = 1; j < roc.size(); ++j)
        auc += (roc[j].fpr - roc[j - 1].fpr) * (roc[j].tpr + roc[j - 1].tpr) * 0.5;
    return {std::move(roc), auc};
}

EvalReport evaluate_binary(const std::string& model_id, const std::string& stage,
                           const std::string& split, const std::vector<float>& scores,
                           const std::vector<int>& labels, float threshold,
                           const Provenance& provenance) {
    EvalReport r;
    r.model_id = model_id;
    r.stage = stage;
    r.split = split;
    r.threshold = threshold;
    r.cm = confusion(scores, labels, threshold);
    r.metrics = metrics_of(r.cm);
    auto [roc, auc] = roc_auc(scores, labels);
    r.roc = std::move(roc);
    r.auc = auc;
    r.provenance = provenance;
    return r;
}

ComparisonTable compare_arms(const EvalReport& baseline, const EvalReport& candidate) {
    if (baseline.split != candidate.split)
        throw ComparisonError("compare: reports cover different splits ('" + baseline.split + "' vs '" +
                              candidate.split + "')");
    if (baseline.provenance.manifest_hash != candidate.provenance.manifest_hash)
        throw ComparisonError("compare: manifest hashes differ (" + baseline.provenance.manifest_hash +
                              " vs " + candidate.provenance.manifest_hash + "); refusing to compare");
    ComparisonTable t;
    t.baseline_id = baseline.model_id;
    t.candidate_id = candidate.model_id;
    t.split = baseline.split;
    auto row = [&](const std::string& name, double b, double c) {
        t.rows.push_back({name, b, c, c - b});
    };
    row("accuracy", baseline.metrics.accuracy, candidate.metrics.accuracy);
    row("precision", baseline.metrics.precision, candidate.metrics.precision);
    row("recall", baseline.metrics.recall, candidate.metrics.recall);
    row("f1", baseline.metrics.f1, candidate.metrics.f1);
    row("auc", baseline.auc, candidate.auc);
    return t;
}

std::string report_to_json(const EvalReport& r) {
    Json j;
    j["schema"] = "mstl-eval-report/1";
    j["model_id"] = r.model_id;
    j["stage"] = r.stage;
    j["split"] = r.split;
    j["threshold"] = r.threshold;
    j["confusion"] = Json{{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn}};
    Json flags;
    flags["precision_undefined"] = r.metrics.flags.precision_undefined;
    flags["recall_undefined"] = r.metrics.flags.recall_undefined;
    flags["f1_undefined"] = r.metrics.flags.f1_undefined;
    Json metrics;
    metrics["accuracy"] = r.metrics.accuracy;
    metrics["precision"] = r.metrics.precision;
    metrics["recall"] = r.metrics.recall;
    metrics["f1"] = r.metrics.f1;
    metrics["flags"] = std::move(flags);
    j["metrics"] = std::move(metrics);
    Json roc = Json::array();
    for (const auto& p : r.roc) roc.push_back(Json::array({p.fpr, p.tpr}));
    j["roc"] = std::move(roc);
    j["auc"] = r.auc;
    j["provenance"] = Json{{"checkpoint_hash", r.provenance.checkpoint_hash},
                           {"manifest_hash", r.provenance.manifest_hash},
                           {"seed", r.provenance.seed}};
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& json_text) {
    try {
        const Json j = Json::parse(json_text);
        if (j.at("schema").get<std::string>() != "mstl-eval-report/1")
            throw FormatError("report: unknown schema '" + j.at("schema").get<std::string>() + "'");
        EvalReport r;
        r.model_id = j.at("model_id").get<std::string>();
        r.stage = j.at("stage").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.threshold = j.at("threshold").get<double>();
        const Json& cm = j.at("confusion");
        r.cm = {cm.at("tp").get<int64_t>(), cm.at("fp").get<int64_t>(), cm.at("tn").get<int64_t>(),
                cm.at("fn").get<int64_t>()};
        const Json& m = j.at("metrics");
        r.metrics.accuracy = m.at("accuracy").get<double>();
        r.metrics.precision = m.at("precision").get<double>();
        r.metrics.recall = m.at("recall").get<double>();
        r.metrics.f1 = m.at("f1").get<double>();
        const Json& flags = m.at("flags");
        r.metrics.flags.precision_undefined = flags.at("precision_undefined").get<bool>();
        r.metrics.flags.recall_undefined = flags.at("recall_undefined").get<bool>();
        r.metrics.flags.f1_undefined = flags.at("f1_undefined").get<bool>();
        for (const Json& p : j.at("roc")) r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        r.auc = j.at("auc").get<double>();
        const Json& prov = j.at("provenance");
        r.provenance.checkpoint_hash = prov.at("checkpoint_hash").get<std::string>();
        r.provenance.manifest_hash = prov.at("manifest_hash").get<std::string>();
        r.provenance.seed = prov.at("seed").get<uint64_t>();
        return r;
    } catch (const Json::exception& e) {
        throw FormatError(std::string("report: bad JSON: ") + e.what());
    }
}

void write_report(const EvalReport& report, const std::string& path) {
    write_text_file(path, report_to_json(report));
}

EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("report: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return report_from_json(text);
}

std::string render_table(const std::vector<EvalReport>& reports) {
    std::string out = "model                     stage        split  accuracy  precision  recall  f1     auc\n";
    for (const auto& r : reports) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-25s %-12s %-6s %-9s %-10s %-7s %-6s %s\n",
                      r.model_id.c_str(), r.stage.c_str(), r.split.c_str(),
                      fixed3(r.metrics.accuracy).c_str(), fixed3(r.metrics.precision).c_str(),
                      fixed3(r.metrics.recall).c_str(), fixed3(r.metrics.f1).c_str(),
                      fixed3(r.auc).c_str());
        out += line;
    }
    return out;
}

std::string render_comparison(const ComparisonTable& t) {
    std::string out = "baseline: " + t.baseline_id + "\ncandidate: " + t.candidate_id +
                      "\nsplit: " + t.split + "\n\nmetric      baseline  candidate  delta\n";
    for (const auto& row : t.rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-11s %-9s %-10s %+.3f\n", row.metric.c_str(),
                      fixed3(row.baseline).c_str(), fixed3(row.candidate).c_str(), row.delta);
        out += line;
    }
    return out;
}

std::string render_roc_svg(const std::vector<EvalReport>& reports) {
    const int width = 640, height = 480;
    const double x0 = 70, y0 = 40, plot_w = 500, plot_h = 380;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
    auto px = [&](double fpr) { return x0 + fpr * plot_w; };
    auto py = [&](double tpr) { return y0 + (1.0 - tpr) * plot_h; };
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };

    std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" viewBox=\"0 0 640 480\">\n";
    svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    // axes
    svg += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x0) + "\" y2=\"" +
           fmt(y0 + plot_h) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0 + plot_h) + "\" x2=\"" + fmt(x0 + plot_w) +
           "\" y2=\"" + fmt(y0 + plot_h) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(px(0)) + "\" y1=\"" + fmt(py(0)) + "\" x2=\"" + fmt(px(1)) + "\" y2=\"" +
           fmt(py(1)) + "\" stroke=\"#bbbbbb\" stroke-dasharray=\"6,4\"/>\n";
    svg += "<text x=\"" + fmt(x0 + plot_w / 2) + "\" y=\"" + fmt(y0 + plot_h + 35) +
           "\" text-anchor=\"middle\" font-size=\"14\">false positive rate</text>\n";
    svg += "<text x=\"20\" y=\"" + fmt(y0 + plot_h / 2) + "\" text-anchor=\"middle\" font-size=\"14\" " +
           "transform=\"rotate(-90 20 " + fmt(y0 + plot_h / 2) + ")\">true positive rate</text>\n";

    for (size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const char* color = palette[i % 8];
        std::string d = "M";
        for (size_t p = 0; p < r.roc.size(); ++p) {
            if (p) d += " L";
            d += fmt(px(r.roc[p].fpr)) + " " + fmt(py(r.roc[p].tpr));
        }
        svg += "<path class=\"roc\" d=\"" + d + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        const double ly = y0 + 16 + 18 * static_cast<double>(i);
        svg += "<line x1=\"" + fmt(x0 + plot_w - 180) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" +
               fmt(x0 + plot_w - 160) + "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        svg += "<text class=\"legend\" x=\"" + fmt(x0 + plot_w - 154) + "\" y=\"" + fmt(ly) +
               "\" font-size=\"12\">" + r.model_id + " (AUC=" + fixed3(r.auc) + ")</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("write failed for " + path);
}

} // namespace mstl
