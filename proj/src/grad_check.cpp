#include "mstl/grad_check.hpp"

#include <cmath>

namespace mstl {

GradCheckResult grad_check(const std::function<TensorPtr()>& fn,
                           const std::vector<TensorPtr>& wrt,
                           double step) {
    if (wrt.empty()) throw InputError("grad_check: nothing to check");

    std::vector<bool> saved_flags;
    for (const auto& t : wrt) {
        saved_flags.push_back(t->requires_grad);
        t->requires_grad = true;
        t->ensure_grad();
        t->zero_grad();
    }

    // Analytic pass.
    TensorPtr loss = fn();
    if (loss->size() != 1) throw InputError("grad_check: fn must return a scalar");
    backward(loss);
    std::vector<std::vector<float>> analytic;
    for (const auto& t : wrt) analytic.push_back(t->grad);

    GradCheckResult result;
    {
        NoGradGuard no_grad;
        for (size_t ti = 0; ti < wrt.size(); ++ti) {
            Tensor& t = *wrt[ti];
            for (size_t i = 0; i < t.values.size(); ++i) {
                const float saved = t.values[i];
                t.values[i] = static_cast<float>(saved + step);
                const double f_plus = fn()->values[0];
                t.values[i] = static_cast<float>(saved - step);
                const double f_minus = fn()->values[0];
                t.values[i] = saved;
                const double numeric = (f_plus - f_minus) / (2.0 * step);
                const double err = std::abs(static_cast<double>(analytic[ti][i]) - numeric) /
                                   std::max(1.0, std::abs(numeric));
                if (err > result.max_rel_err) {
                    result.max_rel_err = err;
                    result.worst_coordinate = "wrt[" + std::to_string(ti) + "][" + std::to_string(i) + "]";
                }
            }
        }
    }

    for (size_t ti = 0; ti < wrt.size(); ++ti) {
        wrt[ti]->requires_grad = saved_flags[ti];
        wrt[ti]->zero_grad();
    }
    return result;
}

namespace {

// Double-precision re-evaluation of a graph + task loss, independent of the
// float32 kernels. Parameters come from `params64` (aligned with g.params);
// dropout is treated as identity.
double loss_f64(const ModelGraph& g, const std::vector<std::vector<double>>& params64,
                const std::vector<double>& input, int batch, TaskKind task,
                const std::vector<int>& labels) {
    const int C = g.spec.input_shape[0], H = g.spec.input_shape[1], W = g.spec.input_shape[2];
    struct Act {
        Shape shape; // per-sample C,H,W or F
        std::vector<double> data;
    };
    std::vector<Act> act(g.nodes.size());

    auto p64 = [&](const std::string& name) -> const std::vector<double>& {
        const int idx = g.param_index(name);
        return params64[static_cast<size_t>(idx)];
    };
    auto pshape = [&](const std::string& name) -> const Shape& {
        return g.param(name).tensor->shape;
    };

    for (size_t ni = 0; ni < g.nodes.size(); ++ni) {
        const LayerNode& node = g.nodes[ni];
        switch (node.kind) {
            case NodeKind::Input:
                act[ni] = {{C, H, W}, input};
                break;
            case NodeKind::Conv: {
                const Act& in = act[static_cast<size_t>(node.in[0])];
                const Shape& ks = pshape(node.params[0]);
                const auto& kd = p64(node.params[0]);
                const auto& bd = p64(node.params[1]);
                const int IC = in.shape[0], IH = in.shape[1], IW = in.shape[2];
                const int O = ks[0], KH = ks[2], KW = ks[3];
                const int HO = (IH + 2 * node.padding - KH) / node.stride + 1;
                const int WO = (IW + 2 * node.padding - KW) / node.stride + 1;
                Act out{{O, HO, WO}, std::vector<double>(static_cast<size_t>(batch) * O * HO * WO)};
                for (int n = 0; n < batch; ++n)
                    for (int o = 0; o < O; ++o)
                        for (int ho = 0; ho < HO; ++ho)
                            for (int wo = 0; wo < WO; ++wo) {
                                double acc = bd[static_cast<size_t>(o)];
                                for (int ci = 0; ci < IC; ++ci)
                                    for (int kh = 0; kh < KH; ++kh)
                                        for (int kw = 0; kw < KW; ++kw) {
                                            const int hi = ho * node.stride + kh - node.padding;
                                            const int wi = wo * node.stride + kw - node.padding;
                                            if (hi < 0 || hi >= IH || wi < 0 || wi >= IW) continue;
                                            acc += in.data[((static_cast<size_t>(n) * IC + ci) * IH + hi) * IW + wi] *
                                                   kd[((static_cast<size_t>(o) * IC + ci) * KH + kh) * KW + kw];
                                        }
                                out.data[((static_cast<size_t>(n) * O + o) * HO + ho) * WO + wo] = acc;
                            }
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Dense: {
                const Act& in = act[static_cast<size_t>(node.in[0])];
                const Shape& ws = pshape(node.params[0]);
                const auto& wd = p64(node.params[0]);
                const auto& bd = p64(node.params[1]);
                const int F = ws[0], U = ws[1];
                Act out{{U}, std::vector<double>(static_cast<size_t>(batch) * U)};
                for (int n = 0; n < batch; ++n)
                    for (int u = 0; u < U; ++u) {
                        double acc = bd[static_cast<size_t>(u)];
                        for (int f = 0; f < F; ++f)
                            acc += in.data[static_cast<size_t>(n) * F + f] * wd[static_cast<size_t>(f) * U + u];
                        out.data[static_cast<size_t>(n) * U + u] = acc;
                    }
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Relu: {
                Act out = act[static_cast<size_t>(node.in[0])];
                for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Sigmoid: {
                Act out = act[static_cast<size_t>(node.in[0])];
                for (auto& v : out.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Softmax: {
                const Act& in = act[static_cast<size_t>(node.in[0])];
                const int K = in.shape[0];
                Act out = in;
                for (int n = 0; n < batch; ++n) {
                    double* row = out.data.data() + static_cast<size_t>(n) * K;
                    double mx = row[0];
                    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
                    double denom = 0.0;
                    for (int k = 0; k < K; ++k) {
                        row[k] = std::exp(row[k] - mx);
                        denom += row[k];
                    }
                    for (int k = 0; k < K; ++k) row[k] /= denom;
                }
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::AvgPool: {
                const Act& in = act[static_cast<size_t>(node.in[0])];
                const int IC = in.shape[0], IH = in.shape[1], IW = in.shape[2];
                const int HO = (IH - node.window) / node.stride + 1;
                const int WO = (IW - node.window) / node.stride + 1;
                Act out{{IC, HO, WO}, std::vector<double>(static_cast<size_t>(batch) * IC * HO * WO)};
                for (int n = 0; n < batch; ++n)
                    for (int c = 0; c < IC; ++c)
                        for (int ho = 0; ho < HO; ++ho)
                            for (int wo = 0; wo < WO; ++wo) {
                                double acc = 0.0;
                                for (int kh = 0; kh < node.window; ++kh)
                                    for (int kw = 0; kw < node.window; ++kw)
                                        acc += in.data[((static_cast<size_t>(n) * IC + c) * IH + ho * node.stride + kh) * IW +
                                                       wo * node.stride + kw];
                                out.data[((static_cast<size_t>(n) * IC + c) * HO + ho) * WO + wo] =
                                    acc / (node.window * node.window);
                            }
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::GlobalAvgPool: {
                const Act& in = act[static_cast<size_t>(node.in[0])];
                const int IC = in.shape[0], plane = in.shape[1] * in.shape[2];
                Act out{{IC}, std::vector<double>(static_cast<size_t>(batch) * IC)};
                for (int n = 0; n < batch; ++n)
                    for (int c = 0; c < IC; ++c) {
                        double acc = 0.0;
                        for (int i = 0; i < plane; ++i)
                            acc += in.data[(static_cast<size_t>(n) * IC + c) * plane + i];
                        out.data[static_cast<size_t>(n) * IC + c] = acc / plane;
                    }
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Flatten: {
                const Act& in = act[static_cast<size_t>(node.in[0])];
                act[ni] = {{in.shape[0] * in.shape[1] * in.shape[2]}, in.data};
                break;
            }
            case NodeKind::Add: {
                Act out = act[static_cast<size_t>(node.in[0])];
                const Act& b = act[static_cast<size_t>(node.in[1])];
                for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Concat: {
                int Ctot = 0;
                for (int idx : node.in) Ctot += act[static_cast<size_t>(idx)].shape[0];
                const Act& first = act[static_cast<size_t>(node.in[0])];
                const int IH = first.shape[1], IW = first.shape[2];
                const size_t plane = static_cast<size_t>(IH) * IW;
                Act out{{Ctot, IH, IW}, std::vector<double>(static_cast<size_t>(batch) * Ctot * plane)};
                for (int n = 0; n < batch; ++n) {
                    size_t coff = 0;
                    for (int idx : node.in) {
                        const Act& a = act[static_cast<size_t>(idx)];
                        const size_t cx = static_cast<size_t>(a.shape[0]);
                        std::copy_n(a.data.data() + static_cast<size_t>(n) * cx * plane, cx * plane,
                                    out.data.data() + (static_cast<size_t>(n) * Ctot + coff) * plane);
                        coff += cx;
                    }
                }
                act[ni] = std::move(out);
                break;
            }
            case NodeKind::Dropout:
                act[ni] = act[static_cast<size_t>(node.in[0])];
                break;
        }
    }

    const Act& out = act.back();
    const double eps = static_cast<double>(kProbEps);
    double acc = 0.0;
    if (task == TaskKind::binary) {
        for (int n = 0; n < batch; ++n) {
            const double p = std::clamp(out.data[static_cast<size_t>(n)], eps, 1.0 - eps);
            acc += labels[static_cast<size_t>(n)] ? -std::log(p) : -std::log(1.0 - p);
        }
    } else {
        const int K = out.shape[0];
        for (int n = 0; n < batch; ++n) {
            const double p = std::clamp(out.data[static_cast<size_t>(n) * K + labels[static_cast<size_t>(n)]],
                                        eps, 1.0 - eps);
            acc += -std::log(p);
        }
    }
    return acc / batch;
}

} // namespace

GradCheckResult grad_check_graph(const ModelGraph& g, const TensorPtr& input, TaskKind task,
                                 const std::vector<int>& labels, double step) {
    // Work on a structural copy with dropout disabled; parameter tensors are
    // shared so analytic gradients land on the caller's graph.
    ModelGraph gc = g;
    for (auto& node : gc.nodes) node.rate = 0.0f;

    for (auto& p : gc.params) {
        p.tensor->ensure_grad();
        p.tensor->zero_grad();
    }
    const int batch = input->shape[0];
    {
        auto probs = forward(gc, input, Mode::train);
        TensorPtr loss;
        if (task == TaskKind::binary) {
            std::vector<float> y(labels.size());
            for (size_t i = 0; i < labels.size(); ++i) y[i] = static_cast<float>(labels[i]);
            loss = bce(probs, make_tensor({batch, 1}, std::move(y)));
        } else {
            loss = sparse_ce(probs, labels);
        }
        backward(loss);
    }

    std::vector<std::vector<double>> params64(gc.params.size());
    for (size_t i = 0; i < gc.params.size(); ++i)
        params64[i].assign(gc.params[i].tensor->values.begin(), gc.params[i].tensor->values.end());
    std::vector<double> input64(input->values.begin(), input->values.end());

    GradCheckResult result;
    for (size_t pi = 0; pi < gc.params.size(); ++pi) {
        if (!gc.params[pi].tensor->requires_grad) continue;
        for (size_t i = 0; i < params64[pi].size(); ++i) {
            const double saved = params64[pi][i];
            params64[pi][i] = saved + step;
            const double f_plus = loss_f64(gc, params64, input64, batch, task, labels);
            params64[pi][i] = saved - step;
            const double f_minus = loss_f64(gc, params64, input64, batch, task, labels);
            params64[pi][i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double analytic = gc.params[pi].tensor->grad[i];
            const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst_coordinate = gc.params[pi].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    for (auto& p : gc.params) p.tensor->zero_grad();
    return result;
}

} // namespace mstl
