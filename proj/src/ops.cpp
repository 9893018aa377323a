#include "mstl/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mstl {

namespace {

// Registers a tape node when recording is on and some input needs gradients.
void record(TensorPtr& out, OpKind kind, std::vector<TensorPtr> inputs,
            std::function<void(const Tensor&)> backward_fn) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& in : inputs)
        if (in && in->needs_grad()) any = true;
    if (!any) return;
    auto node = std::make_shared<OpNode>();
    node->kind = kind;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
    out->node = std::move(node);
}

void require_rank(const TensorPtr& t, size_t rank, const char* op, const char* arg) {
    if (t->shape.size() != rank)
        throw DimensionError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t->shape));
}

} // namespace

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel, const TensorPtr& bias,
                 int stride, int padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    require_rank(bias, 1, "conv2d", "bias");
    if (stride <= 0) throw InputError("conv2d: stride must be positive");
    if (padding < 0) throw InputError("conv2d: padding must be non-negative");

    const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
    const int O = kernel->shape[0], I = kernel->shape[1], KH = kernel->shape[2], KW = kernel->shape[3];
    if (I != C)
        throw DimensionError("conv2d: input has " + std::to_string(C) + " channels but kernel expects " +
                             std::to_string(I));
    if (bias->shape[0] != O)
        throw DimensionError("conv2d: bias length " + std::to_string(bias->shape[0]) +
                             " does not match output channels " + std::to_string(O));
    const int HO = (H + 2 * padding - KH) / stride + 1;
    const int WO = (W + 2 * padding - KW) / stride + 1;
    if (H + 2 * padding < KH || W + 2 * padding < KW || HO < 1 || WO < 1)
        throw DimensionError("conv2d: kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                             " does not fit input " + shape_str(input->shape) + " with padding " +
                             std::to_string(padding));

    auto out = zeros({N, O, HO, WO});
    const float* xd = input->values.data();
    const float* kd = kernel->values.data();
    const float* bd = bias->values.data();
    float* yd = out->values.data();

    // One thread owns each (n, o) output plane; the reduction inside is
    // serial, so results do not depend on the thread count.
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(N) * O * HO * WO * C * KH * KW > 16384)
    for (int n = 0; n < N; ++n) {
        for (int o = 0; o < O; ++o) {
            for (int ho = 0; ho < HO; ++ho) {
                for (int wo = 0; wo < WO; ++wo) {
                    float acc = bd[o];
                    for (int ci = 0; ci < C; ++ci) {
                        const float* xp = xd + ((static_cast<int64_t>(n) * C + ci) * H) * W;
                        const float* kp = kd + ((static_cast<int64_t>(o) * C + ci) * KH) * KW;
                        for (int kh = 0; kh < KH; ++kh) {
                            const int hi = ho * stride + kh - padding;
                            if (hi < 0 || hi >= H) continue;
                            for (int kw = 0; kw < KW; ++kw) {
                                const int wi = wo * stride + kw - padding;
                                if (wi < 0 || wi >= W) continue;
                                acc += xp[hi * W + wi] * kp[kh * KW + kw];
                            }
                        }
                    }
                    yd[((static_cast<int64_t>(n) * O + o) * HO + ho) * WO + wo] = acc;
                }
            }
        }
    }
    check_finite(*out, "conv2d");

    record(out, OpKind::Conv2d, {input, kernel, bias},
           [input, kernel, bias, stride, padding, N, C, H, W, O, KH, KW, HO, WO](const Tensor& o) {
               const float* g = o.grad.data();
               const float* kd = kernel->values.data();
               const float* xd = input->values.data();
               if (input->needs_grad()) {
                   input->ensure_grad();
                   float* dx = input->grad.data();
                   // Each thread owns one (n, ci) input plane.
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(N) * C * H * W > 4096)
                   for (int n = 0; n < N; ++n) {
                       for (int ci = 0; ci < C; ++ci) {
                           float* dxp = dx + ((static_cast<int64_t>(n) * C + ci) * H) * W;
                           for (int oc = 0; oc < O; ++oc) {
                               const float* kp = kd + ((static_cast<int64_t>(oc) * C + ci) * KH) * KW;
                               const float* gp = g + ((static_cast<int64_t>(n) * O + oc) * HO) * WO;
                               for (int ho = 0; ho < HO; ++ho) {
                                   for (int wo = 0; wo < WO; ++wo) {
                                       const float gv = gp[ho * WO + wo];
                                       if (gv == 0.0f) continue;
                                       for (int kh = 0; kh < KH; ++kh) {
                                           const int hi = ho * stride + kh - padding;
                                           if (hi < 0 || hi >= H) continue;
                                           for (int kw = 0; kw < KW; ++kw) {
                                               const int wi = wo * stride + kw - padding;
                                               if (wi < 0 || wi >= W) continue;
                                               dxp[hi * W + wi] += kp[kh * KW + kw] * gv;
                                           }
                                       }
                                   }
                               }
                           }
                       }
                   }
               }
               if (kernel->needs_grad()) {
                   kernel->ensure_grad();
                   float* dk = kernel->grad.data();
                   // Each thread owns one output-channel slice of the kernel.
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(O) * C * KH * KW > 512)
                   for (int oc = 0; oc < O; ++oc) {
                       for (int ci = 0; ci < C; ++ci) {
                           float* dkp = dk + ((static_cast<int64_t>(oc) * C + ci) * KH) * KW;
                           for (int kh = 0; kh < KH; ++kh) {
                               for (int kw = 0; kw < KW; ++kw) {
                                   float acc = 0.0f;
                                   for (int n = 0; n < N; ++n) {
                                       const float* xp = xd + ((static_cast<int64_t>(n) * C + ci) * H) * W;
                                       const float* gp = g + ((static_cast<int64_t>(n) * O + oc) * HO) * WO;
                                       for (int ho = 0; ho < HO; ++ho) {
                                           const int hi = ho * stride + kh - padding;
                                           if (hi < 0 || hi >= H) continue;
                                           for (int wo = 0; wo < WO; ++wo) {
                                               const int wi = wo * stride + kw - padding;
                                               if (wi < 0 || wi >= W) continue;
                                               acc += xp[hi * W + wi] * gp[ho * WO + wo];
                                           }
                                       }
                                   }
                                   dkp[kh * KW + kw] += acc;
                               }
                           }
                       }
                   }
               }
               if (bias->needs_grad()) {
                   bias->ensure_grad();
                   float* db = bias->grad.data();
                   for (int oc = 0; oc < O; ++oc) {
                       float acc = 0.0f;
                       for (int n = 0; n < N; ++n) {
                           const float* gp = g + ((static_cast<int64_t>(n) * O + oc) * HO) * WO;
                           for (int i = 0; i < HO * WO; ++i) acc += gp[i];
                       }
                       db[oc] += acc;
                   }
               }
           });
    return out;
}

TensorPtr dense(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias) {
    require_rank(input, 2, "dense", "input");
    require_rank(weight, 2, "dense", "weight");
    require_rank(bias, 1, "dense", "bias");
    const int N = input->shape[0], F = input->shape[1];
    const int F2 = weight->shape[0], U = weight->shape[1];
    if (F != F2)
        throw DimensionError("dense: input features " + std::to_string(F) + " vs weight rows " + std::to_string(F2));
    if (bias->shape[0] != U)
        throw DimensionError("dense: bias length " + std::to_string(bias->shape[0]) + " vs units " + std::to_string(U));

    auto out = zeros({N, U});
    const float* xd = input->values.data();
    const float* wd = weight->values.data();
    const float* bd = bias->values.data();
    float* yd = out->values.data();

#pragma omp parallel for schedule(static) if (static_cast<int64_t>(N) * F * U > 16384)
    for (int n = 0; n < N; ++n) {
        const float* xp = xd + static_cast<int64_t>(n) * F;
        float* yp = yd + static_cast<int64_t>(n) * U;
        for (int u = 0; u < U; ++u) yp[u] = bd[u];
        for (int f = 0; f < F; ++f) {
            const float xv = xp[f];
            if (xv == 0.0f) continue;
            const float* wp = wd + static_cast<int64_t>(f) * U;
            for (int u = 0; u < U; ++u) yp[u] += xv * wp[u];
        }
    }
    check_finite(*out, "dense");

    record(out, OpKind::Dense, {input, weight, bias},
           [input, weight, bias, N, F, U](const Tensor& o) {
               const float* g = o.grad.data();
               const float* xd = input->values.data();
               const float* wd = weight->values.data();
               if (input->needs_grad()) {
                   input->ensure_grad();
                   float* dx = input->grad.data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(N) * F * U > 16384)
                   for (int n = 0; n < N; ++n) {
                       const float* gp = g + static_cast<int64_t>(n) * U;
                       float* dxp = dx + static_cast<int64_t>(n) * F;
                       for (int f = 0; f < F; ++f) {
                           const float* wp = wd + static_cast<int64_t>(f) * U;
                           float acc = 0.0f;
                           for (int u = 0; u < U; ++u) acc += wp[u] * gp[u];
                           dxp[f] += acc;
                       }
                   }
               }
               if (weight->needs_grad()) {
                   weight->ensure_grad();
                   float* dw = weight->grad.data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(N) * F * U > 16384)
                   for (int f = 0; f < F; ++f) {
                       float* dwp = dw + static_cast<int64_t>(f) * U;
                       for (int n = 0; n < N; ++n) {
                           const float xv = xd[static_cast<int64_t>(n) * F + f];
                           if (xv == 0.0f) continue;
                           const float* gp = g + static_cast<int64_t>(n) * U;
                           for (int u = 0; u < U; ++u) dwp[u] += xv * gp[u];
                       }
                   }
               }
               if (bias->needs_grad()) {
                   bias->ensure_grad();
                   float* db = bias->grad.data();
                   for (int u = 0; u < U; ++u) {
                       float acc = 0.0f;
                       for (int n = 0; n < N; ++n) acc += g[static_cast<int64_t>(n) * U + u];
                       db[u] += acc;
                   }
               }
           });
    return out;
}

TensorPtr pool_avg2d(const TensorPtr& input, int window, int stride) {
    require_rank(input, 4, "pool_avg2d", "input");
    if (window <= 0 || stride <= 0) throw InputError("pool_avg2d: window and stride must be positive");
    const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
    if (window > H || window > W)
        throw DimensionError("pool_avg2d: window " + std::to_string(window) + " exceeds spatial dims " +
                             shape_str(input->shape));
    const int HO = (H - window) / stride + 1;
    const int WO = (W - window) / stride + 1;

    auto out = zeros({N, C, HO, WO});
    const float inv = 1.0f / static_cast<float>(window * window);
    const float* xd = input->values.data();
    float* yd = out->values.data();

#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(N) * C * H * W > 16384)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float* xp = xd + ((static_cast<int64_t>(n) * C + c) * H) * W;
            float* yp = yd + ((static_cast<int64_t>(n) * C + c) * HO) * WO;
            for (int ho = 0; ho < HO; ++ho) {
                for (int wo = 0; wo < WO; ++wo) {
                    float acc = 0.0f;
                    for (int kh = 0; kh < window; ++kh)
                        for (int kw = 0; kw < window; ++kw)
                            acc += xp[(ho * stride + kh) * W + wo * stride + kw];
                    yp[ho * WO + wo] = acc * inv;
                }
            }
        }
    }
    check_finite(*out, "pool_avg2d");

    record(out, OpKind::PoolAvg2d, {input},
           [input, window, stride, N, C, H, W, HO, WO, inv](const Tensor& o) {
               if (!input->needs_grad()) return;
               input->ensure_grad();
               const float* g = o.grad.data();
               float* dx = input->grad.data();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(N) * C * H * W > 16384)
               for (int n = 0; n < N; ++n) {
                   for (int c = 0; c < C; ++c) {
                       const float* gp = g + ((static_cast<int64_t>(n) * C + c) * HO) * WO;
                       float* dxp = dx + ((static_cast<int64_t>(n) * C + c) * H) * W;
                       for (int ho = 0; ho < HO; ++ho) {
                           for (int wo = 0; wo < WO; ++wo) {
                               const float gv = gp[ho * WO + wo] * inv;
                               for (int kh = 0; kh < window; ++kh)
                                   for (int kw = 0; kw < window; ++kw)
                                       dxp[(ho * stride + kh) * W + wo * stride + kw] += gv;
                           }
                       }
                   }
               }
           });
    return out;
}

TensorPtr pool_global_avg(const TensorPtr& input) {
    require_rank(input, 4, "pool_global_avg", "input");
    const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
    auto out = zeros({N, C});
    const float inv = 1.0f / static_cast<float>(H * W);
    const float* xd = input->values.data();
    float* yd = out->values.data();
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float* xp = xd + ((static_cast<int64_t>(n) * C + c) * H) * W;
            float acc = 0.0f;
            for (int i = 0; i < H * W; ++i) acc += xp[i];
            yd[static_cast<int64_t>(n) * C + c] = acc * inv;
        }
    }
    check_finite(*out, "pool_global_avg");

    record(out, OpKind::PoolGlobalAvg, {input}, [input, N, C, H, W, inv](const Tensor& o) {
        if (!input->needs_grad()) return;
        input->ensure_grad();
        const float* g = o.grad.data();
        float* dx = input->grad.data();
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const float gv = g[static_cast<int64_t>(n) * C + c] * inv;
                float* dxp = dx + ((static_cast<int64_t>(n) * C + c) * H) * W;
                for (int i = 0; i < H * W; ++i) dxp[i] += gv;
            }
        }
    });
    return out;
}

TensorPtr relu(const TensorPtr& x) {
    auto out = clone_values(*x);
    for (auto& v : out->values) v = v > 0.0f ? v : 0.0f;
    record(out, OpKind::Relu, {x}, [x](const Tensor& o) {
        if (!x->needs_grad()) return;
        x->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
            if (x->values[i] > 0.0f) x->grad[i] += o.grad[i];
    });
    return out;
}

TensorPtr sigmoid(const TensorPtr& x) {
    auto out = clone_values(*x);
    for (auto& v : out->values) {
        // Branch on sign so exp never overflows.
        if (v >= 0.0f) {
            const float e = std::exp(-v);
            v = 1.0f / (1.0f + e);
        } else {
            const float e = std::exp(v);
            v = e / (1.0f + e);
        }
    }
    check_finite(*out, "sigmoid");
    record(out, OpKind::Sigmoid, {x}, [x, out_w = std::weak_ptr<Tensor>(out)](const Tensor& o) {
        if (!x->needs_grad()) return;
        x->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            const float s = o.values[i];
            x->grad[i] += o.grad[i] * s * (1.0f - s);
        }
    });
    return out;
}

TensorPtr softmax(const TensorPtr& x) {
    require_rank(x, 2, "softmax", "input");
    const int N = x->shape[0], K = x->shape[1];
    auto out = zeros({N, K});
    for (int n = 0; n < N; ++n) {
        const float* xp = x->values.data() + static_cast<int64_t>(n) * K;
        float* yp = out->values.data() + static_cast<int64_t>(n) * K;
        float mx = xp[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, xp[k]);
        float denom = 0.0f;
        for (int k = 0; k < K; ++k) {
            yp[k] = std::exp(xp[k] - mx);
            denom += yp[k];
        }
        for (int k = 0; k < K; ++k) yp[k] /= denom;
    }
    check_finite(*out, "softmax");
    record(out, OpKind::Softmax, {x}, [x, N, K](const Tensor& o) {
        if (!x->needs_grad()) return;
        x->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const float* p = o.values.data() + static_cast<int64_t>(n) * K;
            const float* g = o.grad.data() + static_cast<int64_t>(n) * K;
            float dot = 0.0f;
            for (int k = 0; k < K; ++k) dot += g[k] * p[k];
            float* dx = x->grad.data() + static_cast<int64_t>(n) * K;
            for (int k = 0; k < K; ++k) dx[k] += p[k] * (g[k] - dot);
        }
    });
    return out;
}

TensorPtr bce(const TensorPtr& prob, const TensorPtr& label) {
    require_rank(prob, 2, "bce", "prob");
    require_rank(label, 2, "bce", "label");
    if (prob->shape != label->shape || prob->shape[1] != 1)
        throw DimensionError("bce: prob and label must both be N x 1, got " + shape_str(prob->shape) + " and " +
                             shape_str(label->shape));
    const int N = prob->shape[0];
    for (int n = 0; n < N; ++n) {
        const float y = label->values[n];
        if (y != 0.0f && y != 1.0f)
            throw InputError("bce: label at row " + std::to_string(n) + " must be 0 or 1, got " + std::to_string(y));
    }
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const float p = std::clamp(prob->values[n], kProbEps, 1.0f - kProbEps);
        const float y = label->values[n];
        acc += y > 0.5f ? -std::log(p) : -std::log(1.0f - p);
    }
    auto out = make_tensor({1}, {static_cast<float>(acc / N)});
    check_finite(*out, "bce");
    record(out, OpKind::Bce, {prob, label}, [prob, label, N](const Tensor& o) {
        if (!prob->needs_grad()) return;
        prob->ensure_grad();
        const float g = o.grad[0] / static_cast<float>(N);
        for (int n = 0; n < N; ++n) {
            const float raw = prob->values[n];
            if (raw <= kProbEps || raw >= 1.0f - kProbEps) continue; // clamped region: flat
            const float y = label->values[n];
            prob->grad[n] += g * (y > 0.5f ? -1.0f / raw : 1.0f / (1.0f - raw));
        }
    });
    return out;
}

TensorPtr sparse_ce(const TensorPtr& prob, const std::vector<int>& labels) {
    require_rank(prob, 2, "sparse_ce", "prob");
    const int N = prob->shape[0], K = prob->shape[1];
    if (static_cast<int>(labels.size()) != N)
        throw DimensionError("sparse_ce: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) +
                             " rows");
    for (int n = 0; n < N; ++n)
        if (labels[n] < 0 || labels[n] >= K)
            throw InputError("sparse_ce: label " + std::to_string(labels[n]) + " at row " + std::to_string(n) +
                             " out of range [0," + std::to_string(K) + ")");
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const float p = std::clamp(prob->values[static_cast<int64_t>(n) * K + labels[n]], kProbEps, 1.0f - kProbEps);
        acc += -std::log(p);
    }
    auto out = make_tensor({1}, {static_cast<float>(acc / N)});
    check_finite(*out, "sparse_ce");
    record(out, OpKind::SparseCe, {prob}, [prob, labels, N, K](const Tensor& o) {
        if (!prob->needs_grad()) return;
        prob->ensure_grad();
        const float g = o.grad[0] / static_cast<float>(N);
        for (int n = 0; n < N; ++n) {
            const int64_t idx = static_cast<int64_t>(n) * K + labels[n];
            const float raw = prob->values[idx];
            if (raw <= kProbEps || raw >= 1.0f - kProbEps) continue;
            prob->grad[idx] += -g / raw;
        }
    });
    return out;
}

TensorPtr residual_add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw DimensionError("residual_add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = clone_values(*a);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] += b->values[i];
    check_finite(*out, "residual_add");
    record(out, OpKind::ResidualAdd, {a, b}, [a, b](const Tensor& o) {
        if (a->needs_grad()) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->needs_grad()) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i];
        }
    });
    return out;
}

TensorPtr concat_channels(const std::vector<TensorPtr>& xs) {
    if (xs.empty()) throw InputError("concat_channels: empty input list");
    for (const auto& x : xs) require_rank(x, 4, "concat_channels", "input");
    const int N = xs[0]->shape[0], H = xs[0]->shape[2], W = xs[0]->shape[3];
    int Ctot = 0;
    for (const auto& x : xs) {
        if (x->shape[0] != N || x->shape[2] != H || x->shape[3] != W)
            throw DimensionError("concat_channels: inputs must share N,H,W; got " + shape_str(xs[0]->shape) +
                                 " and " + shape_str(x->shape));
        Ctot += x->shape[1];
    }
    auto out = zeros({N, Ctot, H, W});
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        int64_t coff = 0;
        for (const auto& x : xs) {
            const int Cx = x->shape[1];
            std::copy_n(x->values.data() + static_cast<int64_t>(n) * Cx * plane, Cx * plane,
                        out->values.data() + (static_cast<int64_t>(n) * Ctot + coff) * plane);
            coff += Cx;
        }
    }
    record(out, OpKind::ConcatChannels, xs, [xs, N, Ctot, plane](const Tensor& o) {
        for (int n = 0; n < N; ++n) {
            int64_t coff = 0;
            for (const auto& x : xs) {
                const int Cx = x->shape[1];
                if (x->needs_grad()) {
                    x->ensure_grad();
                    const float* gp = o.grad.data() + (static_cast<int64_t>(n) * Ctot + coff) * plane;
                    float* dxp = x->grad.data() + static_cast<int64_t>(n) * Cx * plane;
                    for (int64_t i = 0; i < Cx * plane; ++i) dxp[i] += gp[i];
                }
                coff += Cx;
            }
        }
    });
    return out;
}

TensorPtr dropout(const TensorPtr& x, float rate, Rng& rng, bool training) {
    if (rate < 0.0f || rate >= 1.0f) throw InputError("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0f) {
        auto out = clone_values(*x);
        record(out, OpKind::Dropout, {x}, [x](const Tensor& o) {
            if (!x->needs_grad()) return;
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i];
        });
        return out;
    }
    const float keep = 1.0f - rate;
    const float inv_keep = 1.0f / keep;
    auto mask = std::make_shared<std::vector<uint8_t>>(x->values.size());
    auto out = clone_values(*x);
    for (size_t i = 0; i < out->values.size(); ++i) {
        const bool kept = rng.uniform() < keep;
        (*mask)[i] = kept ? 1 : 0;
        out->values[i] = kept ? out->values[i] * inv_keep : 0.0f;
    }
    record(out, OpKind::Dropout, {x}, [x, mask, inv_keep](const Tensor& o) {
        if (!x->needs_grad()) return;
        x->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
            if ((*mask)[i]) x->grad[i] += o.grad[i] * inv_keep;
    });
    return out;
}

TensorPtr flatten(const TensorPtr& x) {
    require_rank(x, 4, "flatten", "input");
    const int N = x->shape[0];
    const int F = x->shape[1] * x->shape[2] * x->shape[3];
    auto out = make_tensor({N, F}, x->values);
    record(out, OpKind::Flatten, {x}, [x](const Tensor& o) {
        if (!x->needs_grad()) return;
        x->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i];
    });
    return out;
}

TensorPtr scaled_sum(const TensorPtr& x, const std::vector<float>& weights) {
    if (weights.size() != x->values.size())
        throw DimensionError("scaled_sum: weight count " + std::to_string(weights.size()) + " vs tensor size " +
                             std::to_string(x->values.size()));
    const float inv = 1.0f / static_cast<float>(x->values.size());
    double acc = 0.0;
    for (size_t i = 0; i < x->values.size(); ++i) acc += static_cast<double>(x->values[i]) * weights[i];
    auto out = make_tensor({1}, {static_cast<float>(acc * inv)});
    record(out, OpKind::ScaledSum, {x}, [x, weights, inv](const Tensor& o) {
        if (!x->needs_grad()) return;
        x->ensure_grad();
        const float g = o.grad[0] * inv;
        for (size_t i = 0; i < weights.size(); ++i) x->grad[i] += g * weights[i];
    });
    return out;
}

} // namespace mstl
