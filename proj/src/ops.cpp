#include "gbi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace gbi {

namespace {

void check_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw Error(std::string(who) + ": undefined tensor");
}

bool is_scalar_like(const Tensor& t) { return t.numel() == 1; }

// Shape agreement for binary elementwise ops: equal, or one side scalar.
Shape binary_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() == b.shape()) return a.shape();
    if (is_scalar_like(a)) return b.shape();
    if (is_scalar_like(b)) return a.shape();
    throw Error(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

size_t idx_or_zero(size_t i, bool scalar) { return scalar ? 0 : i; }

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const char* who, const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfda, BwdB dfdb) {
    check_defined(a, who);
    check_defined(b, who);
    const Shape out_shape = binary_shape(a, b, who);
    const bool sa = is_scalar_like(a) && !(a.shape() == out_shape);
    const bool sb = is_scalar_like(b) && !(b.shape() == out_shape);
    const size_t n = static_cast<size_t>(shape_numel(out_shape));

    std::vector<float> out(n);
    auto av = a.data();
    auto bv = b.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[idx_or_zero(i, sa)], bv[idx_or_zero(i, sb)]);

    const bool rg = grad_enabled({&a, &b});
    Tensor result = Tensor::from(out_shape, std::move(out), rg);
    if (rg) {
        Tensor ac = a, bc = b, rc = result;
        Tape::active()->record([ac, bc, rc, sa, sb, dfda, dfdb]() mutable {
            auto g = rc.grad();
            auto av2 = ac.data();
            auto bv2 = bc.data();
            if (ac.requires_grad()) {
                auto ga = ac.grad();
                for (size_t i = 0; i < g.size(); ++i)
                    ga[idx_or_zero(i, sa)] += g[i] * dfda(av2[idx_or_zero(i, sa)], bv2[idx_or_zero(i, sb)]);
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                for (size_t i = 0; i < g.size(); ++i)
                    gb[idx_or_zero(i, sb)] += g[i] * dfdb(av2[idx_or_zero(i, sa)], bv2[idx_or_zero(i, sb)]);
            }
        });
    }
    return result;
}

// Unary op where the derivative is a function of the output value.
template <typename Fwd, typename BwdFromOut>
Tensor unary_from_output(const char* who, const Tensor& x, Fwd fwd, BwdFromOut dfdy) {
    check_defined(x, who);
    const size_t n = static_cast<size_t>(x.numel());
    std::vector<float> out(n);
    auto xv = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);

    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from(x.shape(), std::move(out), rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc, dfdy]() mutable {
            if (!xc.requires_grad()) return;
            auto g = rc.grad();
            auto y = rc.data();
            auto gx = xc.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdy(y[i]);
        });
    }
    return result;
}

// Unary op whose derivative needs the input value.
template <typename Fwd, typename BwdFromIn>
Tensor unary_from_input(const char* who, const Tensor& x, Fwd fwd, BwdFromIn dfdx) {
    check_defined(x, who);
    const size_t n = static_cast<size_t>(x.numel());
    std::vector<float> out(n);
    auto xv = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);

    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from(x.shape(), std::move(out), rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc, dfdx]() mutable {
            if (!xc.requires_grad()) return;
            auto g = rc.grad();
            auto xv2 = xc.data();
            auto gx = xc.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv2[i]);
        });
    }
    return result;
}

float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        const float e = std::exp(-x);
        return 1.0f / (1.0f + e);
    }
    const float e = std::exp(x);
    return e / (1.0f + e);
}

float stable_softplus(float x) {
    return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x)));
}

struct AxisSpan {
    size_t outer, k, inner;
};

AxisSpan axis_span(const Tensor& x, int axis, const char* who) {
    if (axis < 0 || axis >= x.rank())
        throw Error(std::string(who) + ": axis " + std::to_string(axis) + " out of range for " +
                    shape_str(x.shape()));
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<size_t>(x.dim(i));
    return {outer, static_cast<size_t>(x.dim(axis)), inner};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](float x, float y) { return x + y; },
        [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](float x, float y) { return x - y; },
        [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](float x, float y) { return x * y; },
        [](float, float y) { return y; }, [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](float x, float y) { return x / y; },
        [](float, float y) { return 1.0f / y; },
        [](float x, float y) { return -x / (y * y); });
}

Tensor relu(const Tensor& x) {
    return unary_from_input(
        "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_from_output(
        "sigmoid", x, [](float v) { return stable_sigmoid(v); },
        [](float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_from_output(
        "tanh", x, [](float v) { return std::tanh(v); },
        [](float y) { return 1.0f - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary_from_output(
        "exp", x, [](float v) { return std::exp(v); }, [](float y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_from_input(
        "log", x, [](float v) { return std::log(v); }, [](float v) { return 1.0f / v; });
}

Tensor softplus(const Tensor& x) {
    return unary_from_input(
        "softplus", x, [](float v) { return stable_softplus(v); },
        [](float v) { return stable_sigmoid(v); });
}

Tensor scale(const Tensor& x, float factor) {
    return unary_from_input(
        "scale", x, [factor](float v) { return v * factor; },
        [factor](float) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2)
        throw Error("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw Error("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));

    std::vector<float> out(static_cast<size_t>(m) * n);
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> acc(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int p = 0; p < k; ++p) {
            const float av_ip = av[static_cast<size_t>(i) * k + p];
            if (av_ip == 0.0f) continue;
            const size_t brow = static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += static_cast<double>(av_ip) * bv[brow + j];
        }
        const size_t orow = static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[orow + j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }

    const bool rg = grad_enabled({&a, &b});
    Tensor result = Tensor::from({m, n}, std::move(out), rg);
    if (rg) {
        Tensor ac = a, bc = b, rc = result;
        Tape::active()->record([ac, bc, rc, m, k, n]() mutable {
            auto g = rc.grad();
            if (ac.requires_grad()) {  // dA = G * B^T
                auto ga = ac.grad();
                auto bv2 = bc.data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        float acc = 0.0f;
                        const size_t grow = static_cast<size_t>(i) * n;
                        const size_t brow = static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) acc += g[grow + j] * bv2[brow + j];
                        ga[static_cast<size_t>(i) * k + p] += acc;
                    }
            }
            if (bc.requires_grad()) {  // dB = A^T * G
                auto gb = bc.grad();
                auto av2 = ac.data();
                for (int i = 0; i < m; ++i) {
                    const size_t arow = static_cast<size_t>(i) * k;
                    const size_t grow = static_cast<size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const float av_ip = av2[arow + p];
                        if (av_ip == 0.0f) continue;
                        const size_t brow = static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) gb[brow + j] += av_ip * g[grow + j];
                    }
                }
            }
        });
    }
    return result;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_defined(x, "linear");
    check_defined(w, "linear");
    check_defined(b, "linear");
    if (w.rank() != 2) throw Error("linear: weight must be rank-2, got " + shape_str(w.shape()));
    const int in = w.dim(0), out_dim = w.dim(1);
    const bool vec = x.rank() == 1;
    const int rows = vec ? 1 : x.dim(0);
    const int cols = vec ? x.dim(0) : x.dim(1);
    if (x.rank() > 2 || cols != in)
        throw Error("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                    shape_str(w.shape()));
    if (b.numel() != out_dim)
        throw Error("linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                    shape_str(w.shape()));

    std::vector<float> out(static_cast<size_t>(rows) * out_dim);
    auto xv = x.data();
    auto wv = w.data();
    auto bv = b.data();
    std::vector<double> acc(static_cast<size_t>(out_dim));
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < out_dim; ++j) acc[static_cast<size_t>(j)] = bv[j];
        const size_t xrow = static_cast<size_t>(i) * in;
        for (int p = 0; p < in; ++p) {
            const float xv_ip = xv[xrow + p];
            if (xv_ip == 0.0f) continue;
            const size_t wrow = static_cast<size_t>(p) * out_dim;
            for (int j = 0; j < out_dim; ++j) acc[static_cast<size_t>(j)] += static_cast<double>(xv_ip) * wv[wrow + j];
        }
        const size_t orow = static_cast<size_t>(i) * out_dim;
        for (int j = 0; j < out_dim; ++j) out[orow + j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }

    const bool rg = grad_enabled({&x, &w, &b});
    Shape out_shape = vec ? Shape{out_dim} : Shape{rows, out_dim};
    Tensor result = Tensor::from(std::move(out_shape), std::move(out), rg);
    if (rg) {
        Tensor xc = x, wc = w, bc = b, rc = result;
        Tape::active()->record([xc, wc, bc, rc, rows, in, out_dim]() mutable {
            auto g = rc.grad();
            if (xc.requires_grad()) {
                auto gx = xc.grad();
                auto wv2 = wc.data();
                for (int i = 0; i < rows; ++i)
                    for (int p = 0; p < in; ++p) {
                        float acc = 0.0f;
                        const size_t grow = static_cast<size_t>(i) * out_dim;
                        const size_t wrow = static_cast<size_t>(p) * out_dim;
                        for (int j = 0; j < out_dim; ++j) acc += g[grow + j] * wv2[wrow + j];
                        gx[static_cast<size_t>(i) * in + p] += acc;
                    }
            }
            if (wc.requires_grad()) {
                auto gw = wc.grad();
                auto xv2 = xc.data();
                for (int i = 0; i < rows; ++i) {
                    const size_t xrow = static_cast<size_t>(i) * in;
                    const size_t grow = static_cast<size_t>(i) * out_dim;
                    for (int p = 0; p < in; ++p) {
                        const float xv_ip = xv2[xrow + p];
                        if (xv_ip == 0.0f) continue;
                        const size_t wrow = static_cast<size_t>(p) * out_dim;
                        for (int j = 0; j < out_dim; ++j) gw[wrow + j] += xv_ip * g[grow + j];
                    }
                }
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                for (int i = 0; i < rows; ++i) {
                    const size_t grow = static_cast<size_t>(i) * out_dim;
                    for (int j = 0; j < out_dim; ++j) gb[j] += g[grow + j];
                }
            }
        });
    }
    return result;
}

Tensor softmax(const Tensor& x, int axis) {
    check_defined(x, "softmax");
    const AxisSpan sp = axis_span(x, axis, "softmax");
    std::vector<float> out(static_cast<size_t>(x.numel()));
    auto xv = x.data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
            const size_t base = o * sp.k * sp.inner + in;
            double mx = xv[base];
            for (size_t j = 1; j < sp.k; ++j) mx = std::max(mx, static_cast<double>(xv[base + j * sp.inner]));
            double denom = 0.0;
            std::vector<double> e(sp.k);
            for (size_t j = 0; j < sp.k; ++j) {
                e[j] = std::exp(static_cast<double>(xv[base + j * sp.inner]) - mx);
                denom += e[j];
            }
            for (size_t j = 0; j < sp.k; ++j)
                out[base + j * sp.inner] = static_cast<float>(e[j] / denom);
        }

    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from(x.shape(), std::move(out), rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc, sp]() mutable {
            if (!xc.requires_grad()) return;
            auto g = rc.grad();
            auto y = rc.data();
            auto gx = xc.grad();
            for (size_t o = 0; o < sp.outer; ++o)
                for (size_t in = 0; in < sp.inner; ++in) {
                    const size_t base = o * sp.k * sp.inner + in;
                    float dot = 0.0f;
                    for (size_t j = 0; j < sp.k; ++j) {
                        const size_t i = base + j * sp.inner;
                        dot += g[i] * y[i];
                    }
                    for (size_t j = 0; j < sp.k; ++j) {
                        const size_t i = base + j * sp.inner;
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
        });
    }
    return result;
}

Tensor log_softmax(const Tensor& x, int axis) {
    check_defined(x, "log_softmax");
    const AxisSpan sp = axis_span(x, axis, "log_softmax");
    std::vector<float> out(static_cast<size_t>(x.numel()));
    auto xv = x.data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
            const size_t base = o * sp.k * sp.inner + in;
            double mx = xv[base];
            for (size_t j = 1; j < sp.k; ++j) mx = std::max(mx, static_cast<double>(xv[base + j * sp.inner]));
            double denom = 0.0;
            for (size_t j = 0; j < sp.k; ++j)
                denom += std::exp(static_cast<double>(xv[base + j * sp.inner]) - mx);
            const double log_denom = std::log(denom) + mx;
            for (size_t j = 0; j < sp.k; ++j) {
                const size_t i = base + j * sp.inner;
                out[i] = static_cast<float>(xv[i] - log_denom);
            }
        }

    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from(x.shape(), std::move(out), rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc, sp]() mutable {
            if (!xc.requires_grad()) return;
            auto g = rc.grad();
            auto y = rc.data();
            auto gx = xc.grad();
            for (size_t o = 0; o < sp.outer; ++o)
                for (size_t in = 0; in < sp.inner; ++in) {
                    const size_t base = o * sp.k * sp.inner + in;
                    float gsum = 0.0f;
                    for (size_t j = 0; j < sp.k; ++j) gsum += g[base + j * sp.inner];
                    for (size_t j = 0; j < sp.k; ++j) {
                        const size_t i = base + j * sp.inner;
                        gx[i] += g[i] - std::exp(y[i]) * gsum;
                    }
                }
        });
    }
    return result;
}

namespace {

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
                     const char* who) {
    check_defined(x, who);
    check_defined(w, who);
    check_defined(bias, who);
    if (x.rank() != 4 || w.rank() != 4)
        throw Error(std::string(who) + ": expects rank-4 input and weight, got " +
                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (stride < 1 || padding < 0)
        throw Error(std::string(who) + ": invalid stride/padding " + std::to_string(stride) + "/" +
                    std::to_string(padding));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    check_conv_args(x, w, bias, stride, padding, "conv2d");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C)
        throw Error("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs weight " +
                    shape_str(w.shape()));
    if (bias.numel() != O) throw Error("conv2d: bias size must equal output channels");
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    if (H + 2 * padding < kh || W + 2 * padding < kw || Ho < 1 || Wo < 1)
        throw Error("conv2d: kernel " + shape_str(w.shape()) + " too large for padded input " +
                    shape_str(x.shape()));

    std::vector<float> out(static_cast<size_t>(N) * O * Ho * Wo);
    auto xv = x.data();
    auto wv = w.data();
    auto bv = bias.data();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const size_t obase = (static_cast<size_t>(n) * O + o) * Ho * Wo;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = bv[o];
                    for (int c = 0; c < C; ++c) {
                        const size_t xbase = (static_cast<size_t>(n) * C + c) * H * W;
                        const size_t wbase = (static_cast<size_t>(o) * C + c) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            const int ih = oh * stride - padding + r;
                            if (ih < 0 || ih >= H) continue;
                            for (int s = 0; s < kw; ++s) {
                                const int iw = ow * stride - padding + s;
                                if (iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(xv[xbase + static_cast<size_t>(ih) * W + iw]) *
                                       wv[wbase + static_cast<size_t>(r) * kw + s];
                            }
                        }
                    }
                    out[obase + static_cast<size_t>(oh) * Wo + ow] = static_cast<float>(acc);
                }
        }

    const bool rg = grad_enabled({&x, &w, &bias});
    Tensor result = Tensor::from({N, O, Ho, Wo}, std::move(out), rg);
    if (rg) {
        Tensor xc = x, wc = w, bc = bias, rc = result;
        Tape::active()->record([xc, wc, bc, rc, N, C, H, W, O, kh, kw, Ho, Wo, stride, padding]() mutable {
            auto g = rc.grad();
            auto xv2 = xc.data();
            auto wv2 = wc.data();
            const bool want_dx = xc.requires_grad();
            const bool want_dw = wc.requires_grad();
            const bool want_db = bc.requires_grad();
            auto gx = want_dx ? xc.grad() : std::span<float>{};
            auto gw = want_dw ? wc.grad() : std::span<float>{};
            auto gb = want_db ? bc.grad() : std::span<float>{};
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) {
                    const size_t obase = (static_cast<size_t>(n) * O + o) * Ho * Wo;
                    for (int oh = 0; oh < Ho; ++oh)
                        for (int ow = 0; ow < Wo; ++ow) {
                            const float gv = g[obase + static_cast<size_t>(oh) * Wo + ow];
                            if (gv == 0.0f) continue;
                            if (want_db) gb[o] += gv;
                            for (int c = 0; c < C; ++c) {
                                const size_t xbase = (static_cast<size_t>(n) * C + c) * H * W;
                                const size_t wbase = (static_cast<size_t>(o) * C + c) * kh * kw;
                                for (int r = 0; r < kh; ++r) {
                                    const int ih = oh * stride - padding + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int s = 0; s < kw; ++s) {
                                        const int iw = ow * stride - padding + s;
                                        if (iw < 0 || iw >= W) continue;
                                        const size_t xi = xbase + static_cast<size_t>(ih) * W + iw;
                                        const size_t wi = wbase + static_cast<size_t>(r) * kw + s;
                                        if (want_dx) gx[xi] += gv * wv2[wi];
                                        if (want_dw) gw[wi] += gv * xv2[xi];
                                    }
                                }
                            }
                        }
                }
        });
    }
    return result;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int padding, int output_padding) {
    check_conv_args(x, w, bias, stride, padding, "conv2d_transpose");
    if (output_padding < 0 || output_padding >= stride)
        throw Error("conv2d_transpose: output_padding must lie in [0, stride)");
    const int N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(0) != I)
        throw Error("conv2d_transpose: channel mismatch, input " + shape_str(x.shape()) +
                    " vs weight " + shape_str(w.shape()));
    if (bias.numel() != O) throw Error("conv2d_transpose: bias size must equal output channels");
    const int Ho = (H - 1) * stride - 2 * padding + kh + output_padding;
    const int Wo = (W - 1) * stride - 2 * padding + kw + output_padding;
    if (Ho < 1 || Wo < 1)
        throw Error("conv2d_transpose: output collapses for input " + shape_str(x.shape()));

    const size_t out_numel = static_cast<size_t>(N) * O * Ho * Wo;
    std::vector<double> acc(out_numel);
    auto xv = x.data();
    auto wv = w.data();
    auto bv = bias.data();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const size_t obase = (static_cast<size_t>(n) * O + o) * Ho * Wo;
            for (size_t i = 0; i < static_cast<size_t>(Ho) * Wo; ++i) acc[obase + i] = bv[o];
        }
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < I; ++i) {
            const size_t xbase = (static_cast<size_t>(n) * I + i) * H * W;
            for (int ih = 0; ih < H; ++ih)
                for (int iw = 0; iw < W; ++iw) {
                    const float v = xv[xbase + static_cast<size_t>(ih) * W + iw];
                    if (v == 0.0f) continue;
                    for (int o = 0; o < O; ++o) {
                        const size_t obase = (static_cast<size_t>(n) * O + o) * Ho * Wo;
                        const size_t wbase = (static_cast<size_t>(i) * O + o) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            const int oh = ih * stride - padding + r;
                            if (oh < 0 || oh >= Ho) continue;
                            for (int s = 0; s < kw; ++s) {
                                const int ow = iw * stride - padding + s;
                                if (ow < 0 || ow >= Wo) continue;
                                acc[obase + static_cast<size_t>(oh) * Wo + ow] +=
                                    static_cast<double>(v) * wv[wbase + static_cast<size_t>(r) * kw + s];
                            }
                        }
                    }
                }
        }
    std::vector<float> out(out_numel);
    for (size_t i = 0; i < out_numel; ++i) out[i] = static_cast<float>(acc[i]);

    const bool rg = grad_enabled({&x, &w, &bias});
    Tensor result = Tensor::from({N, O, Ho, Wo}, std::move(out), rg);
    if (rg) {
        Tensor xc = x, wc = w, bc = bias, rc = result;
        Tape::active()->record([xc, wc, bc, rc, N, I, H, W, O, kh, kw, Ho, Wo, stride, padding]() mutable {
            auto g = rc.grad();
            auto xv2 = xc.data();
            auto wv2 = wc.data();
            const bool want_dx = xc.requires_grad();
            const bool want_dw = wc.requires_grad();
            const bool want_db = bc.requires_grad();
            auto gx = want_dx ? xc.grad() : std::span<float>{};
            auto gw = want_dw ? wc.grad() : std::span<float>{};
            auto gb = want_db ? bc.grad() : std::span<float>{};
            if (want_db) {
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < O; ++o) {
                        const size_t obase = (static_cast<size_t>(n) * O + o) * Ho * Wo;
                        for (size_t i = 0; i < static_cast<size_t>(Ho) * Wo; ++i) gb[o] += g[obase + i];
                    }
            }
            if (!want_dx && !want_dw) return;
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < I; ++i) {
                    const size_t xbase = (static_cast<size_t>(n) * I + i) * H * W;
                    for (int ih = 0; ih < H; ++ih)
                        for (int iw = 0; iw < W; ++iw) {
                            const size_t xi = xbase + static_cast<size_t>(ih) * W + iw;
                            float dx_acc = 0.0f;
                            for (int o = 0; o < O; ++o) {
                                const size_t obase = (static_cast<size_t>(n) * O + o) * Ho * Wo;
                                const size_t wbase = (static_cast<size_t>(i) * O + o) * kh * kw;
                                for (int r = 0; r < kh; ++r) {
                                    const int oh = ih * stride - padding + r;
                                    if (oh < 0 || oh >= Ho) continue;
                                    for (int s = 0; s < kw; ++s) {
                                        const int ow = iw * stride - padding + s;
                                        if (ow < 0 || ow >= Wo) continue;
                                        const float gv = g[obase + static_cast<size_t>(oh) * Wo + ow];
                                        const size_t wi = wbase + static_cast<size_t>(r) * kw + s;
                                        dx_acc += gv * wv2[wi];
                                        if (want_dw) gw[wi] += gv * xv2[xi];
                                    }
                                }
                            }
                            if (want_dx) gx[xi] += dx_acc;
                        }
                }
        });
    }
    return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw Error("concat: no inputs");
    for (const Tensor& p : parts) check_defined(p, "concat");
    const Tensor& first = parts.front();
    if (axis < 0 || axis >= first.rank()) throw Error("concat: axis out of range");
    Shape out_shape = first.shape();
    int total_axis = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank()) throw Error("concat: rank mismatch");
        for (int d = 0; d < first.rank(); ++d)
            if (d != axis && p.dim(d) != first.dim(d))
                throw Error("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                            shape_str(first.shape()));
        total_axis += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total_axis;

    size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(first.dim(d));
    for (int d = axis + 1; d < first.rank(); ++d) inner *= static_cast<size_t>(first.dim(d));

    std::vector<float> out(static_cast<size_t>(shape_numel(out_shape)));
    const size_t out_row = static_cast<size_t>(total_axis) * inner;
    size_t offset = 0;
    for (const Tensor& p : parts) {
        const size_t chunk = static_cast<size_t>(p.dim(axis)) * inner;
        auto pv = p.data();
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + o * out_row + offset);
        offset += chunk;
    }

    bool any_rg = false;
    if (Tape::active())
        for (const Tensor& p : parts)
            if (p.requires_grad()) any_rg = true;
    Tensor result = Tensor::from(std::move(out_shape), std::move(out), any_rg);
    if (any_rg) {
        std::vector<Tensor> pc = parts;
        Tensor rc = result;
        Tape::active()->record([pc, rc, outer, inner, out_row, axis]() mutable {
            auto g = rc.grad();
            size_t offset2 = 0;
            for (Tensor& p : pc) {
                const size_t chunk = static_cast<size_t>(p.dim(axis)) * inner;
                if (p.requires_grad()) {
                    auto gp = p.grad();
                    for (size_t o = 0; o < outer; ++o)
                        for (size_t i = 0; i < chunk; ++i)
                            gp[o * chunk + i] += g[o * out_row + offset2 + i];
                }
                offset2 += chunk;
            }
        });
    }
    return result;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    check_defined(x, "slice");
    if (axis < 0 || axis >= x.rank()) throw Error("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw Error("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                    ") out of bounds for axis size " + std::to_string(x.dim(axis)));
    size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(x.dim(d));
    for (int d = axis + 1; d < x.rank(); ++d) inner *= static_cast<size_t>(x.dim(d));
    const size_t in_row = static_cast<size_t>(x.dim(axis)) * inner;
    const size_t chunk = static_cast<size_t>(len) * inner;

    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    std::vector<float> out(outer * chunk);
    auto xv = x.data();
    for (size_t o = 0; o < outer; ++o)
        std::copy_n(xv.begin() + o * in_row + static_cast<size_t>(start) * inner, chunk,
                    out.begin() + o * chunk);

    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from(std::move(out_shape), std::move(out), rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc, outer, inner, in_row, chunk, start]() mutable {
            if (!xc.requires_grad()) return;
            auto g = rc.grad();
            auto gx = xc.grad();
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < chunk; ++i)
                    gx[o * in_row + static_cast<size_t>(start) * inner + i] += g[o * chunk + i];
        });
    }
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    if (shape_numel(shape) != x.numel())
        throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()), rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc]() mutable {
            if (!xc.requires_grad()) return;
            auto g = rc.grad();
            auto gx = xc.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return result;
}

Tensor sum(const Tensor& x) {
    check_defined(x, "sum");
    auto xv = x.data();
    double acc = 0.0;
    for (float v : xv) acc += v;
    const bool rg = grad_enabled({&x});
    Tensor result = Tensor::from({1}, {static_cast<float>(acc)}, rg);
    if (rg) {
        Tensor xc = x, rc = result;
        Tape::active()->record([xc, rc]() mutable {
            if (!xc.requires_grad()) return;
            const float g = rc.grad()[0];
            auto gx = xc.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return result;
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_defined(pred, "mse_loss");
    check_defined(target, "mse_loss");
    if (pred.shape() != target.shape())
        throw Error("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                    shape_str(target.shape()));
    const size_t n = static_cast<size_t>(pred.numel());
    auto pv = pred.data();
    auto tv = target.data();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pv[i]) - tv[i];
        acc += d * d;
    }
    const bool rg = grad_enabled({&pred, &target});
    Tensor result = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(n))}, rg);
    if (rg) {
        Tensor pc = pred, tc = target, rc = result;
        Tape::active()->record([pc, tc, rc, n]() mutable {
            const float g = rc.grad()[0];
            auto pv2 = pc.data();
            auto tv2 = tc.data();
            const float k = 2.0f * g / static_cast<float>(n);
            if (pc.requires_grad()) {
                auto gp = pc.grad();
                for (size_t i = 0; i < n; ++i) gp[i] += k * (pv2[i] - tv2[i]);
            }
            if (tc.requires_grad()) {
                auto gt = tc.grad();
                for (size_t i = 0; i < n; ++i) gt[i] -= k * (pv2[i] - tv2[i]);
            }
        });
    }
    return result;
}

Tensor gaussian_nll_loss(const Tensor& pred, const Tensor& sigma, const Tensor& target) {
    check_defined(pred, "gaussian_nll_loss");
    check_defined(sigma, "gaussian_nll_loss");
    check_defined(target, "gaussian_nll_loss");
    if (pred.shape() != target.shape())
        throw Error("gaussian_nll_loss: pred/target shape mismatch " + shape_str(pred.shape()) +
                    " vs " + shape_str(target.shape()));
    const bool sigma_scalar = sigma.numel() == 1;
    if (!sigma_scalar && sigma.shape() != pred.shape())
        throw Error("gaussian_nll_loss: sigma shape " + shape_str(sigma.shape()) +
                    " incompatible with pred " + shape_str(pred.shape()));
    for (float s : sigma.data())
        if (!(s > 0.0f)) throw Error("gaussian_nll_loss: sigma must be strictly positive");

    const size_t n = static_cast<size_t>(pred.numel());
    auto pv = pred.data();
    auto sv = sigma.data();
    auto tv = target.data();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pv[i]) - tv[i];
        const double s = sv[sigma_scalar ? 0 : i];
        acc += d * d / (2.0 * s * s) + std::log(s);
    }
    const bool rg = grad_enabled({&pred, &sigma, &target});
    Tensor result = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(n))}, rg);
    if (rg) {
        Tensor pc = pred, sc = sigma, tc = target, rc = result;
        Tape::active()->record([pc, sc, tc, rc, n, sigma_scalar]() mutable {
            const float g = rc.grad()[0];
            auto pv2 = pc.data();
            auto sv2 = sc.data();
            auto tv2 = tc.data();
            const float inv_n = 1.0f / static_cast<float>(n);
            for (size_t i = 0; i < n; ++i) {
                const float d = pv2[i] - tv2[i];
                const float s = sv2[sigma_scalar ? 0 : i];
                const float dp = g * inv_n * d / (s * s);
                if (pc.requires_grad()) pc.grad()[i] += dp;
                if (tc.requires_grad()) tc.grad()[i] -= dp;
                if (sc.requires_grad())
                    sc.grad()[sigma_scalar ? 0 : i] += g * inv_n * (1.0f / s - d * d / (s * s * s));
            }
        });
    }
    return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_defined(logits, "cross_entropy");
    if (logits.rank() != 2)
        throw Error("cross_entropy: logits must be rank-2, got " + shape_str(logits.shape()));
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(N) + " rows");
    for (int y : labels)
        if (y < 0 || y >= C) throw Error("cross_entropy: label " + std::to_string(y) + " out of range");

    auto lv = logits.data();
    std::vector<float> probs(static_cast<size_t>(N) * C);
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        const size_t row = static_cast<size_t>(i) * C;
        float mx = lv[row];
        for (int j = 1; j < C; ++j) mx = std::max(mx, lv[row + j]);
        float denom = 0.0f;
        for (int j = 0; j < C; ++j) {
            probs[row + j] = std::exp(lv[row + j] - mx);
            denom += probs[row + j];
        }
        for (int j = 0; j < C; ++j) probs[row + j] /= denom;
        acc -= static_cast<double>(lv[row + labels[i]]) - mx - std::log(denom);
    }
    const bool rg = grad_enabled({&logits});
    Tensor result = Tensor::from({1}, {static_cast<float>(acc / N)}, rg);
    if (rg) {
        Tensor lc = logits, rc = result;
        std::vector<int> ls(labels.begin(), labels.end());
        Tape::active()->record([lc, rc, probs = std::move(probs), ls = std::move(ls), N, C]() mutable {
            if (!lc.requires_grad()) return;
            const float g = rc.grad()[0] / static_cast<float>(N);
            auto gl = lc.grad();
            for (int i = 0; i < N; ++i) {
                const size_t row = static_cast<size_t>(i) * C;
                for (int j = 0; j < C; ++j)
                    gl[row + j] += g * (probs[row + j] - (j == ls[static_cast<size_t>(i)] ? 1.0f : 0.0f));
            }
        });
    }
    return result;
}

void Sgd::step(std::span<Tensor> params) {
    for (Tensor& p : params) {
        if (!p.requires_grad()) continue;
        auto data = p.mutable_data();
        auto g = p.grad();
        for (size_t i = 0; i < data.size(); ++i) data[i] -= lr_ * g[i];
        p.zero_grad();
    }
}

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float eps,
           float weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
}

void Adam::step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.requires_grad()) continue;
        auto data = p.mutable_data();
        auto g = p.grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < data.size(); ++i) {
            const float gi = g[i] + weight_decay_ * data[i];
            m[i] = beta1_ * m[i] + (1.0f - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0f - beta2_) * gi * gi;
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        p.zero_grad();
    }
}

}  // namespace gbi
