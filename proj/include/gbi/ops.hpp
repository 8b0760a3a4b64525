#pragma once

#include <span>
#include <vector>

#include "gbi/tensor.hpp"

namespace gbi {

// Elementwise binary ops. Shapes must match, or one operand may be a
// single-element tensor, which broadcasts as a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// Elementwise unary ops.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor scale(const Tensor& x, float factor);

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x [n x in] (or rank-1 [in]) * w [in x out] + b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Numerically stabilized along `axis` (max subtraction).
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// x [N x C x H x W], w [O x C x kh x kw], bias [O].
// Output spatial size floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

// Inverse shape map of conv2d. w [I x O x kh x kw], bias [O].
// Output spatial size (H - 1)*stride - 2*padding + kh + output_padding.
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int padding, int output_padding = 0);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Losses. mse is the mean squared error over all elements. gaussian_nll is
// mean((pred - target)^2 / (2 sigma^2) + log sigma), constants dropped;
// sigma entries must be strictly positive.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor gaussian_nll_loss(const Tensor& pred, const Tensor& sigma, const Tensor& target);

// Mean cross-entropy of logits [N x C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Plain gradient step, grads consumed (zeroed) after the update.
class Sgd {
public:
    explicit Sgd(float lr) : lr_(lr) {}
    void step(std::span<Tensor> params);

private:
    float lr_;
};

// Bias-corrected Adam. weight_decay is L2 added to the gradient before the
// moment updates. Grads consumed after the update.
class Adam {
public:
    Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
         float eps = 1e-8f, float weight_decay = 0.0f);
    void step();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    float lr_, beta1_, beta2_, eps_, weight_decay_;
    int t_ = 0;
};

}  // namespace gbi
