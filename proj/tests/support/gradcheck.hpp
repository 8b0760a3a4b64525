#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gbi/ops.hpp"
#include "gbi/rng.hpp"
#include "gbi/tensor.hpp"

namespace gbi::testing {

// Central-difference gradient oracle. make_out rebuilds the op output (any
// shape) from the current parameter contents. The output is reduced to a
// scalar with a fixed random projection; the probe side of the quotient
// accumulates that projection in double so the check is not limited by
// float32 rounding of a large loss value.
struct GradCheckReport {
    float max_rel_error = 0.0f;
    int checked = 0;
};

inline GradCheckReport check_gradients(std::vector<Tensor> params,
                                       const std::function<Tensor()>& make_out,
                                       uint64_t weight_seed = 1234, float h = 1e-3f,
                                       bool spread_weights = false) {
    std::vector<float> weights;
    {
        Tensor probe = make_out();
        Rng wrng(weight_seed);
        weights.resize(static_cast<size_t>(probe.numel()));
        for (size_t i = 0; i < weights.size(); ++i) {
            // spread mode alternates strong/weak weights so coupled ops
            // (softmax rows) keep an O(1) gradient for the probe to resolve
            const float base = spread_weights ? (i % 2 ? 1.75f : 0.25f) : 1.0f;
            weights[i] = base * static_cast<float>(wrng.uniform(spread_weights ? 0.9 : 0.5,
                                                                spread_weights ? 1.1 : 1.5));
        }
        if (weights.size() == 1) weights[0] = 1.0f;
    }
    auto project = [&weights](const Tensor& t) {
        double acc = 0.0;
        auto v = t.data();
        for (size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(weights[i]) * v[i];
        return acc;
    };

    for (Tensor& p : params) p.zero_grad();
    {
        Tape tape;
        Tensor out = make_out();
        Tensor loss = out.numel() == 1
                          ? out
                          : sum(mul(out, Tensor::from(out.shape(), weights)));
        tape.backward(loss);
    }

    GradCheckReport report;
    for (Tensor& p : params) {
        auto data = p.mutable_data();
        auto grad = p.grad();
        // infinity-norm relative error of the whole gradient vector: robust
        // where single components cross zero
        float max_abs_diff = 0.0f;
        float fd_scale = 0.0f;
        for (size_t i = 0; i < data.size(); ++i) {
            const float saved = data[i];
            data[i] = saved + h;
            const double up = project(make_out());
            data[i] = saved - h;
            const double down = project(make_out());
            data[i] = saved;
            const float fd = static_cast<float>((up - down) / (2.0 * h));
            max_abs_diff = std::max(max_abs_diff, std::fabs(grad[i] - fd));
            fd_scale = std::max(fd_scale, std::fabs(fd));
            ++report.checked;
        }
        report.max_rel_error =
            std::max(report.max_rel_error, max_abs_diff / std::max(fd_scale, 1e-2f));
    }
    return report;
}

inline Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f,
                            bool requires_grad = true) {
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    for (float& v : data) v = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

}  // namespace gbi::testing
