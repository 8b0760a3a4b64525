#include "gbi/tensor.hpp"

#include <numeric>
#include <sstream>
#include <utility>

namespace gbi {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

int shape_numel(const Shape& s) {
    int n = 1;
    for (int d : s) {
        if (d <= 0) throw Error("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const int n = shape_numel(shape);
    return from(std::move(shape), std::vector<float>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> data, bool requires_grad) {
    const int n = shape_numel(shape);
    if (n != static_cast<int>(data.size()))
        throw Error("data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    if (requires_grad) t.impl_->grad.assign(t.impl_->data.size(), 0.0f);
    return t;
}

std::span<float> Tensor::grad() {
    if (!impl_->requires_grad) throw Error("grad() on a tensor without requires_grad");
    return impl_->grad;
}

std::span<const float> Tensor::grad() const {
    if (!impl_->requires_grad) throw Error("grad() on a tensor without requires_grad");
    return impl_->grad;
}

void Tensor::set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (rg && impl_->grad.size() != impl_->data.size())
        impl_->grad.assign(impl_->data.size(), 0.0f);
    if (!rg) impl_->grad.clear();
}

void Tensor::zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw Error("item() on tensor of shape " + shape_str(impl_->shape));
    return impl_->data[0];
}

float Tensor::at(int i, int j) const {
    if (rank() != 2) throw Error("at(i,j) on tensor of shape " + shape_str(impl_->shape));
    return impl_->data[static_cast<size_t>(i) * static_cast<size_t>(impl_->shape[1]) +
                       static_cast<size_t>(j)];
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_rule) {
    ops_.push_back(std::move(backward_rule));
}

void Tape::backward(Tensor& loss) {
    if (loss.numel() != 1) throw Error("backward on non-scalar loss of shape " + shape_str(loss.shape()));
    if (ops_.empty()) throw Error("backward on an empty tape");
    if (!loss.requires_grad()) throw Error("backward on a loss that does not require grad");
    loss.grad()[0] += 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

}  // namespace gbi
