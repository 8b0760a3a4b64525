#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gbi {

// Error type for every precondition/shape violation in the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

// Dense row-major float32 tensor with value semantics (shared payload).
// Data is immutable after creation; only optimizers write through
// mutable_data(). Gradient buffers exist only on requires_grad tensors and
// accumulate until zero_grad() or an optimizer step clears them.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int numel() const { return static_cast<int>(impl_->data.size()); }

    std::span<const float> data() const { return impl_->data; }
    std::span<float> mutable_data() { return impl_->data; }  // optimizer/init use only
    std::span<float> grad();
    std::span<const float> grad() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg);
    void zero_grad();

    float item() const;
    float at(int i) const { return impl_->data[static_cast<size_t>(i)]; }
    float at(int i, int j) const;

    // Identity of the underlying buffer; used by optimizers to key state.
    const void* id() const { return impl_.get(); }

private:
    struct Impl {
        Shape shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

// Records the backward rules of one forward pass. Ops append themselves in
// execution order; backward() replays them reversed, so inputs always receive
// their gradients after every op that consumed them. One tape per forward
// pass; construction makes it the active tape for the current thread.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::function<void()> backward_rule);
    size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }

    // Seeds d(loss)/d(loss) = 1 and runs all recorded rules in reverse.
    // Errors if loss is not a scalar or nothing was recorded.
    void backward(Tensor& loss);

private:
    std::vector<std::function<void()>> ops_;
    Tape* previous_ = nullptr;
};

// True when an op should register a backward rule for these inputs.
inline bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace gbi
