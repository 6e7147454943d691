#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "uie/tensor.hpp"

namespace uie::ad {

// Reverse-mode autodiff over whole tensors. Graphs are built define-by-run:
// every op returns a node holding its output value plus a closure that
// scatters the incoming gradient to the parents. With gradients disabled
// (NoGradGuard) ops produce detached nodes, so intermediate results are
// freed as soon as the last reference goes away.
struct Value;
using ValuePtr = std::shared_ptr<Value>;

struct Value {
    Tensor value;
    Tensor grad; // lazily allocated, same shape as value
    bool requires_grad = false;
    std::vector<ValuePtr> prev;
    std::function<void(Value&)> backward_fn;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor(value.shape());
        return grad;
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.vec().begin(), grad.vec().end(), 0.0);
    }
};

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// Leaf constructors.
ValuePtr constant(Tensor t);
ValuePtr leaf(Tensor t, bool requires_grad);

// Runs reverse accumulation from a scalar root (size-1 tensor).
void backward(const ValuePtr& root);

// Elementwise, equal shapes.
ValuePtr add(const ValuePtr& a, const ValuePtr& b);
ValuePtr sub(const ValuePtr& a, const ValuePtr& b);
ValuePtr mul(const ValuePtr& a, const ValuePtr& b);
ValuePtr div(const ValuePtr& a, const ValuePtr& b);

ValuePtr add_scalar(const ValuePtr& a, double s);
ValuePtr mul_scalar(const ValuePtr& a, double s);
ValuePtr square(const ValuePtr& a);
ValuePtr sqrt(const ValuePtr& a);
ValuePtr log(const ValuePtr& a);
ValuePtr sigmoid(const ValuePtr& a);
ValuePtr softplus(const ValuePtr& a);
ValuePtr leaky_relu(const ValuePtr& a, double slope);
ValuePtr clamp01(const ValuePtr& a);

// Reductions and broadcasts.
ValuePtr sum_all(const ValuePtr& a);  // -> (1)
ValuePtr mean_all(const ValuePtr& a); // -> (1)
ValuePtr spatial_mean(const ValuePtr& a); // (B,C,H,W) -> (B,C)
ValuePtr expand_spatial(const ValuePtr& a, long h, long w); // (B,C) -> (B,C,H,W)

// Layers.
ValuePtr linear(const ValuePtr& x, const ValuePtr& weight, const ValuePtr& bias); // (B,I)*(I,O)+(O)
ValuePtr conv2d(const ValuePtr& x, const ValuePtr& weight, const ValuePtr& bias,
                long stride, long pad); // weight (O,I,K,K)
ValuePtr maxpool2(const ValuePtr& x);
ValuePtr upsample_nearest2(const ValuePtr& x);
ValuePtr concat_channels(const ValuePtr& a, const ValuePtr& b);

// Composites.
ValuePtr gaussian_sample(const ValuePtr& mean, const ValuePtr& scale, const ValuePtr& noise);
// Closed-form KL of diagonal Gaussians, summed over every entry of the
// operands (callers rescale for batch means).
ValuePtr gaussian_kl_sum(const ValuePtr& p_mean, const ValuePtr& p_scale,
                         const ValuePtr& q_mean, const ValuePtr& q_scale);
ValuePtr mse(const ValuePtr& a, const ValuePtr& b); // -> (1)

} // namespace uie::ad
