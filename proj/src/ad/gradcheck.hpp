// Central finite-difference verification of backward rules. The numeric side
// never touches the tape, so it stays an independent oracle for the analytic
// gradients.
#pragma once

#include <functional>
#include <vector>

#include "ad/ops.hpp"

namespace dfba {

template <typename T>
struct GradCheckDefaults;

template <>
struct GradCheckDefaults<float> {
    static constexpr float step = 1e-2f;
};

template <>
struct GradCheckDefaults<double> {
    static constexpr double step = 1e-5;
};

// Worst relative error between analytic and central-difference gradients of
// a scalar-valued function over the given leaf tensors. `fn` must rebuild its
// expression from the current tensor values on every call.
template <typename T>
T grad_check(const std::function<Tensor<T>()>& fn, std::vector<Tensor<T>> inputs,
             T step = GradCheckDefaults<T>::step) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    {
        Graph<T> tape;
        Tensor<T> loss = fn();
        tape.backward(loss);
    }
    const T denom_floor = std::is_same_v<T, float> ? T(1e-6) : T(1e-10);
    T worst = T(0);
    for (auto& in : inputs) {
        std::vector<T> analytic = in.has_grad() ? in.grad() : std::vector<T>(in.numel(), T(0));
        for (int64_t i = 0; i < in.numel(); ++i) {
            const T saved = in.values()[i];
            T fplus, fminus;
            {
                NoGradScope<T> off;
                in.values()[i] = saved + step;
                fplus = fn().item();
                in.values()[i] = saved - step;
                fminus = fn().item();
                in.values()[i] = saved;
            }
            const T numeric = (fplus - fminus) / (T(2) * step);
            const T a = analytic[i];
            const T scale_v = std::fabs(a) + std::fabs(numeric);
            const T err = scale_v > denom_floor ? std::fabs(a - numeric) / scale_v
                                                : std::fabs(a - numeric);
            worst = std::max(worst, err);
        }
        in.drop_grad();
    }
    return worst;
}

// Single-input form matching the verification harness contract.
template <typename T>
T grad_check(const std::function<Tensor<T>()>& fn, Tensor<T> x,
             T step = GradCheckDefaults<T>::step) {
    return grad_check<T>(fn, std::vector<Tensor<T>>{x}, step);
}

} // namespace dfba
