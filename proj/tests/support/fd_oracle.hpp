#pragma once

// Central-difference gradient oracle. The probe loss is Σ w·f(inputs) with a
// fixed random weight per output element, accumulated in double on the
// finite-difference side and recorded as an independent tape node on the
// analytic side.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sensitrim/tensor.hpp"

namespace sensitrim::testing {

inline Tensor weighted_sum(const Tensor& y, const std::vector<float>& w) {
    double acc = 0.0;
    const auto v = y.values();
    for (std::size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(w[i]) * v[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (Tape* tape = Tape::active(); tape && y.requires_grad()) {
        out.set_requires_grad(true);
        auto ys = y.storage();
        auto os = out.storage();
        tape->record("weighted_sum", os, [ys, os, w] {
            auto& g = ys->ensure_grad();
            const float up = os->grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * up;
        });
    }
    return out;
}

struct GradCheckResult {
    double rel_error = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
};

using Probe = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares the tape gradient of every input to central differences with step h.
inline GradCheckResult check_gradients(const std::vector<Tensor>& inputs, const Probe& f, std::uint64_t seed,
                                       float h = 1e-3f) {
    std::vector<float> w;
    {
        NoGradGuard guard;
        const Tensor y = f(inputs);
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
        w.resize(y.numel());
        for (auto& x : w) x = dist(rng);
    }
    for (const auto& t : inputs) {
        t.storage()->requires_grad = true;
        t.zero_grad();
    }
    {
        Tape tape;
        const Tensor loss = weighted_sum(f(inputs), w);
        tape.backward(loss);
    }

    auto probe = [&] {
        NoGradGuard guard;
        const Tensor y = f(inputs);
        double acc = 0.0;
        const auto v = y.values();
        for (std::size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(w[i]) * v[i];
        return acc;
    };

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (const auto& t : inputs) {
        auto vals = t.mutable_values();
        const auto grad = t.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const float orig = vals[i];
            const float hi = orig + h, lo = orig - h;
            vals[i] = hi;
            const double up = probe();
            vals[i] = lo;
            const double down = probe();
            vals[i] = orig;
            // Divide by the step actually taken in f32.
            const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double analytic = grad.empty() ? 0.0 : grad[i];
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
    }
    GradCheckResult r;
    r.analytic_norm = std::sqrt(a2);
    r.numeric_norm = std::sqrt(n2);
    r.rel_error = std::sqrt(diff2) / std::max({r.analytic_norm, r.numeric_norm, 1e-6});
    return r;
}

/// Uniform values in [lo, hi], kept at least `gap` away from zero.
inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -2.0f, float hi = 2.0f, float gap = 0.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) {
        do {
            x = dist(rng);
        } while (std::abs(x) < gap);
    }
    return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace sensitrim::testing
