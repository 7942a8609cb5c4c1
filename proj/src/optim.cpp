#include "sensitrim/optim.hpp"

#include <cmath>

#include "sensitrim/errors.hpp"

namespace sensitrim {

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, const AdamConfig& config) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
    }
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), 0.0f);
        state.v.assign(params.size(), 0.0f);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state does not match parameter size");
    }
    ++state.step;
    const float c1 = 1.0f - std::pow(config.beta1, static_cast<float>(state.step));
    const float c2 = 1.0f - std::pow(config.beta2, static_cast<float>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0f - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0f - config.beta2) * g * g;
        const float m_hat = state.m[i] / c1;
        const float v_hat = state.v[i] / c2;
        params[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
}

void sgd_step(std::span<float> params, std::span<const float> grads, float lr) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: params and grads differ in size");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw InputError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

Optimizer::Optimizer(OptimizerKind kind, std::vector<ParamGroup> groups) : kind_(kind), groups_(std::move(groups)) {
    states_.resize(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) states_[g].resize(groups_[g].params.size());
}

void Optimizer::step() {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        const auto& group = groups_[g];
        for (std::size_t p = 0; p < group.params.size(); ++p) {
            const Tensor& param = group.params[p];
            if (param.grad().size() != param.numel()) continue;
            if (kind_ == OptimizerKind::Adam) {
                AdamConfig config;
                config.lr = group.lr;
                adam_step(param.mutable_values(), param.grad(), states_[g][p], config);
            } else {
                sgd_step(param.mutable_values(), param.grad(), group.lr);
            }
        }
    }
}

void Optimizer::zero_grad() {
    for (const auto& group : groups_) {
        for (const auto& param : group.params) param.zero_grad();
    }
}

double Optimizer::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& group : groups_) {
        for (const auto& param : group.params) {
            for (float g : param.grad()) sq += static_cast<double>(g) * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const float factor = static_cast<float>(max_norm / norm);
        for (const auto& group : groups_) {
            for (const auto& param : group.params) {
                if (param.grad().size() != param.numel()) continue;
                for (auto& g : param.mutable_grad()) g *= factor;
            }
        }
    }
    return norm;
}

}  // namespace sensitrim
