#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sensitrim/tensor.hpp"

namespace sensitrim {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update. State buffers are sized on first use.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, const AdamConfig& config);

void sgd_step(std::span<float> params, std::span<const float> grads, float lr);

enum class OptimizerKind { Adam, Sgd };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// A set of parameters sharing one learning rate.
struct ParamGroup {
    std::vector<Tensor> params;
    float lr = 1e-3f;
};

/// Stateful optimizer over parameter groups. Parameters without a gradient
/// (never reached by backward) are left untouched.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::vector<ParamGroup> groups);

    void step();
    void zero_grad();

    /// Rescales all gradients so their global L2 norm is at most max_norm.
    /// Returns the norm before clipping.
    double clip_grad_norm(double max_norm);

    const std::vector<ParamGroup>& groups() const noexcept { return groups_; }

private:
    OptimizerKind kind_;
    std::vector<ParamGroup> groups_;
    std::vector<std::vector<AdamState>> states_;
};

}  // namespace sensitrim
