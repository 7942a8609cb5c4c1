#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sensitrim/ops.hpp"
#include "sensitrim/tensor.hpp"

namespace sensitrim {

struct BinaryMask;

/// Architecture of a maskable post-LN transformer encoder classifier.
struct ModelConfig {
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    std::size_t d_model = 0;
    /// Attention intermediate width of the untrimmed model.
    std::size_t d_attn = 0;
    /// Current MLP intermediate width per layer.
    std::vector<std::size_t> d_ffn;
    std::size_t max_seq_len = 0;
    std::size_t vocab_size = 0;
    std::size_t num_classes = 0;
    /// 1/sqrt(d_attn / num_heads) of the untrimmed model; never rescaled by compaction.
    float attn_scale = 1.0f;
    float layer_norm_eps = 1e-5f;
    /// Current attention width of every head, per layer.
    std::vector<std::vector<std::size_t>> head_widths;
    /// MLP widths before compaction (equal to d_ffn for untrimmed models).
    std::vector<std::size_t> base_d_ffn;

    /// Untrimmed config; d_ffn must have num_layers entries.
    static ModelConfig make(std::size_t num_layers, std::size_t num_heads, std::size_t d_model, std::size_t d_attn,
                            std::vector<std::size_t> d_ffn, std::size_t max_seq_len, std::size_t vocab_size,
                            std::size_t num_classes);

    /// Throws InputError when the invariants do not hold.
    void validate() const;

    std::size_t attn_width(std::size_t layer) const;
    std::size_t base_head_width() const { return d_attn / num_heads; }
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv;  // [d_model × k], [k]
    Tensor wo, bo;                  // [k × d_model], [d_model]
    Tensor ln1_gain, ln1_bias;
    Tensor fc1_w, fc1_b;  // [d_model × j], [j]
    Tensor fc2_w, fc2_b;  // [j × d_model], [d_model]
    Tensor ln2_gain, ln2_bias;
};

struct EncoderModel {
    ModelConfig config;
    Tensor token_embedding;     // [vocab × d_model]
    Tensor position_embedding;  // [max_seq_len × d_model]
    std::vector<LayerParams> layers;
    Tensor classifier_w;  // [d_model × num_classes]
    Tensor classifier_b;

    /// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1.
    static EncoderModel init(const ModelConfig& config, std::uint64_t seed);

    EncoderModel clone() const;
    /// Stable checkpoint order.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    void set_requires_grad(bool on);
};

/// Token ids for B sequences padded to a common length.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::int32_t> ids;     // batch·seq, padding id 0
    std::vector<std::size_t> lengths;  // real length per sequence
};

TokenBatch make_batch(std::span<const std::vector<std::int32_t>> sequences);

/// Per-layer real-valued gates over the intermediate dimensions. An undefined
/// tensor leaves that site unmasked.
struct LayerGates {
    Tensor attn;
    Tensor ffn;
};
using GateSet = std::vector<LayerGates>;

/// Q, K and V projections are each gated along the attention width, so a zero
/// gate removes that dimension from the logits and the values at once.
/// `x` is [batch·seq × d_model].
Tensor mhsa_forward(const ModelConfig& config, std::size_t layer_index, const LayerParams& layer, const Tensor& x,
                    const TokenBatch& batch, const Tensor* gate = nullptr);

/// FC1 → GELU → (gate) → FC2.
Tensor mlp_forward(const LayerParams& layer, const Tensor& x, const Tensor* gate = nullptr);

/// Logits [batch × num_classes], pooled from the first position.
Tensor forward(const EncoderModel& model, const TokenBatch& batch, const GateSet* gates = nullptr);

/// Physically removes the dimensions a binary mask zeroes. The result computes
/// the same function as the masked model.
EncoderModel compact(const EncoderModel& model, const BinaryMask& mask);

/// Copy of the model with every weight that feeds or reads a masked dimension
/// set to zero; its unmasked forward equals the masked forward.
EncoderModel zero_masked_weights(const EncoderModel& model, const BinaryMask& mask);

/// Throws ShapeError unless every mask vector matches the model's widths.
void check_mask_compatible(const ModelConfig& config, const BinaryMask& mask);

}  // namespace sensitrim
