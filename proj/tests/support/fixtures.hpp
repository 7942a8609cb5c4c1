#pragma once

#include <random>
#include <vector>

#include "sensitrim/masking.hpp"
#include "sensitrim/model.hpp"

namespace sensitrim::testing {

/// Small random architecture; d_ffn varies per layer.
inline ModelConfig random_config(std::mt19937_64& rng, std::size_t max_layers = 3) {
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    const std::size_t layers = pick(1, max_layers);
    const std::size_t heads = pick(1, 4);
    const std::size_t d_model = heads * pick(heads == 1 ? 2 : 1, 4);
    const std::size_t d_attn = heads * pick(1, 4);
    std::vector<std::size_t> d_ffn(layers);
    for (auto& f : d_ffn) f = pick(1, 24);
    return ModelConfig::make(layers, heads, d_model, d_attn, d_ffn, pick(2, 8), pick(6, 20), pick(2, 4));
}

/// Each bit is 1 with probability `density`.
inline BinaryMask random_mask(const ModelConfig& config, double density, std::mt19937_64& rng) {
    std::bernoulli_distribution keep(density);
    BinaryMask m = all_ones_mask(config);
    for (auto& layer : m.attn)
        for (auto& b : layer) b = keep(rng) ? 1 : 0;
    for (auto& layer : m.ffn)
        for (auto& b : layer) b = keep(rng) ? 1 : 0;
    m.budget = density;
    refresh_layer_budgets(m);
    return m;
}

inline TokenBatch random_batch(const ModelConfig& config, std::size_t batch, std::mt19937_64& rng,
                               bool ragged = true) {
    std::uniform_int_distribution<std::int32_t> tok(0, static_cast<std::int32_t>(config.vocab_size) - 1);
    std::uniform_int_distribution<std::size_t> len(1, config.max_seq_len);
    std::vector<std::vector<std::int32_t>> seqs(batch);
    for (auto& s : seqs) {
        s.resize(ragged ? len(rng) : config.max_seq_len);
        for (auto& t : s) t = tok(rng);
    }
    return make_batch(seqs);
}

/// Random weights with larger spread than the default init, so that masking
/// visibly changes the output. Layer-norm gains and biases are perturbed too.
inline EncoderModel random_model(const ModelConfig& config, std::uint64_t seed) {
    EncoderModel m = EncoderModel::init(config, seed);
    std::mt19937_64 rng(seed + 17);
    std::normal_distribution<float> n(0.0f, 0.5f);
    for (auto& [name, t] : m.named_parameters()) {
        for (auto& v : t.mutable_values()) v += n(rng);
    }
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        d = std::max(d, static_cast<double>(std::abs(a.values()[i] - b.values()[i])));
    }
    return d;
}

}  // namespace sensitrim::testing
