#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sensitrim/model.hpp"

namespace sensitrim {

struct ScoreMetadata {
    std::string task;
    std::size_t epochs = 0;
    double l1_coeff = 0.0;
    std::uint64_t seed = 0;
    /// "sensitivity", or "mp:<statistic>" for magnitude baselines.
    std::string source = "sensitivity";
    bool operator==(const ScoreMetadata&) const = default;
};

/// Learned real-valued importance of every intermediate dimension.
struct SensitivityScores {
    std::vector<std::vector<float>> attn;  // per layer, length = attention width
    std::vector<std::vector<float>> ffn;   // per layer, length = MLP width
    ScoreMetadata metadata;
    bool operator==(const SensitivityScores&) const = default;
};

struct LayerBudget {
    double attn = 1.0;
    double ffn = 1.0;
    bool operator==(const LayerBudget&) const = default;
};

/// Frozen 0/1 selection of intermediate dimensions.
struct BinaryMask {
    std::vector<std::vector<std::uint8_t>> attn;
    std::vector<std::vector<std::uint8_t>> ffn;
    double budget = 1.0;
    /// Realized density of each layer's masks.
    std::vector<LayerBudget> per_layer;
    bool operator==(const BinaryMask&) const = default;
};

/// Largest excluded score per module type; -inf when nothing was excluded.
struct Threshold {
    float attn = -std::numeric_limits<float>::infinity();
    float ffn = -std::numeric_limits<float>::infinity();
};

SensitivityScores init_masks(const ModelConfig& config);

BinaryMask all_ones_mask(const ModelConfig& config);

/// Largest count k ≤ total with k/total ≤ budget.
std::size_t retained_count(double budget, std::size_t total);

/// Keeps the ⌊B·d⌋ highest scores of each module-type pool (attention
/// dimensions of all layers form one pool, MLP dimensions another). Equal
/// scores are ordered by ascending (layer, position), lower index kept first.
std::pair<BinaryMask, Threshold> threshold_to_budget(const SensitivityScores& scores, double budget);

/// Recomputes per_layer from the bit vectors.
void refresh_layer_budgets(BinaryMask& mask);

struct DensityReport {
    double attn = 1.0;
    double ffn = 1.0;
    std::size_t attn_kept = 0, attn_total = 0;
    std::size_t ffn_kept = 0, ffn_total = 0;
    std::vector<double> attn_per_layer;
    std::vector<double> ffn_per_layer;
};

DensityReport density(const BinaryMask& mask);

/// The [start, start+width) segment of one head inside a layer's attention vector.
std::pair<std::size_t, std::size_t> head_segment(const ModelConfig& config, std::size_t layer, std::size_t head);

template <class T>
std::span<const T> head_view(const std::vector<std::vector<T>>& attn, const ModelConfig& config, std::size_t layer,
                             std::size_t head) {
    const auto [start, width] = head_segment(config, layer, head);
    return std::span<const T>(attn.at(layer)).subspan(start, width);
}

/// Density of the head's segment; 0 for a head with no dimensions left.
double head_sensitivity(const BinaryMask& mask, const ModelConfig& config, std::size_t layer, std::size_t head);
/// Mean score of the head's segment.
double head_sensitivity(const SensitivityScores& scores, const ModelConfig& config, std::size_t layer,
                        std::size_t head);

/// Constant 0/1 gates realizing the mask in forward().
GateSet gates_from_mask(const BinaryMask& mask);
/// Trainable gates initialised from scores.
GateSet gates_from_scores(const SensitivityScores& scores, bool requires_grad);
/// Reads gate values back into a score set.
SensitivityScores scores_from_gates(const GateSet& gates, ScoreMetadata metadata);

// CSV: module_type,layer,head,position,<score|bit>. Attention rows carry the
// head index; MLP rows use head -1. Position is the index within the layer.
void write_scores_csv(std::ostream& out, const SensitivityScores& scores, const ModelConfig& config);
SensitivityScores read_scores_csv(std::istream& in);
void write_mask_csv(std::ostream& out, const BinaryMask& mask, const ModelConfig& config);
/// The budget of a mask read from CSV is its larger realized module density.
BinaryMask read_mask_csv(std::istream& in);

}  // namespace sensitrim
