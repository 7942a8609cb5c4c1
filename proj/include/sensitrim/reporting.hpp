#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sensitrim/masking.hpp"
#include "sensitrim/model.hpp"

namespace sensitrim {

inline constexpr int kReportSchemaVersion = 1;

struct LayerParamCount {
    std::size_t attn_width = 0;
    std::size_t ffn_width = 0;
    std::uint64_t mhsa = 0;
    std::uint64_t mlp = 0;
    std::uint64_t layer_norm = 0;
};

/// Parameter accounting. Only MHSA and MLP are trimmable; embeddings, layer
/// norms and the classifier are reported but never change.
struct ParamReport {
    std::uint64_t embedding = 0;  // token + position tables
    std::uint64_t classifier = 0;
    std::vector<LayerParamCount> layers;
    std::uint64_t mhsa = 0;
    std::uint64_t mlp = 0;
    std::uint64_t layer_norm = 0;
    std::uint64_t trimmable = 0;  // mhsa + mlp
    std::uint64_t total = 0;
};

/// Closed-form count at the model's current widths, or at the widths a mask
/// keeps. Per layer with k attention and j MLP dimensions:
///   MHSA = 3·(d_model·k + k) + (k·d_model + d_model)
///   MLP  = (d_model·j + j) + (j·d_model + d_model)
ParamReport count_params(const ModelConfig& config, const BinaryMask* mask = nullptr);

/// Enumerates the elements of every parameter tensor of a model.
std::uint64_t enumerate_params(const EncoderModel& model);

struct LayerFlops {
    std::uint64_t attn_linear = 0;  // Q, K, V, O projections
    std::uint64_t attn_bias = 0;
    std::uint64_t attn_context = 0;  // Q·Kᵀ and probabilities·V
    std::uint64_t ffn_linear = 0;
    std::uint64_t ffn_bias = 0;
    std::uint64_t aux = 0;  // softmax, layer norm, GELU, residual adds
};

/// Forward FLOPs per token at a sequence length. One multiply-accumulate is 2
/// FLOPs; bias adds are 1 each. Auxiliary element-wise work is kept apart.
struct FlopReport {
    std::size_t seq_len = 0;
    std::vector<LayerFlops> layers;
    std::uint64_t attn_linear = 0;
    std::uint64_t ffn_linear = 0;
    std::uint64_t bias = 0;
    std::uint64_t attn_context = 0;
    std::uint64_t aux = 0;
    std::uint64_t classifier_per_sequence = 0;
    /// linear + bias + attention context, per token.
    std::uint64_t per_token = 0;
};

FlopReport count_flops(const ModelConfig& config, std::size_t seq_len, const BinaryMask* mask = nullptr);

struct TrimReport {
    int schema_version = kReportSchemaVersion;
    ParamReport dense_params;
    ParamReport masked_params;
    FlopReport dense_flops;
    FlopReport masked_flops;
    std::vector<LayerBudget> per_layer_budgets;
    double attn_density = 1.0;
    double ffn_density = 1.0;
    double budget = 1.0;
};

/// Without a mask the model's current widths are compared against its
/// untrimmed widths, so a compacted config reports its own density.
TrimReport make_trim_report(const ModelConfig& config, std::size_t seq_len, const BinaryMask* mask = nullptr);

struct SensitivityProfile {
    std::vector<double> attn;               // per layer
    std::vector<double> ffn;                // per layer
    std::vector<std::vector<double>> heads;  // [layer][head]
};

/// Densities of a binary mask.
SensitivityProfile profile(const BinaryMask& mask, const ModelConfig& config);
/// Mean scores.
SensitivityProfile profile(const SensitivityScores& scores, const ModelConfig& config);

/// Spearman rank correlation with mid-ranked ties. Empty when either side is
/// constant (rank variance zero). Throws InputError on a length mismatch.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

struct ProfileCorrelation {
    std::optional<double> attn;
    std::optional<double> ffn;
};

ProfileCorrelation correlate(const SensitivityProfile& a, const SensitivityProfile& b);

struct SweepRow {
    double budget = 1.0;
    double sensi_acc = 0.0;
    double mp_acc = 0.0;
    std::uint64_t seed = 0;
    bool operator==(const SweepRow&) const = default;
};

enum class ReportFormat { Json, Csv };

nlohmann::json to_json(const ParamReport& r);
nlohmann::json to_json(const FlopReport& r);
nlohmann::json to_json(const TrimReport& r);
nlohmann::json to_json(const SensitivityProfile& p);
nlohmann::json to_json(const ProfileCorrelation& c);

TrimReport trim_report_from_json(const nlohmann::json& j);

/// JSON: {"schema_version", "rows": [...]}. CSV columns:
/// budget,sensi_acc,mp_acc,seed,schema_version
std::string emit(const std::vector<SweepRow>& rows, ReportFormat format);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);
/// Pretty JSON text of a trim report.
std::string emit(const TrimReport& report, ReportFormat format);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace sensitrim
