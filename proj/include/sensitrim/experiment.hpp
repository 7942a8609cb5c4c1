#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sensitrim/baselines.hpp"
#include "sensitrim/data.hpp"
#include "sensitrim/model.hpp"
#include "sensitrim/reporting.hpp"
#include "sensitrim/training.hpp"

namespace sensitrim {

namespace fs = std::filesystem;

/// One JSON file describing a full experiment.
///
///   {"model": {...}, "task": {...}, "pretrain_task": {...}?,
///    "pretrain": {...}, "analysis": {...}, "finetune": {...},
///    "budgets": [...], "seeds": [...], "output_dir": "...",
///    "mode": "masked"|"compacted", "mp": {"attn_statistic", "ffn_statistic"}}
///
/// model may omit vocab_size, max_seq_len and num_classes; they are taken
/// from the datasets.
struct ExperimentConfig {
    nlohmann::json model = nlohmann::json::object();
    nlohmann::json task = nlohmann::json::object();
    std::optional<nlohmann::json> pretrain_task;
    TrainSpec pretrain;
    TrainSpec analysis;
    TrainSpec finetune;
    std::vector<double> budgets{0.5};
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "out";
    FinetuneMode mode = FinetuneMode::Masked;
    MpSpec mp;
};

TrainSpec default_pretrain_spec();
TrainSpec default_analysis_spec();
TrainSpec default_finetune_spec();

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const fs::path& path);
nlohmann::json read_json_file(const fs::path& path);

/// Fills the dataset-dependent fields of a model description.
ModelConfig resolve_model_config(const nlohmann::json& model, const Dataset& dataset,
                                 const Dataset* pretrain_dataset = nullptr);

nlohmann::json to_json(const BinaryMask& mask);
BinaryMask mask_from_json(const nlohmann::json& j);

/// Runs fn(0..n-1) on up to `threads` workers; fn(i) must only touch slot i.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// SENSITRIM_THREADS, default 1.
std::size_t sweep_threads_from_env();

struct SeedSummary {
    std::uint64_t seed = 0;
    std::size_t sensi_training_epochs = 0;
    std::size_t mp_training_epochs = 0;
    std::vector<std::vector<LayerBudget>> sensi_layer_budgets;  // [budget][layer]
};

struct SweepResult {
    std::vector<SweepRow> rows;  // (budget, seed) order
    std::vector<SeedSummary> seeds;
    nlohmann::json summary;
};

/// Per seed: pretrain, one analysis pass, MP scores; then every (budget,
/// seed) cell fine-tunes both masks. Cells run on `threads` workers and are
/// merged in (budget, seed) order.
SweepResult run_sweep(const ExperimentConfig& config, std::size_t threads = 1);

// Command entry points. Each returns the JSON summary printed on stdout.

nlohmann::json cmd_pretrain(const fs::path& config_path, const fs::path& out);

struct AnalyzeOptions {
    fs::path checkpoint;
    std::optional<fs::path> data;  // task JSON or experiment config; default: task recorded in the checkpoint
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    float l1_coeff = 0.01f;
    std::uint64_t seed = 0;
    std::optional<float> learning_rate;
    std::optional<float> mask_learning_rate;
    fs::path out;  // binary scores; a .csv sibling is written next to it
};
nlohmann::json cmd_analyze(const AnalyzeOptions& options);

struct TrimOptions {
    fs::path scores;
    double budget = 1.0;
    std::optional<std::size_t> seq_len;
    fs::path out;  // binary mask; .csv and .report.json siblings
};
nlohmann::json cmd_trim(const TrimOptions& options);

struct FinetuneOptions {
    fs::path checkpoint;
    fs::path mask;
    std::optional<fs::path> data;
    std::size_t epochs = 3;
    std::size_t batch_size = 32;
    float learning_rate = 1e-3f;
    std::uint64_t seed = 0;
    FinetuneMode mode = FinetuneMode::Masked;
    fs::path out;  // checkpoint; .run.json sibling
};
nlohmann::json cmd_finetune(const FinetuneOptions& options);

struct MpOptions {
    fs::path checkpoint;
    double budget = 1.0;
    MpSpec spec;
    fs::path out;
};
nlohmann::json cmd_mp(const MpOptions& options);

struct SweepOptions {
    fs::path config;
    std::optional<fs::path> output_dir;
    std::size_t threads = 1;
};
nlohmann::json cmd_sweep(const SweepOptions& options);

struct ReportOptions {
    fs::path checkpoint;
    std::optional<fs::path> mask;  // default: the mask recorded in a masked fine-tune checkpoint
    std::optional<std::size_t> seq_len;
    ReportFormat format = ReportFormat::Json;
};
/// Returns the emitted report text.
std::string cmd_report(const ReportOptions& options);

struct CompareOptions {
    fs::path scores_a;
    fs::path scores_b;
    double budget = 0.5;
};
nlohmann::json cmd_compare_sensitivity(const CompareOptions& options);

/// Sibling path with `suffix` replacing the extension.
fs::path sibling(const fs::path& path, const std::string& suffix);

}  // namespace sensitrim
