#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "sensitrim/baselines.hpp"
#include "sensitrim/data.hpp"
#include "sensitrim/masking.hpp"
#include "sensitrim/model.hpp"
#include "sensitrim/optim.hpp"

namespace sensitrim {

struct TrainSpec {
    std::size_t epochs = 3;
    std::size_t batch_size = 32;
    float learning_rate = 1e-3f;
    OptimizerKind optimizer = OptimizerKind::Adam;
    /// Weight of the L1 penalty on the gates during sensitivity analysis.
    float l1_coeff = 0.01f;
    std::uint64_t seed = 0;
    /// Project gates onto [0, ∞) after every analysis step.
    bool clamp_masks = true;
    /// Gate learning rate; the weight learning rate when unset.
    std::optional<float> mask_learning_rate;
    /// Analysis only: false freezes the encoder and learns the gates alone.
    bool train_weights = true;
    double grad_clip = 1.0;
    /// Evaluate on the eval split after every epoch (otherwise only at the end).
    bool eval_each_epoch = true;

    void validate() const;
};

nlohmann::json to_json(const TrainSpec& spec);
/// Fields missing from `j` keep the values of `defaults`.
TrainSpec train_spec_from_json(const nlohmann::json& j, TrainSpec defaults = {});

struct RunRecord {
    std::vector<double> epoch_losses;
    std::vector<double> eval_accuracies;
    double wall_seconds = 0.0;
    double final_metric = 0.0;
    nlohmann::json spec;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

struct TrainResult {
    EncoderModel model;
    RunRecord record;
};

/// Supervised training of a freshly initialised model (seeded by spec.seed).
TrainResult pretrain(const ModelConfig& config, const Dataset& dataset, const TrainSpec& spec);

struct SensitivityResult {
    SensitivityScores scores;
    RunRecord record;
};

/// Jointly trains a copy of the model and one gate per intermediate dimension
/// (initialised at 1) on CE + λ·Σ|gate|, one optimizer step per batch. The
/// trained copy is discarded; `model` is not modified.
SensitivityResult sensitivity_epoch(const EncoderModel& model, const Dataset& dataset, const TrainSpec& spec);

enum class FinetuneMode { Masked, Compacted };

FinetuneMode parse_finetune_mode(const std::string& name);
std::string to_string(FinetuneMode mode);

struct FinetuneResult {
    /// Masked mode: full-size model with every masked weight zeroed.
    /// Compacted mode: the physically smaller model.
    EncoderModel model;
    /// The mask to apply to `model` (all ones for compacted results).
    BinaryMask mask;
    RunRecord record;
};

/// Fine-tunes from `pretrained` under a frozen binary mask.
FinetuneResult finetune(const EncoderModel& pretrained, const BinaryMask& mask, const Dataset& dataset,
                        const TrainSpec& spec, FinetuneMode mode);

/// Argmax accuracy over `examples`. Threads split the examples into disjoint
/// ranges; correct counts are summed in range order.
double evaluate(const EncoderModel& model, std::span<const Example> examples, const BinaryMask* mask = nullptr,
                std::size_t threads = 1);
double evaluate(const EncoderModel& model, const Dataset& dataset, const BinaryMask* mask = nullptr,
                std::size_t threads = 1);

struct BudgetRun {
    double budget = 1.0;
    double accuracy = 0.0;
    BinaryMask mask;
    RunRecord record;
};

struct ExperimentResult {
    std::vector<BudgetRun> runs;
    /// Epochs of training actually executed (analysis + fine-tuning).
    std::size_t training_epochs = 0;
    SensitivityScores scores;
    std::optional<RunRecord> analysis;
};

/// One analysis pass, then threshold + fine-tune per budget.
ExperimentResult sensi_experiment(const EncoderModel& pretrained, const Dataset& dataset,
                                  const std::vector<double>& budgets, const TrainSpec& analysis,
                                  const TrainSpec& finetune_spec, FinetuneMode mode = FinetuneMode::Masked);

/// Frozen magnitude mask per budget, then fine-tune.
ExperimentResult mp_experiment(const EncoderModel& pretrained, const Dataset& dataset,
                               const std::vector<double>& budgets, const TrainSpec& finetune_spec,
                               const MpSpec& mp = {}, FinetuneMode mode = FinetuneMode::Masked);

}  // namespace sensitrim
