#pragma once

#include <string>

#include "sensitrim/masking.hpp"
#include "sensitrim/model.hpp"

namespace sensitrim {

/// Per-dimension magnitude statistic over a weight column.
enum class ColumnStatistic { L1ColumnNorm, MaxAbs };

ColumnStatistic parse_statistic(const std::string& name);
std::string to_string(ColumnStatistic statistic);

struct MpSpec {
    ColumnStatistic attn_statistic = ColumnStatistic::L1ColumnNorm;  // over W_Q columns
    ColumnStatistic ffn_statistic = ColumnStatistic::L1ColumnNorm;   // over FC1 columns
};

/// Magnitude-pruning scores: attention dimension i of layer l is ranked by the
/// statistic of column i of that layer's W_Q, MLP dimension j by column j of
/// FC1. Nothing else in the model is read. Feed the result to
/// threshold_to_budget and keep the mask frozen while fine-tuning.
SensitivityScores mp_scores(const EncoderModel& model, const MpSpec& spec = {});

}  // namespace sensitrim
