#include "sensitrim/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "sensitrim/errors.hpp"

namespace sensitrim {

ColumnStatistic parse_statistic(const std::string& name) {
    if (name == "l1_column_norm") return ColumnStatistic::L1ColumnNorm;
    if (name == "max_abs") return ColumnStatistic::MaxAbs;
    throw InputError("unknown magnitude statistic '" + name + "' (expected l1_column_norm or max_abs)");
}

std::string to_string(ColumnStatistic statistic) {
    return statistic == ColumnStatistic::L1ColumnNorm ? "l1_column_norm" : "max_abs";
}

namespace {

std::vector<float> column_statistic(const Tensor& w, ColumnStatistic statistic) {
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    auto v = w.values();
    std::vector<double> acc(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double a = std::fabs(v[r * cols + c]);
            acc[c] = statistic == ColumnStatistic::L1ColumnNorm ? acc[c] + a : std::max(acc[c], a);
        }
    }
    return std::vector<float>(acc.begin(), acc.end());
}

}  // namespace

SensitivityScores mp_scores(const EncoderModel& model, const MpSpec& spec) {
    SensitivityScores s;
    for (const auto& layer : model.layers) {
        s.attn.push_back(column_statistic(layer.wq, spec.attn_statistic));
        s.ffn.push_back(column_statistic(layer.fc1_w, spec.ffn_statistic));
    }
    s.metadata.source = "mp:" + to_string(spec.attn_statistic) + "/" + to_string(spec.ffn_statistic);
    return s;
}

}  // namespace sensitrim
