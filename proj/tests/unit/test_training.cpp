#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "sensitrim/errors.hpp"
#include "sensitrim/reporting.hpp"
#include "sensitrim/training.hpp"

using namespace sensitrim;
using namespace sensitrim::testing;

namespace {

Dataset tiny_task(std::uint64_t seed = 1) { return gen_keyword_task(24, 6, 2, 128, 64, seed); }

ModelConfig tiny_config(const Dataset& ds) {
    return ModelConfig::make(2, 2, 8, 8, {12, 12}, ds.task.max_seq_len, ds.task.vocab_size, ds.task.num_classes);
}

TrainSpec quick(std::size_t epochs, std::uint64_t seed = 3) {
    TrainSpec s;
    s.epochs = epochs;
    s.batch_size = 16;
    s.learning_rate = 3e-3f;
    s.seed = seed;
    return s;
}

bool same_params(const EncoderModel& a, const EncoderModel& b) {
    auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin(), pb[i].values().end()))
            return false;
    }
    return true;
}

}  // namespace

TEST(TrainSpec, ValidationAndJson) {
    TrainSpec s;
    s.batch_size = 0;
    EXPECT_THROW(s.validate(), InputError);
    s = TrainSpec{};
    s.learning_rate = 0;
    EXPECT_THROW(s.validate(), InputError);
    s = TrainSpec{};
    s.l1_coeff = -1;
    EXPECT_THROW(s.validate(), InputError);

    TrainSpec t;
    t.epochs = 4;
    t.optimizer = OptimizerKind::Sgd;
    t.mask_learning_rate = 0.5f;
    auto back = train_spec_from_json(to_json(t));
    EXPECT_EQ(to_json(back), to_json(t));
    EXPECT_EQ(train_spec_from_json({{"epochs", 9}}).batch_size, 32u);
    EXPECT_THROW(train_spec_from_json({{"epochs", "many"}}), FormatError);
}

TEST(RunRecord, JsonFieldNames) {
    RunRecord r;
    r.epoch_losses = {0.5, 0.25};
    r.eval_accuracies = {0.75, 1.0};
    r.wall_seconds = 1.5;
    r.final_metric = 1.0;
    r.spec = to_json(TrainSpec{});
    auto j = to_json(r);
    for (const char* k : {"epoch_losses", "eval_accuracies", "wall_seconds", "final_metric", "spec"}) {
        EXPECT_TRUE(j.contains(k)) << k;
    }
    EXPECT_EQ(to_json(run_record_from_json(j)), j);
}

TEST(Pretrain, ZeroEpochsReturnsInit) {
    auto ds = tiny_task();
    auto c = tiny_config(ds);
    auto r = pretrain(c, ds, quick(0, 11));
    EXPECT_TRUE(same_params(r.model, EncoderModel::init(c, 11)));
    EXPECT_TRUE(r.record.epoch_losses.empty());
}

TEST(Pretrain, RecordsOneEntryPerEpochAndLearns) {
    auto ds = tiny_task();
    auto r = pretrain(tiny_config(ds), ds, quick(6));
    EXPECT_EQ(r.record.epoch_losses.size(), 6u);
    EXPECT_EQ(r.record.eval_accuracies.size(), 6u);
    EXPECT_LT(r.record.epoch_losses.back(), r.record.epoch_losses.front());
    EXPECT_EQ(r.record.final_metric, evaluate(r.model, ds));
}

TEST(Pretrain, Deterministic) {
    auto ds = tiny_task();
    auto a = pretrain(tiny_config(ds), ds, quick(2));
    auto b = pretrain(tiny_config(ds), ds, quick(2));
    EXPECT_TRUE(same_params(a.model, b.model));
    EXPECT_EQ(a.record.epoch_losses, b.record.epoch_losses);
}

TEST(Pretrain, DatasetErrors) {
    auto ds = tiny_task();
    auto c = tiny_config(ds);
    Dataset empty = ds;
    empty.train.clear();
    EXPECT_THROW(pretrain(c, empty, quick(1)), InputError);
    Dataset bad = ds;
    bad.train[0].label = 7;
    EXPECT_THROW(pretrain(c, bad, quick(1)), InputError);
    Dataset long_seq = ds;
    long_seq.train[0].ids.resize(20, 2);
    EXPECT_THROW(pretrain(c, long_seq, quick(1)), InputError);
}

TEST(Pretrain, SgdOptimizer) {
    auto ds = tiny_task();
    auto spec = quick(2);
    spec.optimizer = OptimizerKind::Sgd;
    spec.learning_rate = 0.05f;
    auto r = pretrain(tiny_config(ds), ds, spec);
    EXPECT_EQ(r.record.epoch_losses.size(), 2u);
}

TEST(Sensitivity, NoPenaltyNoMaskRateKeepsOnes) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(1)).model;
    auto spec = quick(1);
    spec.l1_coeff = 0.0f;
    spec.mask_learning_rate = 0.0f;
    auto r = sensitivity_epoch(pre, ds, spec);
    for (const auto* pool : {&r.scores.attn, &r.scores.ffn})
        for (const auto& l : *pool)
            for (float v : l) EXPECT_EQ(v, 1.0f);
}

TEST(Sensitivity, LeavesPretrainedUntouchedAndPullsScoresDown) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(1)).model;
    auto copy = pre.clone();
    auto spec = quick(1);
    spec.l1_coeff = 0.01f;
    auto r = sensitivity_epoch(pre, ds, spec);
    EXPECT_TRUE(same_params(pre, copy));
    double total = 0.0;
    std::size_t n = 0;
    for (const auto* pool : {&r.scores.attn, &r.scores.ffn}) {
        for (const auto& l : *pool) {
            for (float v : l) {
                EXPECT_GE(v, 0.0f);
                total += v;
                ++n;
            }
        }
    }
    EXPECT_LT(total / n, 1.0);
    EXPECT_EQ(r.scores.metadata.l1_coeff, spec.l1_coeff);
    EXPECT_EQ(r.scores.metadata.epochs, 1u);
    EXPECT_EQ(r.scores.metadata.task, "keyword");
    EXPECT_EQ(r.record.epoch_losses.size(), 1u);
}

TEST(Sensitivity, DeadDimensionDecaysAtPenaltyRate) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(2)).model;
    const std::size_t dead = 5;
    for (auto& layer : pre.layers) {
        auto w = layer.fc2_w.mutable_values();
        for (std::size_t j = 0; j < pre.config.d_model; ++j) w[dead * pre.config.d_model + j] = 0.0f;
    }
    TrainSpec spec = quick(1);
    spec.optimizer = OptimizerKind::Sgd;
    spec.learning_rate = 0.05f;
    spec.l1_coeff = 0.02f;
    spec.train_weights = false;
    spec.grad_clip = 1e9;
    auto r = sensitivity_epoch(pre, ds, spec);
    const std::size_t steps = (ds.train.size() + spec.batch_size - 1) / spec.batch_size;
    const double expected = 1.0 - static_cast<double>(steps) * spec.learning_rate * spec.l1_coeff;
    for (std::size_t l = 0; l < 2; ++l) {
        // The only gradient reaching the dead gate is λ·sign(m).
        EXPECT_NEAR(r.scores.ffn[l][dead], expected, 1e-5);
        double live = 0.0;
        for (std::size_t j = 0; j < r.scores.ffn[l].size(); ++j) {
            if (j != dead) live += r.scores.ffn[l][j];
        }
        live /= static_cast<double>(r.scores.ffn[l].size() - 1);
        EXPECT_GT(live, r.scores.ffn[l][dead]);
    }
}

TEST(Finetune, AllOnesMaskModesAgree) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(1)).model;
    auto ones = all_ones_mask(pre.config);
    auto a = finetune(pre, ones, ds, quick(2), FinetuneMode::Masked);
    auto b = finetune(pre, ones, ds, quick(2), FinetuneMode::Compacted);
    EXPECT_EQ(a.record.final_metric, b.record.final_metric);
    EXPECT_EQ(a.record.epoch_losses.size(), 2u);
}

TEST(Finetune, MaskedAndCompactedAgree) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(2)).model;
    std::mt19937_64 rng(5);
    auto mask = random_mask(pre.config, 0.5, rng);
    auto a = finetune(pre, mask, ds, quick(2), FinetuneMode::Masked);
    auto b = finetune(pre, mask, ds, quick(2), FinetuneMode::Compacted);
    EXPECT_NEAR(a.record.final_metric, b.record.final_metric, 0.005);
    EXPECT_EQ(evaluate(a.model, ds, &mask), a.record.final_metric);
    EXPECT_EQ(evaluate(b.model, ds), b.record.final_metric);
    EXPECT_EQ(b.mask, all_ones_mask(b.model.config));

    // Nonzero parameter count of the masked result equals the compacted count.
    std::uint64_t nonzero = 0;
    for (const auto& t : a.model.parameters()) {
        nonzero += std::count_if(t.values().begin(), t.values().end(), [](float v) { return v != 0.0f; });
    }
    std::uint64_t compacted_nonzero = 0;
    for (const auto& t : b.model.parameters()) {
        compacted_nonzero += std::count_if(t.values().begin(), t.values().end(), [](float v) { return v != 0.0f; });
    }
    EXPECT_EQ(nonzero, compacted_nonzero);
    EXPECT_EQ(enumerate_params(b.model), count_params(pre.config, &mask).total);
}

TEST(Finetune, DeadPositionsGetExactlyZeroGradient) {
    auto ds = tiny_task();
    auto model = random_model(tiny_config(ds), 6);
    std::mt19937_64 rng(6);
    auto mask = random_mask(model.config, 0.5, rng);
    model.set_requires_grad(true);
    const GateSet gates = gates_from_mask(mask);
    std::vector<std::size_t> idx(32);
    std::iota(idx.begin(), idx.end(), 0);
    {
        Tape tape;
        tape.backward(cross_entropy(forward(model, make_batch(ds.train, idx), &gates), labels_of(ds.train, idx)));
    }
    const std::size_t d = model.config.d_model;
    for (std::size_t l = 0; l < model.config.num_layers; ++l) {
        const auto& p = model.layers[l];
        const std::size_t k = model.config.d_attn, j = model.config.d_ffn[l];
        for (std::size_t i = 0; i < k; ++i) {
            if (mask.attn[l][i]) continue;
            for (std::size_t r = 0; r < d; ++r) {
                EXPECT_EQ(p.wq.grad()[r * k + i], 0.0f);
                EXPECT_EQ(p.wk.grad()[r * k + i], 0.0f);
                EXPECT_EQ(p.wv.grad()[r * k + i], 0.0f);
                EXPECT_EQ(p.wo.grad()[i * d + r], 0.0f);
            }
        }
        for (std::size_t i = 0; i < j; ++i) {
            if (mask.ffn[l][i]) continue;
            for (std::size_t r = 0; r < d; ++r) {
                EXPECT_EQ(p.fc1_w.grad()[r * j + i], 0.0f);
                EXPECT_EQ(p.fc2_w.grad()[i * d + r], 0.0f);
            }
        }
    }
}

TEST(Finetune, IncompatibleMaskIsInputError) {
    auto ds = tiny_task();
    auto pre = EncoderModel::init(tiny_config(ds), 0);
    auto mask = all_ones_mask(pre.config);
    mask.attn[1].push_back(1);
    EXPECT_THROW(finetune(pre, mask, ds, quick(1), FinetuneMode::Masked), InputError);
}

TEST(Evaluate, ConstantPredictorScoresOneOverC) {
    auto ds = gen_keyword_task(40, 6, 4, 16, 400, 2);
    auto c = ModelConfig::make(1, 1, 4, 4, {4}, 6, 40, 4);
    auto m = EncoderModel::init(c, 0);
    for (auto& v : m.classifier_w.mutable_values()) v = 0.0f;
    m.classifier_b.mutable_values()[2] = 1.0f;
    EXPECT_DOUBLE_EQ(evaluate(m, ds), 0.25);
}

TEST(Evaluate, MaskIdentityOrderAndThreads) {
    auto ds = tiny_task();
    auto m = random_model(tiny_config(ds), 8);
    auto ones = all_ones_mask(m.config);
    const double acc = evaluate(m, ds);
    EXPECT_EQ(evaluate(m, ds, &ones), acc);
    auto shuffled = ds.eval;
    std::mt19937_64 rng(1);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(evaluate(m, shuffled), acc);
    EXPECT_EQ(evaluate(m, ds.eval, nullptr, 3), acc);
    EXPECT_EQ(evaluate(m, std::span<const Example>{}), 0.0);
}

TEST(Experiment, CostIsOnePlusThreeN) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(1)).model;
    TrainSpec analysis = quick(1);
    TrainSpec ft = quick(3);
    auto r = sensi_experiment(pre, ds, {0.3, 0.6, 0.9}, analysis, ft);
    EXPECT_EQ(r.training_epochs, 1u + 3u * 3u);
    ASSERT_EQ(r.runs.size(), 3u);
    for (const auto& run : r.runs) EXPECT_LE(density(run.mask).attn, run.budget);
    auto mp = mp_experiment(pre, ds, {0.3, 0.6, 0.9}, ft);
    EXPECT_EQ(mp.training_epochs, 9u);
}

TEST(Experiment, FullBudgetEqualsDenseFinetune) {
    auto ds = tiny_task();
    auto pre = pretrain(tiny_config(ds), ds, quick(1)).model;
    auto sensi = sensi_experiment(pre, ds, {1.0}, quick(1), quick(2));
    auto mp = mp_experiment(pre, ds, {1.0}, quick(2));
    auto dense = finetune(pre, all_ones_mask(pre.config), ds, quick(2), FinetuneMode::Masked);
    EXPECT_EQ(sensi.runs[0].accuracy, dense.record.final_metric);
    EXPECT_EQ(mp.runs[0].accuracy, dense.record.final_metric);
}

TEST(Experiment, FinetuneModeNames) {
    EXPECT_EQ(parse_finetune_mode("masked"), FinetuneMode::Masked);
    EXPECT_EQ(parse_finetune_mode("compacted"), FinetuneMode::Compacted);
    EXPECT_THROW(parse_finetune_mode("pruned"), InputError);
}
