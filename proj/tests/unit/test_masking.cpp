#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "sensitrim/errors.hpp"
#include "sensitrim/masking.hpp"

using namespace sensitrim;
using namespace sensitrim::testing;

namespace {

SensitivityScores single_layer(std::vector<float> attn, std::vector<float> ffn) {
    SensitivityScores s;
    s.attn = {std::move(attn)};
    s.ffn = {std::move(ffn)};
    return s;
}

SensitivityScores random_scores(const ModelConfig& c, std::mt19937_64& rng, bool coarse = false) {
    SensitivityScores s = init_masks(c);
    std::uniform_real_distribution<float> u(0.0f, 2.0f);
    std::uniform_int_distribution<int> q(0, 4);
    for (auto* pool : {&s.attn, &s.ffn})
        for (auto& layer : *pool)
            for (auto& v : layer) v = coarse ? 0.25f * static_cast<float>(q(rng)) : u(rng);
    return s;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
    for (std::size_t l = 0; l < a.attn.size(); ++l) {
        for (std::size_t i = 0; i < a.attn[l].size(); ++i)
            if (a.attn[l][i] && !b.attn[l][i]) return false;
        for (std::size_t i = 0; i < a.ffn[l].size(); ++i)
            if (a.ffn[l][i] && !b.ffn[l][i]) return false;
    }
    return true;
}

}  // namespace

TEST(InitMasks, AllOnesWithConfigShapes) {
    auto c = ModelConfig::make(3, 2, 4, 6, {5, 7, 2}, 4, 10, 2);
    auto s = init_masks(c);
    ASSERT_EQ(s.attn.size(), 3u);
    ASSERT_EQ(s.ffn.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(s.attn[l].size(), 6u);
        EXPECT_EQ(s.ffn[l].size(), c.d_ffn[l]);
        for (float v : s.attn[l]) EXPECT_EQ(v, 1.0f);
        for (float v : s.ffn[l]) EXPECT_EQ(v, 1.0f);
    }
}

TEST(Threshold, FullBudgetKeepsEverything) {
    std::mt19937_64 rng(1);
    auto c = ModelConfig::make(2, 2, 4, 4, {6, 3}, 4, 10, 2);
    auto [mask, th] = threshold_to_budget(random_scores(c, rng), 1.0);
    auto d = density(mask);
    EXPECT_EQ(d.attn, 1.0);
    EXPECT_EQ(d.ffn, 1.0);
    EXPECT_TRUE(std::isinf(th.attn) && th.attn < 0);
    EXPECT_TRUE(std::isinf(th.ffn) && th.ffn < 0);
}

TEST(Threshold, SortAndCutOracle) {
    auto [mask, th] = threshold_to_budget(single_layer({0.9f, 0.1f, 0.5f, 0.7f}, {0.9f, 0.1f, 0.5f, 0.7f}), 0.5);
    EXPECT_EQ(mask.attn[0], (std::vector<std::uint8_t>{1, 0, 0, 1}));
    EXPECT_EQ(mask.ffn[0], (std::vector<std::uint8_t>{1, 0, 0, 1}));
    EXPECT_EQ(th.attn, 0.5f);
    EXPECT_EQ(th.ffn, 0.5f);
}

TEST(Threshold, UniformScoresTieBreakByIndex) {
    auto [mask, th] = threshold_to_budget(single_layer(std::vector<float>(8, 1.0f), std::vector<float>(8, 1.0f)), 0.25);
    EXPECT_EQ(mask.attn[0], (std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 0}));
    EXPECT_EQ(th.attn, 1.0f);
}

TEST(Threshold, TieBreakAcrossLayers) {
    SensitivityScores s;
    s.attn = {{0.5f, 0.5f}, {0.5f, 0.5f}};
    s.ffn = {{1.0f}, {1.0f}};
    auto [mask, th] = threshold_to_budget(s, 0.5);
    EXPECT_EQ(mask.attn[0], (std::vector<std::uint8_t>{1, 1}));
    EXPECT_EQ(mask.attn[1], (std::vector<std::uint8_t>{0, 0}));
    EXPECT_EQ(mask.ffn[0], (std::vector<std::uint8_t>{1}));
    EXPECT_EQ(mask.ffn[1], (std::vector<std::uint8_t>{0}));
}

TEST(Threshold, InvalidBudget) {
    auto s = single_layer({1, 2}, {1, 2});
    EXPECT_THROW(threshold_to_budget(s, 0.0), InputError);
    EXPECT_THROW(threshold_to_budget(s, -0.1), InputError);
    EXPECT_THROW(threshold_to_budget(s, 1.01), InputError);
    EXPECT_THROW(threshold_to_budget(s, std::nan("")), InputError);
}

TEST(Threshold, PerLayerBudgetsMatchDensity) {
    std::mt19937_64 rng(2);
    auto c = ModelConfig::make(3, 2, 4, 8, {6, 10, 4}, 4, 10, 2);
    auto [mask, th] = threshold_to_budget(random_scores(c, rng), 0.4);
    auto d = density(mask);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(mask.per_layer[l].attn, d.attn_per_layer[l]);
        EXPECT_EQ(mask.per_layer[l].ffn, d.ffn_per_layer[l]);
    }
    EXPECT_EQ(mask.budget, 0.4);
}

TEST(Threshold, ThresholdIsLargestExcludedScore) {
    std::mt19937_64 rng(3);
    auto c = ModelConfig::make(2, 2, 4, 8, {9, 5}, 4, 10, 2);
    auto s = random_scores(c, rng);
    auto [mask, th] = threshold_to_budget(s, 0.3);
    float largest_excluded = -INFINITY, smallest_kept = INFINITY;
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t i = 0; i < s.attn[l].size(); ++i) {
            if (mask.attn[l][i]) smallest_kept = std::min(smallest_kept, s.attn[l][i]);
            else largest_excluded = std::max(largest_excluded, s.attn[l][i]);
        }
    }
    EXPECT_EQ(th.attn, largest_excluded);
    EXPECT_GE(smallest_kept, th.attn);
}

TEST(Density, ExactHalfOfThousand) {
    std::vector<float> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>((i * 7919) % 1000);
    auto [mask, th] = threshold_to_budget(single_layer(v, v), 0.5);
    EXPECT_EQ(density(mask).attn, 0.5);
    EXPECT_EQ(density(mask).ffn, 0.5);
}

TEST(Density, RetainedCountIsExactFloor) {
    EXPECT_EQ(retained_count(0.1, 10), 1u);
    EXPECT_EQ(retained_count(0.3, 10), 3u);
    EXPECT_EQ(retained_count(0.7, 10), 7u);
    EXPECT_EQ(retained_count(0.29, 100), 29u);
    EXPECT_EQ(retained_count(0.05, 19), 0u);
    EXPECT_EQ(retained_count(1.0, 0), 0u);
    for (std::size_t d = 1; d < 300; ++d) {
        for (int b = 1; b <= 20; ++b) {
            const double B = 0.05 * b;
            const auto k = retained_count(B, d);
            EXPECT_LE(static_cast<double>(k) / static_cast<double>(d), B);
            if (k < d) EXPECT_GT(static_cast<double>(k + 1) / static_cast<double>(d), B);
        }
    }
}

TEST(Properties, BudgetMonotonicityDeterminism) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        auto c = random_config(rng);
        auto s = random_scores(c, rng, trial % 2 == 0);
        BinaryMask prev;
        for (int b = 1; b <= 19; ++b) {
            const double B = 0.05 * b;
            auto [mask, th] = threshold_to_budget(s, B);
            auto d = density(mask);
            EXPECT_LE(d.attn, B);
            EXPECT_LE(d.ffn, B);
            EXPECT_EQ(threshold_to_budget(s, B).first, mask);
            if (b > 1) EXPECT_TRUE(subset(prev, mask));
            prev = mask;
        }
    }
}

TEST(Properties, ScaleInvariancePerModuleType) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto c = random_config(rng);
        auto s = random_scores(c, rng, trial % 2 == 0);
        auto scaled = s;
        for (auto& l : scaled.attn)
            for (auto& v : l) v *= 4.0f;
        for (auto& l : scaled.ffn)
            for (auto& v : l) v *= 0.125f;
        for (double B : {0.1, 0.5, 0.9}) {
            EXPECT_EQ(threshold_to_budget(s, B).first, threshold_to_budget(scaled, B).first);
        }
    }
}

TEST(HeadView, PartitionReconstructsLayer) {
    auto c = ModelConfig::make(2, 3, 6, 9, {4, 4}, 4, 10, 2);
    std::mt19937_64 rng(6);
    auto s = random_scores(c, rng);
    for (std::size_t l = 0; l < 2; ++l) {
        std::vector<float> joined;
        for (std::size_t h = 0; h < 3; ++h) {
            auto v = head_view(s.attn, c, l, h);
            EXPECT_EQ(v.size(), 3u);
            joined.insert(joined.end(), v.begin(), v.end());
        }
        EXPECT_EQ(joined, s.attn[l]);
    }
    EXPECT_THROW(head_segment(c, 0, 3), InputError);
}

TEST(HeadView, Sensitivities) {
    auto c = ModelConfig::make(1, 4, 8, 8, {4}, 4, 10, 2);
    auto mask = all_ones_mask(c);
    for (std::size_t h = 0; h < 4; ++h) EXPECT_EQ(head_sensitivity(mask, c, 0, h), 1.0);
    mask.attn[0][4] = mask.attn[0][5] = 0;
    refresh_layer_budgets(mask);
    EXPECT_EQ(head_sensitivity(mask, c, 0, 2), 0.0);
    for (std::size_t h : {0u, 1u, 3u}) EXPECT_EQ(head_sensitivity(mask, c, 0, h), 1.0);

    SensitivityScores s = init_masks(c);
    s.attn[0] = {1, 3, 0, 0, 2, 2, 5, 7};
    EXPECT_EQ(head_sensitivity(s, c, 0, 0), 2.0);
    EXPECT_EQ(head_sensitivity(s, c, 0, 3), 6.0);
}

TEST(Gates, RoundTripScores) {
    std::mt19937_64 rng(7);
    auto c = random_config(rng);
    auto s = random_scores(c, rng);
    s.metadata.task = "t";
    auto g = gates_from_scores(s, true);
    EXPECT_TRUE(g[0].attn.requires_grad());
    EXPECT_EQ(scores_from_gates(g, s.metadata), s);
}

TEST(Csv, ScoresRoundTrip) {
    std::mt19937_64 rng(8);
    auto c = ModelConfig::make(2, 2, 4, 4, {3, 5}, 4, 10, 2);
    auto s = random_scores(c, rng);
    std::stringstream ss;
    write_scores_csv(ss, s, c);
    const std::string text = ss.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "module_type,layer,head,position,score");
    auto back = read_scores_csv(ss);
    EXPECT_EQ(back.attn, s.attn);
    EXPECT_EQ(back.ffn, s.ffn);
}

TEST(Csv, MaskRoundTrip) {
    std::mt19937_64 rng(9);
    auto c = ModelConfig::make(2, 2, 4, 4, {3, 5}, 4, 10, 2);
    auto [mask, th] = threshold_to_budget(random_scores(c, rng), 0.5);
    std::stringstream ss;
    write_mask_csv(ss, mask, c);
    auto back = read_mask_csv(ss);
    EXPECT_EQ(back.attn, mask.attn);
    EXPECT_EQ(back.ffn, mask.ffn);
    EXPECT_EQ(back.per_layer, mask.per_layer);
}

TEST(Csv, MalformedInput) {
    std::stringstream bad_header("module,layer\n");
    EXPECT_THROW(read_scores_csv(bad_header), FormatError);
    std::stringstream bad_value("module_type,layer,head,position,score\nattn,0,0,0,abc\n");
    EXPECT_THROW(read_scores_csv(bad_value), FormatError);
    std::stringstream bad_bit("module_type,layer,head,position,bit\nffn,0,-1,0,2\n");
    EXPECT_THROW(read_mask_csv(bad_bit), FormatError);
}
