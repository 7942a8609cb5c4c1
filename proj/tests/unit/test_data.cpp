#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "sensitrim/data.hpp"
#include "sensitrim/errors.hpp"
#include "temp_dir.hpp"

using namespace sensitrim;
using sensitrim::testing::TempDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::size_t keyword_hits(const Example& ex, const TaskDescriptor& t) {
    std::size_t hits = 0;
    for (auto id : ex.ids) hits += std::count(t.key_tokens.begin(), t.key_tokens.end(), id);
    return hits;
}

}  // namespace

TEST(KeywordTask, Deterministic) {
    auto a = gen_keyword_task(40, 8, 3, 200, 50, 7);
    auto b = gen_keyword_task(40, 8, 3, 200, 50, 7);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.eval, b.eval);
    auto c = gen_keyword_task(40, 8, 3, 200, 50, 8);
    EXPECT_NE(a.train, c.train);
}

TEST(KeywordTask, ExactlyOneKeywordMatchingLabel) {
    auto ds = gen_keyword_task(40, 8, 3, 300, 60, 1);
    const auto& t = ds.task;
    for (const auto* split : {&ds.train, &ds.eval}) {
        for (const auto& ex : *split) {
            ASSERT_EQ(keyword_hits(ex, t), 1u);
            EXPECT_EQ(ex.ids.size(), 8u);
            for (auto id : ex.ids) {
                ASSERT_GE(id, 2);
                ASSERT_LT(id, 40);
                auto it = std::find(t.key_tokens.begin(), t.key_tokens.end(), id);
                if (it != t.key_tokens.end()) {
                    EXPECT_EQ(static_cast<std::size_t>(it - t.key_tokens.begin()) / t.keys_per_class,
                              static_cast<std::size_t>(ex.label));
                }
            }
        }
    }
}

TEST(KeywordTask, BalancedLabels) {
    auto ds = gen_keyword_task(64, 8, 4, 1000, 1000, 3);
    for (const auto* split : {&ds.train, &ds.eval}) {
        std::map<int, std::size_t> counts;
        for (const auto& ex : *split) ++counts[ex.label];
        std::size_t majority = 0;
        for (auto& [label, n] : counts) {
            EXPECT_NEAR(static_cast<double>(n) / split->size(), 0.25, 0.02);
            majority = std::max(majority, n);
        }
        EXPECT_NEAR(static_cast<double>(majority) / split->size(), 0.25, 0.02);
    }
}

TEST(KeywordTask, ParameterConflicts) {
    EXPECT_THROW(gen_keyword_task(12, 8, 3, 10, 10, 0), InputError);
    EXPECT_THROW(gen_keyword_task(40, 0, 3, 10, 10, 0), InputError);
    EXPECT_THROW(gen_keyword_task(40, 8, 1, 10, 10, 0), InputError);
}

TEST(PairTask, LabelsFollowSharedKey) {
    auto ds = gen_pair_task(40, 5, 200, 50, 2);
    EXPECT_EQ(ds.task.max_seq_len, 11u);
    std::map<int, std::size_t> counts;
    for (const auto& ex : ds.train) {
        ASSERT_EQ(ex.ids.size(), 11u);
        EXPECT_EQ(ex.ids[5], kSepId);
        std::span<const std::int32_t> ids(ex.ids);
        EXPECT_EQ(pair_task_label(ids.subspan(0, 5), ids.subspan(6), ds.task), ex.label);
        ++counts[ex.label];
    }
    EXPECT_EQ(counts[0], counts[1]);
}

TEST(PairTask, IdenticalAndDisjointSegments) {
    auto ds = gen_pair_task(40, 4, 10, 10, 5);
    const auto& ex = ds.train.front();
    std::vector<std::int32_t> seg(ex.ids.begin(), ex.ids.begin() + 4);
    EXPECT_EQ(pair_task_label(seg, seg, ds.task), 1);
    std::vector<std::int32_t> no_keys;
    for (std::int32_t t = 2; t < 40 && no_keys.size() < 4; ++t) {
        if (std::find(ds.task.key_tokens.begin(), ds.task.key_tokens.end(), t) == ds.task.key_tokens.end()) {
            no_keys.push_back(t);
        }
    }
    EXPECT_EQ(pair_task_label(seg, no_keys, ds.task), 0);
}

TEST(PairTask, Deterministic) {
    EXPECT_EQ(gen_pair_task(40, 5, 100, 20, 9).train, gen_pair_task(40, 5, 100, 20, 9).train);
    EXPECT_THROW(gen_pair_task(8, 5, 10, 10, 0), InputError);
}

TEST(Tokenize, LowercaseWhitespace) {
    EXPECT_EQ(tokenize("  Hello\tWORLD  again "), (std::vector<std::string>{"hello", "world", "again"}));
    EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Tsv, TwoRows) {
    TempDir dir("tsv");
    write(dir / "train.tsv", "sentence\tlabel\nA good film\t1\nbad film\t0\n");
    TsvOptions opt;
    opt.text_columns = {"sentence"};
    opt.label_column = "label";
    auto ds = load_tsv(dir / "train.tsv", opt);
    ASSERT_EQ(ds.train.size(), 2u);
    EXPECT_EQ(ds.train[0].label, 1);
    EXPECT_EQ(ds.train[0].ids.size(), 3u);
    EXPECT_EQ(ds.train[1].ids[1], ds.train[0].ids[2]);  // "film"
    EXPECT_EQ(ds.task.num_classes, 2u);
    EXPECT_EQ(ds.vocab.token(0), "[UNK]");
    EXPECT_EQ(ds.vocab.token(1), "[SEP]");
}

TEST(Tsv, UnknownTokenInEvalIsUnk) {
    TempDir dir("tsv");
    write(dir / "train.tsv", "sentence\tlabel\nalpha beta\t0\n");
    write(dir / "eval.tsv", "sentence\tlabel\nalpha gamma\t1\n");
    TsvOptions opt;
    opt.text_columns = {"sentence"};
    opt.label_column = "label";
    opt.eval_path = dir / "eval.tsv";
    auto ds = load_tsv(dir / "train.tsv", opt);
    ASSERT_EQ(ds.eval.size(), 1u);
    EXPECT_EQ(ds.eval[0].ids[0], ds.vocab.id("alpha"));
    EXPECT_EQ(ds.eval[0].ids[1], kUnkId);
}

TEST(Tsv, PairColumnsJoinedWithSepAndTruncated) {
    TempDir dir("tsv");
    write(dir / "train.tsv", "q1\tq2\tis_dup\nhow are you\twho are you\t1\n");
    TsvOptions opt;
    opt.text_columns = {"q1", "q2"};
    opt.label_column = "is_dup";
    opt.max_seq_len = 5;
    auto ds = load_tsv(dir / "train.tsv", opt);
    ASSERT_EQ(ds.train[0].ids.size(), 5u);
    EXPECT_EQ(ds.train[0].ids[3], kSepId);
}

TEST(Tsv, MissingColumnNamesColumn) {
    TempDir dir("tsv");
    write(dir / "train.tsv", "sentence\tlabel\nx\t0\n");
    TsvOptions opt;
    opt.text_columns = {"text"};
    opt.label_column = "label";
    try {
        load_tsv(dir / "train.tsv", opt);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("'text'"), std::string::npos);
    }
}

TEST(Tsv, BadLabelNamesLine) {
    TempDir dir("tsv");
    write(dir / "train.tsv", "sentence\tlabel\nx\t0\ny\tpositive\n");
    TsvOptions opt;
    opt.text_columns = {"sentence"};
    opt.label_column = "label";
    try {
        load_tsv(dir / "train.tsv", opt);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
}

TEST(Tsv, MissingFileIsIoError) {
    TsvOptions opt;
    opt.text_columns = {"sentence"};
    opt.label_column = "label";
    EXPECT_THROW(load_tsv("/nonexistent/train.tsv", opt), IoError);
}

TEST(Vocab, ExportReloadGivesSameIds) {
    TempDir dir("vocab");
    write(dir / "train.tsv", "sentence\tlabel\nthe cat sat\t0\non the mat\t1\n");
    TsvOptions opt;
    opt.text_columns = {"sentence"};
    opt.label_column = "label";
    auto ds = load_tsv(dir / "train.tsv", opt);
    ds.vocab.save(dir / "vocab.txt");
    opt.vocab = Vocab::load(dir / "vocab.txt");
    auto again = load_tsv(dir / "train.tsv", opt);
    EXPECT_EQ(again.train, ds.train);
    EXPECT_EQ(again.vocab.tokens(), ds.vocab.tokens());
}

TEST(DatasetJson, Kinds) {
    auto k = dataset_from_json({{"kind", "keyword"}, {"vocab_size", 40}, {"seq_len", 6}, {"num_classes", 2},
                                {"n_train", 20}, {"n_eval", 10}, {"seed", 3}});
    EXPECT_EQ(k.train.size(), 20u);
    auto p = dataset_from_json({{"kind", "pair"}, {"vocab_size", 40}, {"seg_len", 3}, {"n_train", 8}, {"n_eval", 4}});
    EXPECT_EQ(p.task.max_seq_len, 7u);
    EXPECT_THROW(dataset_from_json({{"kind", "squad"}}), InputError);
    EXPECT_THROW(dataset_from_json({{"kind", "keyword"}}), FormatError);
}

TEST(Batch, PadsWithZeroAndRecordsLengths) {
    std::vector<Example> ex{{{5, 6, 7}, 0}, {{8}, 1}};
    auto b = make_batch(ex);
    EXPECT_EQ(b.seq, 3u);
    EXPECT_EQ(b.ids, (std::vector<std::int32_t>{5, 6, 7, 8, 0, 0}));
    EXPECT_EQ(b.lengths, (std::vector<std::size_t>{3, 1}));
}
