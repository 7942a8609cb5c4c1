#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sensitrim/model.hpp"

namespace sensitrim {

inline constexpr std::int32_t kUnkId = 0;
inline constexpr std::int32_t kSepId = 1;

struct Example {
    std::vector<std::int32_t> ids;
    std::int32_t label = 0;
    bool operator==(const Example&) const = default;
};

/// Whitespace vocabulary; id 0 is "[UNK]" and id 1 is "[SEP]".
class Vocab {
public:
    Vocab();
    explicit Vocab(std::vector<std::string> tokens);

    std::int32_t add(const std::string& token);
    /// kUnkId for unknown tokens.
    std::int32_t id(const std::string& token) const;
    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    /// One token per line; line number is the id.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

struct TaskDescriptor {
    std::string name;
    std::size_t num_classes = 0;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 0;
    std::uint64_t seed = 0;
    std::string source;  // generator name or file path
    /// Planted key tokens (keyword sets flattened class-major, or pair keys).
    std::vector<std::int32_t> key_tokens;
    std::size_t keys_per_class = 0;
};

struct Dataset {
    std::vector<Example> train;
    std::vector<Example> eval;
    Vocab vocab;
    TaskDescriptor task;
};

/// Label c is planted by exactly one token from the c-th of num_classes
/// disjoint keyword sets; every other position holds filler. Labels are
/// balanced and both splits come from disjoint generator streams.
Dataset gen_keyword_task(std::size_t vocab_size, std::size_t seq_len, std::size_t num_classes, std::size_t n_train,
                         std::size_t n_eval, std::uint64_t seed);

/// Two segments of seg_len tokens joined by [SEP]; each segment carries one
/// planted key token and the label is 1 iff both carry the same key.
Dataset gen_pair_task(std::size_t vocab_size, std::size_t seg_len, std::size_t n_train, std::size_t n_eval,
                      std::uint64_t seed);

/// 1 iff the two segments share any of the task's key tokens.
std::int32_t pair_task_label(std::span<const std::int32_t> first, std::span<const std::int32_t> second,
                             const TaskDescriptor& task);

struct TsvOptions {
    std::vector<std::string> text_columns;
    std::string label_column;
    std::size_t max_seq_len = 128;
    /// When absent the vocabulary is built from the training file.
    std::optional<Vocab> vocab;
    std::optional<std::filesystem::path> eval_path;
};

/// Lowercased whitespace tokenization; multiple text columns are joined with
/// [SEP]; sequences are truncated to max_seq_len. Labels are integers.
Dataset load_tsv(const std::filesystem::path& train_path, const TsvOptions& options);

/// Lowercased whitespace split.
std::vector<std::string> tokenize(const std::string& text);

TokenBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices);
TokenBatch make_batch(std::span<const Example> examples);
std::vector<std::int32_t> labels_of(std::span<const Example> examples, std::span<const std::size_t> indices);

/// Builds the dataset named by a task JSON object:
///   {"kind": "keyword", "vocab_size", "seq_len", "num_classes", "n_train", "n_eval", "seed"}
///   {"kind": "pair", "vocab_size", "seg_len", "n_train", "n_eval", "seed"}
///   {"kind": "tsv", "train", "eval"?, "text_columns", "label_column", "max_seq_len", "vocab"?}
Dataset dataset_from_json(const nlohmann::json& task);

}  // namespace sensitrim
