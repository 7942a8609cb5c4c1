#include "sensitrim/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include "sensitrim/errors.hpp"

namespace sensitrim {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over (seed, stream)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{"[UNK]", "[SEP]"}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != "[UNK]" || tokens[1] != "[SEP]") {
        throw FormatError("vocabulary must start with [UNK] and [SEP]");
    }
    for (auto& t : tokens) {
        if (index_.count(t)) throw FormatError("duplicate vocabulary token '" + t + "'");
        index_.emplace(t, static_cast<std::int32_t>(tokens_.size()));
        tokens_.push_back(std::move(t));
    }
}

std::int32_t Vocab::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

std::int32_t Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------

Dataset gen_keyword_task(std::size_t vocab_size, std::size_t seq_len, std::size_t num_classes, std::size_t n_train,
                         std::size_t n_eval, std::uint64_t seed) {
    if (num_classes < 2) throw InputError("keyword task needs at least 2 classes");
    if (vocab_size <= num_classes * 4) {
        throw InputError("keyword task needs vocab_size > 4·num_classes (" + std::to_string(vocab_size) + " ≤ " +
                         std::to_string(num_classes * 4) + ")");
    }
    if (seq_len == 0) throw InputError("keyword task needs seq_len ≥ 1");

    const std::size_t per_class = std::max<std::size_t>(1, (vocab_size - 2) / (4 * num_classes));
    std::vector<std::int32_t> candidates;
    for (std::size_t t = 2; t < vocab_size; ++t) candidates.push_back(static_cast<std::int32_t>(t));
    std::mt19937_64 layout_rng(mix_seed(seed, 0));
    std::shuffle(candidates.begin(), candidates.end(), layout_rng);
    const std::vector<std::int32_t> keywords(candidates.begin(),
                                             candidates.begin() + static_cast<long>(per_class * num_classes));
    const std::vector<std::int32_t> filler(candidates.begin() + static_cast<long>(per_class * num_classes),
                                           candidates.end());

    auto split = [&](std::size_t n, std::uint64_t stream) {
        std::mt19937_64 rng(mix_seed(seed, stream));
        std::vector<Example> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            Example& ex = out[i];
            ex.label = static_cast<std::int32_t>(i % num_classes);
            ex.ids.resize(seq_len);
            for (auto& id : ex.ids) id = filler[uniform_index(rng, filler.size())];
            const std::size_t pos = uniform_index(rng, seq_len);
            ex.ids[pos] = keywords[static_cast<std::size_t>(ex.label) * per_class + uniform_index(rng, per_class)];
        }
        std::shuffle(out.begin(), out.end(), rng);
        return out;
    };

    Dataset ds;
    ds.train = split(n_train, 1);
    ds.eval = split(n_eval, 2);
    std::vector<std::string> names = {"[UNK]", "[SEP]"};
    for (std::size_t t = 2; t < vocab_size; ++t) names.push_back("t" + std::to_string(t));
    ds.vocab = Vocab(std::move(names));
    ds.task.name = "keyword";
    ds.task.num_classes = num_classes;
    ds.task.vocab_size = vocab_size;
    ds.task.max_seq_len = seq_len;
    ds.task.seed = seed;
    ds.task.source = "gen_keyword_task";
    ds.task.key_tokens = keywords;
    ds.task.keys_per_class = per_class;
    return ds;
}

Dataset gen_pair_task(std::size_t vocab_size, std::size_t seg_len, std::size_t n_train, std::size_t n_eval,
                      std::uint64_t seed) {
    if (vocab_size <= 8) throw InputError("pair task needs vocab_size > 8");
    if (seg_len == 0) throw InputError("pair task needs seg_len ≥ 1");
    const std::size_t n_keys = std::max<std::size_t>(2, (vocab_size - 2) / 4);
    std::vector<std::int32_t> candidates;
    for (std::size_t t = 2; t < vocab_size; ++t) candidates.push_back(static_cast<std::int32_t>(t));
    std::mt19937_64 layout_rng(mix_seed(seed, 0));
    std::shuffle(candidates.begin(), candidates.end(), layout_rng);
    const std::vector<std::int32_t> keys(candidates.begin(), candidates.begin() + static_cast<long>(n_keys));
    const std::vector<std::int32_t> filler(candidates.begin() + static_cast<long>(n_keys), candidates.end());

    auto segment = [&](std::mt19937_64& rng, std::int32_t key) {
        std::vector<std::int32_t> seg(seg_len);
        for (auto& id : seg) id = filler[uniform_index(rng, filler.size())];
        seg[uniform_index(rng, seg_len)] = key;
        return seg;
    };
    auto split = [&](std::size_t n, std::uint64_t stream) {
        std::mt19937_64 rng(mix_seed(seed, stream));
        std::vector<Example> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            const bool same = i % 2 == 1;
            const std::size_t a = uniform_index(rng, n_keys);
            std::size_t b = a;
            if (!same) {
                b = uniform_index(rng, n_keys - 1);
                if (b >= a) ++b;
            }
            auto first = segment(rng, keys[a]);
            auto second = segment(rng, keys[b]);
            out[i].ids = first;
            out[i].ids.push_back(kSepId);
            out[i].ids.insert(out[i].ids.end(), second.begin(), second.end());
            out[i].label = same ? 1 : 0;
        }
        std::shuffle(out.begin(), out.end(), rng);
        return out;
    };

    Dataset ds;
    ds.train = split(n_train, 1);
    ds.eval = split(n_eval, 2);
    std::vector<std::string> names = {"[UNK]", "[SEP]"};
    for (std::size_t t = 2; t < vocab_size; ++t) names.push_back("t" + std::to_string(t));
    ds.vocab = Vocab(std::move(names));
    ds.task.name = "pair";
    ds.task.num_classes = 2;
    ds.task.vocab_size = vocab_size;
    ds.task.max_seq_len = 2 * seg_len + 1;
    ds.task.seed = seed;
    ds.task.source = "gen_pair_task";
    ds.task.key_tokens = keys;
    ds.task.keys_per_class = 0;
    return ds;
}

std::int32_t pair_task_label(std::span<const std::int32_t> first, std::span<const std::int32_t> second,
                             const TaskDescriptor& task) {
    for (auto key : task.key_tokens) {
        const bool in_first = std::find(first.begin(), first.end(), key) != first.end();
        const bool in_second = std::find(second.begin(), second.end(), key) != second.end();
        if (in_first && in_second) return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) {
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.push_back(std::move(word));
    }
    return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

struct RawRow {
    std::vector<std::vector<std::string>> texts;
    std::int32_t label;
};

std::vector<RawRow> read_tsv_rows(const std::filesystem::path& path, const TsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_tabs(line);
    auto column = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError(path.string() + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    std::vector<std::size_t> text_cols;
    for (const auto& name : options.text_columns) text_cols.push_back(column(name));
    const std::size_t label_col = column(options.label_column);

    std::vector<RawRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != header.size()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        RawRow row;
        const auto& label_text = fields[label_col];
        auto res = std::from_chars(label_text.data(), label_text.data() + label_text.size(), row.label);
        if (res.ec != std::errc() || res.ptr != label_text.data() + label_text.size() || row.label < 0) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unparseable label '" + label_text +
                              "'");
        }
        for (auto c : text_cols) row.texts.push_back(tokenize(fields[c]));
        rows.push_back(std::move(row));
    }
    return rows;
}

Example encode_row(const RawRow& row, const Vocab& vocab, std::size_t max_seq_len) {
    Example ex;
    ex.label = row.label;
    for (std::size_t c = 0; c < row.texts.size(); ++c) {
        if (c > 0) ex.ids.push_back(kSepId);
        for (const auto& tok : row.texts[c]) ex.ids.push_back(vocab.id(tok));
    }
    if (ex.ids.empty()) ex.ids.push_back(kUnkId);
    if (ex.ids.size() > max_seq_len) ex.ids.resize(max_seq_len);
    return ex;
}

}  // namespace

Dataset load_tsv(const std::filesystem::path& train_path, const TsvOptions& options) {
    if (options.text_columns.empty()) throw InputError("load_tsv: at least one text column is required");
    if (options.max_seq_len == 0) throw InputError("load_tsv: max_seq_len must be positive");
    const auto train_rows = read_tsv_rows(train_path, options);
    std::vector<RawRow> eval_rows;
    if (options.eval_path) eval_rows = read_tsv_rows(*options.eval_path, options);

    Dataset ds;
    if (options.vocab) {
        ds.vocab = *options.vocab;
    } else {
        for (const auto& row : train_rows) {
            for (const auto& col : row.texts) {
                for (const auto& tok : col) ds.vocab.add(tok);
            }
        }
    }
    std::int32_t max_label = 0;
    for (const auto& row : train_rows) {
        ds.train.push_back(encode_row(row, ds.vocab, options.max_seq_len));
        max_label = std::max(max_label, row.label);
    }
    for (const auto& row : eval_rows) {
        ds.eval.push_back(encode_row(row, ds.vocab, options.max_seq_len));
        max_label = std::max(max_label, row.label);
    }
    ds.task.name = train_path.stem().string();
    ds.task.num_classes = static_cast<std::size_t>(max_label) + 1;
    ds.task.vocab_size = ds.vocab.size();
    ds.task.max_seq_len = options.max_seq_len;
    ds.task.source = train_path.string();
    return ds;
}

// ---------------------------------------------------------------------------

TokenBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices) {
    std::vector<std::vector<std::int32_t>> seqs;
    seqs.reserve(indices.size());
    for (auto i : indices) seqs.push_back(examples[i].ids);
    return make_batch(std::span<const std::vector<std::int32_t>>(seqs));
}

TokenBatch make_batch(std::span<const Example> examples) {
    std::vector<std::size_t> all(examples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return make_batch(examples, all);
}

std::vector<std::int32_t> labels_of(std::span<const Example> examples, std::span<const std::size_t> indices) {
    std::vector<std::int32_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(examples[i].label);
    return out;
}

Dataset dataset_from_json(const nlohmann::json& task) {
    try {
        const auto kind = task.at("kind").get<std::string>();
        if (kind == "keyword") {
            return gen_keyword_task(task.at("vocab_size").get<std::size_t>(), task.at("seq_len").get<std::size_t>(),
                                    task.at("num_classes").get<std::size_t>(), task.at("n_train").get<std::size_t>(),
                                    task.at("n_eval").get<std::size_t>(), task.value("seed", std::uint64_t{0}));
        }
        if (kind == "pair") {
            return gen_pair_task(task.at("vocab_size").get<std::size_t>(), task.at("seg_len").get<std::size_t>(),
                                 task.at("n_train").get<std::size_t>(), task.at("n_eval").get<std::size_t>(),
                                 task.value("seed", std::uint64_t{0}));
        }
        if (kind == "tsv") {
            TsvOptions opt;
            opt.text_columns = task.at("text_columns").get<std::vector<std::string>>();
            opt.label_column = task.at("label_column").get<std::string>();
            opt.max_seq_len = task.value("max_seq_len", std::size_t{128});
            if (task.contains("eval")) opt.eval_path = task["eval"].get<std::string>();
            if (task.contains("vocab")) opt.vocab = Vocab::load(task["vocab"].get<std::string>());
            return load_tsv(task.at("train").get<std::string>(), opt);
        }
        throw InputError("unknown task kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("task description: ") + e.what());
    }
}

}  // namespace sensitrim
