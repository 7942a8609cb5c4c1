#include "sensitrim/masking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sensitrim/errors.hpp"

namespace sensitrim {

SensitivityScores init_masks(const ModelConfig& config) {
    SensitivityScores s;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        s.attn.emplace_back(config.attn_width(l), 1.0f);
        s.ffn.emplace_back(config.d_ffn[l], 1.0f);
    }
    return s;
}

BinaryMask all_ones_mask(const ModelConfig& config) {
    BinaryMask m;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        m.attn.emplace_back(config.attn_width(l), std::uint8_t{1});
        m.ffn.emplace_back(config.d_ffn[l], std::uint8_t{1});
    }
    m.budget = 1.0;
    refresh_layer_budgets(m);
    return m;
}

std::size_t retained_count(double budget, std::size_t total) {
    if (total == 0) return 0;
    const double d = static_cast<double>(total);
    auto k = static_cast<std::size_t>(std::floor(budget * d));
    k = std::min(k, total);
    // Correct the floor against rounding in budget·d so k/d ≤ budget holds exactly.
    while (k < total && static_cast<double>(k + 1) / d <= budget) ++k;
    while (k > 0 && static_cast<double>(k) / d > budget) --k;
    return k;
}

namespace {

double fraction(std::size_t kept, std::size_t total) {
    return total == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(total);
}

std::size_t count_ones(const std::vector<std::uint8_t>& bits) {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

// Top-k over one module-type pool. Returns the per-layer bits and the largest
// excluded score.
std::pair<std::vector<std::vector<std::uint8_t>>, float> select_pool(const std::vector<std::vector<float>>& pool,
                                                                     double budget) {
    struct Entry {
        float score;
        std::uint32_t layer;
        std::uint32_t pos;
    };
    std::vector<Entry> entries;
    std::vector<std::vector<std::uint8_t>> bits(pool.size());
    for (std::size_t l = 0; l < pool.size(); ++l) {
        bits[l].assign(pool[l].size(), 0);
        for (std::size_t i = 0; i < pool[l].size(); ++i) {
            if (!std::isfinite(pool[l][i])) {
                throw InputError("score at layer " + std::to_string(l) + " position " + std::to_string(i) +
                                 " is not finite");
            }
            entries.push_back({pool[l][i], static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(i)});
        }
    }
    const std::size_t keep = retained_count(budget, entries.size());
    auto before = [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.pos < b.pos;
    };
    float threshold = -std::numeric_limits<float>::infinity();
    if (keep < entries.size()) {
        std::nth_element(entries.begin(), entries.begin() + static_cast<long>(keep), entries.end(), before);
        threshold = entries[keep].score;
    }
    for (std::size_t i = 0; i < keep; ++i) bits[entries[i].layer][entries[i].pos] = 1;
    return {std::move(bits), threshold};
}

}  // namespace

void refresh_layer_budgets(BinaryMask& mask) {
    mask.per_layer.clear();
    for (std::size_t l = 0; l < mask.attn.size(); ++l) {
        LayerBudget b;
        b.attn = fraction(count_ones(mask.attn[l]), mask.attn[l].size());
        b.ffn = l < mask.ffn.size() ? fraction(count_ones(mask.ffn[l]), mask.ffn[l].size()) : 0.0;
        mask.per_layer.push_back(b);
    }
}

std::pair<BinaryMask, Threshold> threshold_to_budget(const SensitivityScores& scores, double budget) {
    if (!(budget > 0.0) || budget > 1.0) {
        throw InputError("budget must lie in (0, 1], got " + std::to_string(budget));
    }
    if (scores.attn.size() != scores.ffn.size()) throw ShapeError("scores: attn and ffn layer counts differ");
    BinaryMask mask;
    Threshold th;
    std::tie(mask.attn, th.attn) = select_pool(scores.attn, budget);
    std::tie(mask.ffn, th.ffn) = select_pool(scores.ffn, budget);
    mask.budget = budget;
    refresh_layer_budgets(mask);
    return {std::move(mask), th};
}

DensityReport density(const BinaryMask& mask) {
    DensityReport r;
    for (const auto& bits : mask.attn) {
        const auto ones = count_ones(bits);
        r.attn_kept += ones;
        r.attn_total += bits.size();
        r.attn_per_layer.push_back(fraction(ones, bits.size()));
    }
    for (const auto& bits : mask.ffn) {
        const auto ones = count_ones(bits);
        r.ffn_kept += ones;
        r.ffn_total += bits.size();
        r.ffn_per_layer.push_back(fraction(ones, bits.size()));
    }
    r.attn = fraction(r.attn_kept, r.attn_total);
    r.ffn = fraction(r.ffn_kept, r.ffn_total);
    return r;
}

std::pair<std::size_t, std::size_t> head_segment(const ModelConfig& config, std::size_t layer, std::size_t head) {
    if (layer >= config.num_layers) throw InputError("layer " + std::to_string(layer) + " out of range");
    if (head >= config.num_heads) throw InputError("head " + std::to_string(head) + " out of range");
    const auto& widths = config.head_widths[layer];
    const std::size_t start = std::accumulate(widths.begin(), widths.begin() + static_cast<long>(head), std::size_t{0});
    return {start, widths[head]};
}

double head_sensitivity(const BinaryMask& mask, const ModelConfig& config, std::size_t layer, std::size_t head) {
    const auto view = head_view(mask.attn, config, layer, head);
    if (view.empty()) return 0.0;
    return fraction(static_cast<std::size_t>(std::count_if(view.begin(), view.end(), [](auto b) { return b != 0; })),
                    view.size());
}

double head_sensitivity(const SensitivityScores& scores, const ModelConfig& config, std::size_t layer,
                        std::size_t head) {
    const auto view = head_view(scores.attn, config, layer, head);
    if (view.empty()) return 0.0;
    double total = 0.0;
    for (float s : view) total += s;
    return total / static_cast<double>(view.size());
}

GateSet gates_from_mask(const BinaryMask& mask) {
    GateSet gates(mask.attn.size());
    for (std::size_t l = 0; l < mask.attn.size(); ++l) {
        std::vector<float> a(mask.attn[l].begin(), mask.attn[l].end());
        std::vector<float> f(mask.ffn.at(l).begin(), mask.ffn.at(l).end());
        const std::size_t na = a.size(), nf = f.size();
        gates[l].attn = Tensor::from({na}, std::move(a));
        gates[l].ffn = Tensor::from({nf}, std::move(f));
    }
    return gates;
}

GateSet gates_from_scores(const SensitivityScores& scores, bool requires_grad) {
    GateSet gates(scores.attn.size());
    for (std::size_t l = 0; l < scores.attn.size(); ++l) {
        gates[l].attn = Tensor::from({scores.attn[l].size()}, scores.attn[l], requires_grad);
        gates[l].ffn = Tensor::from({scores.ffn.at(l).size()}, scores.ffn[l], requires_grad);
    }
    return gates;
}

SensitivityScores scores_from_gates(const GateSet& gates, ScoreMetadata metadata) {
    SensitivityScores s;
    for (const auto& g : gates) {
        s.attn.emplace_back(g.attn.values().begin(), g.attn.values().end());
        s.ffn.emplace_back(g.ffn.values().begin(), g.ffn.values().end());
    }
    s.metadata = std::move(metadata);
    return s;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr const char* kScoreHeader = "module_type,layer,head,position,score";
constexpr const char* kMaskHeader = "module_type,layer,head,position,bit";

std::string format_float(float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <class T>
void write_rows(std::ostream& out, const std::vector<std::vector<T>>& attn, const std::vector<std::vector<T>>& ffn,
                const ModelConfig& config, auto&& format) {
    for (std::size_t l = 0; l < attn.size(); ++l) {
        std::size_t head = 0, head_end = config.head_widths.at(l).at(0);
        for (std::size_t i = 0; i < attn[l].size(); ++i) {
            while (i >= head_end && head + 1 < config.num_heads) head_end += config.head_widths[l][++head];
            out << "attn," << l << ',' << head << ',' << i << ',' << format(attn[l][i]) << '\n';
        }
    }
    for (std::size_t l = 0; l < ffn.size(); ++l) {
        for (std::size_t i = 0; i < ffn[l].size(); ++i) {
            out << "ffn," << l << ",-1," << i << ',' << format(ffn[l][i]) << '\n';
        }
    }
}

struct CsvRow {
    bool attn;
    std::size_t layer;
    std::size_t position;
    std::string value;
};

std::vector<CsvRow> read_rows(std::istream& in, const char* header) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv: missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) throw FormatError("csv: expected header '" + std::string(header) + "', got '" + line + "'");
    std::vector<CsvRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 5) throw FormatError("csv line " + std::to_string(line_no) + ": expected 5 fields");
        CsvRow row;
        if (fields[0] == "attn") {
            row.attn = true;
        } else if (fields[0] == "ffn") {
            row.attn = false;
        } else {
            throw FormatError("csv line " + std::to_string(line_no) + ": unknown module_type '" + fields[0] + "'");
        }
        try {
            row.layer = std::stoul(fields[1]);
            row.position = std::stoul(fields[3]);
        } catch (const std::exception&) {
            throw FormatError("csv line " + std::to_string(line_no) + ": bad layer or position");
        }
        row.value = fields[4];
        rows.push_back(std::move(row));
    }
    return rows;
}

template <class T>
void place(std::vector<std::vector<T>>& dst, std::size_t layer, std::size_t pos, T value) {
    if (dst.size() <= layer) dst.resize(layer + 1);
    if (dst[layer].size() != pos) {
        throw FormatError("csv: positions of layer " + std::to_string(layer) + " must be listed in order");
    }
    dst[layer].push_back(value);
}

}  // namespace

void write_scores_csv(std::ostream& out, const SensitivityScores& scores, const ModelConfig& config) {
    out << kScoreHeader << '\n';
    write_rows(out, scores.attn, scores.ffn, config, [](float v) { return format_float(v); });
}

SensitivityScores read_scores_csv(std::istream& in) {
    SensitivityScores s;
    for (const auto& row : read_rows(in, kScoreHeader)) {
        float v = 0.0f;
        auto res = std::from_chars(row.value.data(), row.value.data() + row.value.size(), v);
        if (res.ec != std::errc() || res.ptr != row.value.data() + row.value.size()) {
            throw FormatError("csv: unparseable score '" + row.value + "'");
        }
        place(row.attn ? s.attn : s.ffn, row.layer, row.position, v);
    }
    const auto layers = std::max(s.attn.size(), s.ffn.size());
    s.attn.resize(layers);
    s.ffn.resize(layers);
    return s;
}

void write_mask_csv(std::ostream& out, const BinaryMask& mask, const ModelConfig& config) {
    out << kMaskHeader << '\n';
    write_rows(out, mask.attn, mask.ffn, config, [](std::uint8_t b) { return b ? '1' : '0'; });
}

BinaryMask read_mask_csv(std::istream& in) {
    BinaryMask m;
    for (const auto& row : read_rows(in, kMaskHeader)) {
        if (row.value != "0" && row.value != "1") throw FormatError("csv: mask bit must be 0 or 1, got '" + row.value + "'");
        place(row.attn ? m.attn : m.ffn, row.layer, row.position, static_cast<std::uint8_t>(row.value == "1"));
    }
    const auto layers = std::max(m.attn.size(), m.ffn.size());
    m.attn.resize(layers);
    m.ffn.resize(layers);
    refresh_layer_budgets(m);
    const auto d = density(m);
    m.budget = std::max(d.attn, d.ffn);
    return m;
}

}  // namespace sensitrim
