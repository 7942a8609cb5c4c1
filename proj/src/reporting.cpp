#include "sensitrim/reporting.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sensitrim/errors.hpp"

namespace sensitrim {

namespace {

std::size_t ones(const std::vector<std::uint8_t>& bits) {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

struct Widths {
    std::vector<std::size_t> attn;
    std::vector<std::vector<std::size_t>> heads;
    std::vector<std::size_t> ffn;
};

Widths widths_of(const ModelConfig& c, const BinaryMask* mask) {
    Widths w;
    if (mask) check_mask_compatible(c, *mask);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (!mask) {
            w.attn.push_back(c.attn_width(l));
            w.heads.push_back(c.head_widths[l]);
            w.ffn.push_back(c.d_ffn[l]);
            continue;
        }
        w.attn.push_back(ones(mask->attn[l]));
        w.ffn.push_back(ones(mask->ffn[l]));
        std::vector<std::size_t> heads;
        std::size_t offset = 0;
        for (auto hw : c.head_widths[l]) {
            std::size_t kept = 0;
            for (std::size_t i = offset; i < offset + hw; ++i) kept += mask->attn[l][i];
            heads.push_back(kept);
            offset += hw;
        }
        w.heads.push_back(std::move(heads));
    }
    return w;
}

}  // namespace

ParamReport count_params(const ModelConfig& c, const BinaryMask* mask) {
    const auto w = widths_of(c, mask);
    const std::uint64_t d = c.d_model;
    ParamReport r;
    r.embedding = static_cast<std::uint64_t>(c.vocab_size) * d + static_cast<std::uint64_t>(c.max_seq_len) * d;
    r.classifier = d * c.num_classes + c.num_classes;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        LayerParamCount lp;
        lp.attn_width = w.attn[l];
        lp.ffn_width = w.ffn[l];
        const std::uint64_t k = w.attn[l], j = w.ffn[l];
        lp.mhsa = 3 * (d * k + k) + (k * d + d);
        lp.mlp = (d * j + j) + (j * d + d);
        lp.layer_norm = 4 * d;
        r.mhsa += lp.mhsa;
        r.mlp += lp.mlp;
        r.layer_norm += lp.layer_norm;
        r.layers.push_back(lp);
    }
    r.trimmable = r.mhsa + r.mlp;
    r.total = r.embedding + r.classifier + r.trimmable + r.layer_norm;
    return r;
}

std::uint64_t enumerate_params(const EncoderModel& model) {
    std::uint64_t n = 0;
    for (const auto& [name, t] : model.named_parameters()) n += t.numel();
    return n;
}

namespace {

// Auxiliary per-element costs.
constexpr std::uint64_t kSoftmaxPerScore = 5;  // max, subtract, exp, sum, divide
constexpr std::uint64_t kLayerNormPerElem = 7;  // mean, centre, square, variance, scale, gain, bias
constexpr std::uint64_t kGeluPerElem = 8;

}  // namespace

FlopReport count_flops(const ModelConfig& c, std::size_t seq_len, const BinaryMask* mask) {
    if (seq_len == 0 || seq_len > c.max_seq_len) {
        throw InputError("seq_len " + std::to_string(seq_len) + " outside [1, " + std::to_string(c.max_seq_len) + "]");
    }
    const auto w = widths_of(c, mask);
    const std::uint64_t d = c.d_model, n = seq_len;
    FlopReport r;
    r.seq_len = seq_len;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::uint64_t k = w.attn[l], j = w.ffn[l];
        const auto live_heads = static_cast<std::uint64_t>(
            std::count_if(w.heads[l].begin(), w.heads[l].end(), [](auto hw) { return hw > 0; }));
        LayerFlops f;
        f.attn_linear = 2 * (3 * d * k) + 2 * (k * d);
        f.attn_bias = 3 * k + d;
        f.attn_context = 2 * n * k + 2 * n * k;
        f.ffn_linear = 2 * d * j + 2 * j * d;
        f.ffn_bias = j + d;
        f.aux = kSoftmaxPerScore * n * live_heads + 2 * kLayerNormPerElem * d + kGeluPerElem * j + 2 * d;
        r.attn_linear += f.attn_linear;
        r.ffn_linear += f.ffn_linear;
        r.bias += f.attn_bias + f.ffn_bias;
        r.attn_context += f.attn_context;
        r.aux += f.aux;
        r.layers.push_back(f);
    }
    r.classifier_per_sequence = 2 * d * c.num_classes + c.num_classes;
    r.per_token = r.attn_linear + r.ffn_linear + r.bias + r.attn_context;
    return r;
}

TrimReport make_trim_report(const ModelConfig& config, std::size_t seq_len, const BinaryMask* mask) {
    TrimReport r;
    // The untrimmed reference shares every width field except the trimmed ones.
    ModelConfig base = config;
    base.d_ffn = config.base_d_ffn;
    base.head_widths.assign(config.num_layers, std::vector<std::size_t>(config.num_heads, config.base_head_width()));
    if (mask) {
        check_mask_compatible(config, *mask);
        r.masked_params = count_params(config, mask);
        r.masked_flops = count_flops(config, seq_len, mask);
    } else {
        r.masked_params = count_params(config);
        r.masked_flops = count_flops(config, seq_len);
    }
    r.dense_params = count_params(base);
    r.dense_flops = count_flops(base, seq_len);

    std::size_t attn_kept = 0, attn_total = 0, ffn_kept = 0, ffn_total = 0;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const std::size_t ka = r.masked_params.layers[l].attn_width, ta = config.d_attn;
        const std::size_t kf = r.masked_params.layers[l].ffn_width, tf = config.base_d_ffn[l];
        r.per_layer_budgets.push_back({static_cast<double>(ka) / static_cast<double>(ta),
                                       static_cast<double>(kf) / static_cast<double>(tf)});
        attn_kept += ka;
        attn_total += ta;
        ffn_kept += kf;
        ffn_total += tf;
    }
    r.attn_density = static_cast<double>(attn_kept) / static_cast<double>(attn_total);
    r.ffn_density = static_cast<double>(ffn_kept) / static_cast<double>(ffn_total);
    r.budget = mask ? mask->budget : std::max(r.attn_density, r.ffn_density);
    return r;
}

// ---------------------------------------------------------------------------

SensitivityProfile profile(const BinaryMask& mask, const ModelConfig& config) {
    check_mask_compatible(config, mask);
    const auto d = density(mask);
    SensitivityProfile p;
    p.attn = d.attn_per_layer;
    p.ffn = d.ffn_per_layer;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        std::vector<double> row;
        for (std::size_t h = 0; h < config.num_heads; ++h) row.push_back(head_sensitivity(mask, config, l, h));
        p.heads.push_back(std::move(row));
    }
    return p;
}

SensitivityProfile profile(const SensitivityScores& scores, const ModelConfig& config) {
    auto mean = [](const std::vector<float>& v) {
        if (v.empty()) return 0.0;
        double t = 0.0;
        for (float x : v) t += x;
        return t / static_cast<double>(v.size());
    };
    SensitivityProfile p;
    for (std::size_t l = 0; l < scores.attn.size(); ++l) {
        p.attn.push_back(mean(scores.attn[l]));
        p.ffn.push_back(mean(scores.ffn.at(l)));
        std::vector<double> row;
        for (std::size_t h = 0; h < config.num_heads; ++h) row.push_back(head_sensitivity(scores, config, l, h));
        p.heads.push_back(std::move(row));
    }
    return p;
}

namespace {

std::vector<double> mid_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw InputError("spearman: sequences of length " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    if (a.size() < 2) return std::nullopt;
    const auto ra = mid_ranks(a), rb = mid_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - mean) * (rb[i] - mean);
        saa += (ra[i] - mean) * (ra[i] - mean);
        sbb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

ProfileCorrelation correlate(const SensitivityProfile& a, const SensitivityProfile& b) {
    if (a.attn.size() != b.attn.size() || a.ffn.size() != b.ffn.size()) {
        throw InputError("correlate: profiles cover " + std::to_string(a.attn.size()) + " and " +
                         std::to_string(b.attn.size()) + " layers");
    }
    return {spearman(a.attn, b.attn), spearman(a.ffn, b.ffn)};
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

nlohmann::json to_json(const ParamReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"attn_width", l.attn_width},
                          {"ffn_width", l.ffn_width},
                          {"mhsa", l.mhsa},
                          {"mlp", l.mlp},
                          {"layer_norm", l.layer_norm}});
    }
    return {{"embedding", r.embedding}, {"classifier", r.classifier}, {"mhsa", r.mhsa},
            {"mlp", r.mlp},             {"layer_norm", r.layer_norm}, {"trimmable", r.trimmable},
            {"total", r.total},         {"layers", layers}};
}

nlohmann::json to_json(const FlopReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"attn_linear", l.attn_linear},
                          {"attn_bias", l.attn_bias},
                          {"attn_context", l.attn_context},
                          {"ffn_linear", l.ffn_linear},
                          {"ffn_bias", l.ffn_bias},
                          {"aux", l.aux}});
    }
    return {{"seq_len", r.seq_len},
            {"attn_linear", r.attn_linear},
            {"ffn_linear", r.ffn_linear},
            {"bias", r.bias},
            {"attn_context", r.attn_context},
            {"aux", r.aux},
            {"classifier_per_sequence", r.classifier_per_sequence},
            {"per_token", r.per_token},
            {"layers", layers}};
}

nlohmann::json to_json(const TrimReport& r) {
    nlohmann::json budgets = nlohmann::json::array();
    for (const auto& b : r.per_layer_budgets) budgets.push_back({{"attn", b.attn}, {"ffn", b.ffn}});
    return {{"schema_version", r.schema_version},
            {"budget", r.budget},
            {"attn_density", r.attn_density},
            {"ffn_density", r.ffn_density},
            {"per_layer_budgets", budgets},
            {"params", {{"dense", to_json(r.dense_params)}, {"masked", to_json(r.masked_params)}}},
            {"flops_per_token", {{"dense", to_json(r.dense_flops)}, {"masked", to_json(r.masked_flops)}}}};
}

namespace {

ParamReport param_report_from_json(const nlohmann::json& j) {
    ParamReport r;
    r.embedding = j.at("embedding");
    r.classifier = j.at("classifier");
    r.mhsa = j.at("mhsa");
    r.mlp = j.at("mlp");
    r.layer_norm = j.at("layer_norm");
    r.trimmable = j.at("trimmable");
    r.total = j.at("total");
    for (const auto& l : j.at("layers")) {
        r.layers.push_back({l.at("attn_width"), l.at("ffn_width"), l.at("mhsa"), l.at("mlp"), l.at("layer_norm")});
    }
    return r;
}

FlopReport flop_report_from_json(const nlohmann::json& j) {
    FlopReport r;
    r.seq_len = j.at("seq_len");
    r.attn_linear = j.at("attn_linear");
    r.ffn_linear = j.at("ffn_linear");
    r.bias = j.at("bias");
    r.attn_context = j.at("attn_context");
    r.aux = j.at("aux");
    r.classifier_per_sequence = j.at("classifier_per_sequence");
    r.per_token = j.at("per_token");
    for (const auto& l : j.at("layers")) {
        r.layers.push_back({l.at("attn_linear"), l.at("attn_bias"), l.at("attn_context"), l.at("ffn_linear"),
                            l.at("ffn_bias"), l.at("aux")});
    }
    return r;
}

}  // namespace

TrimReport trim_report_from_json(const nlohmann::json& j) {
    try {
        TrimReport r;
        r.schema_version = j.at("schema_version");
        r.budget = j.at("budget");
        r.attn_density = j.at("attn_density");
        r.ffn_density = j.at("ffn_density");
        for (const auto& b : j.at("per_layer_budgets")) r.per_layer_budgets.push_back({b.at("attn"), b.at("ffn")});
        r.dense_params = param_report_from_json(j.at("params").at("dense"));
        r.masked_params = param_report_from_json(j.at("params").at("masked"));
        r.dense_flops = flop_report_from_json(j.at("flops_per_token").at("dense"));
        r.masked_flops = flop_report_from_json(j.at("flops_per_token").at("masked"));
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("trim report: ") + e.what());
    }
}

nlohmann::json to_json(const SensitivityProfile& p) {
    return {{"attn", p.attn}, {"ffn", p.ffn}, {"heads", p.heads}};
}

nlohmann::json to_json(const ProfileCorrelation& c) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"attn_rho", opt(c.attn)}, {"ffn_rho", opt(c.ffn)}};
}

std::string emit(const std::vector<SweepRow>& rows, ReportFormat format) {
    if (format == ReportFormat::Json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows) {
            arr.push_back({{"budget", r.budget}, {"sensi_acc", r.sensi_acc}, {"mp_acc", r.mp_acc}, {"seed", r.seed}});
        }
        return nlohmann::json{{"schema_version", kReportSchemaVersion}, {"rows", arr}}.dump(2) + "\n";
    }
    std::ostringstream os;
    os << "budget,sensi_acc,mp_acc,seed,schema_version\n";
    for (const auto& r : rows) {
        os << format_double(r.budget) << ',' << format_double(r.sensi_acc) << ',' << format_double(r.mp_acc) << ','
           << r.seed << ',' << kReportSchemaVersion << '\n';
    }
    return os.str();
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "budget,sensi_acc,mp_acc,seed,schema_version") {
        throw FormatError("sweep csv: unexpected header");
    }
    std::vector<SweepRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 5) throw FormatError("sweep csv line " + std::to_string(line_no) + ": expected 5 fields");
        auto num = [&](const std::string& s, auto& out) {
            auto res = std::from_chars(s.data(), s.data() + s.size(), out);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
                throw FormatError("sweep csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
            }
        };
        SweepRow r;
        num(f[0], r.budget);
        num(f[1], r.sensi_acc);
        num(f[2], r.mp_acc);
        num(f[3], r.seed);
        rows.push_back(r);
    }
    return rows;
}

std::string emit(const TrimReport& report, ReportFormat format) {
    if (format == ReportFormat::Json) return to_json(report).dump(2) + "\n";
    std::ostringstream os;
    os << "layer,attn_width,ffn_width,mhsa_params,mlp_params,attn_budget,ffn_budget,schema_version\n";
    for (std::size_t l = 0; l < report.masked_params.layers.size(); ++l) {
        const auto& p = report.masked_params.layers[l];
        const auto& b = report.per_layer_budgets[l];
        os << l << ',' << p.attn_width << ',' << p.ffn_width << ',' << p.mhsa << ',' << p.mlp << ','
           << format_double(b.attn) << ',' << format_double(b.ffn) << ',' << report.schema_version << '\n';
    }
    return os.str();
}

}  // namespace sensitrim
