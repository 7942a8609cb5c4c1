#include "sensitrim/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sensitrim/errors.hpp"
#include "sensitrim/masking.hpp"

namespace sensitrim {

ModelConfig ModelConfig::make(std::size_t num_layers, std::size_t num_heads, std::size_t d_model, std::size_t d_attn,
                              std::vector<std::size_t> d_ffn, std::size_t max_seq_len, std::size_t vocab_size,
                              std::size_t num_classes) {
    ModelConfig c;
    c.num_layers = num_layers;
    c.num_heads = num_heads;
    c.d_model = d_model;
    c.d_attn = d_attn;
    c.d_ffn = std::move(d_ffn);
    c.base_d_ffn = c.d_ffn;
    c.max_seq_len = max_seq_len;
    c.vocab_size = vocab_size;
    c.num_classes = num_classes;
    if (num_heads == 0 || d_attn % num_heads != 0 || d_attn == 0) {
        throw InputError("d_attn (" + std::to_string(d_attn) + ") must be a positive multiple of num_heads (" +
                         std::to_string(num_heads) + ")");
    }
    c.attn_scale = 1.0f / std::sqrt(static_cast<float>(d_attn / num_heads));
    c.head_widths.assign(num_layers, std::vector<std::size_t>(num_heads, d_attn / num_heads));
    c.validate();
    return c;
}

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw InputError(std::string("model config: ") + name + " must be positive");
    };
    positive(num_layers, "num_layers");
    positive(num_heads, "num_heads");
    positive(d_model, "d_model");
    positive(d_attn, "d_attn");
    positive(max_seq_len, "max_seq_len");
    positive(vocab_size, "vocab_size");
    positive(num_classes, "num_classes");
    if (d_model < 2) throw InputError("model config: d_model must be at least 2");
    if (d_model % num_heads != 0) throw InputError("model config: d_model must be divisible by num_heads");
    if (d_attn % num_heads != 0) throw InputError("model config: d_attn must be divisible by num_heads");
    if (d_ffn.size() != num_layers) {
        throw InputError("model config: d_ffn has " + std::to_string(d_ffn.size()) + " entries for " +
                         std::to_string(num_layers) + " layers");
    }
    if (base_d_ffn.size() != num_layers) throw InputError("model config: base_d_ffn length mismatch");
    if (head_widths.size() != num_layers) throw InputError("model config: head_widths length mismatch");
    for (std::size_t l = 0; l < num_layers; ++l) {
        if (base_d_ffn[l] == 0) throw InputError("model config: d_ffn entries must be positive");
        if (d_ffn[l] > base_d_ffn[l]) throw InputError("model config: d_ffn exceeds its untrimmed width");
        if (head_widths[l].size() != num_heads) throw InputError("model config: head_widths needs one entry per head");
        for (auto w : head_widths[l]) {
            if (w > base_head_width()) throw InputError("model config: head width exceeds d_attn / num_heads");
        }
    }
    if (!(attn_scale > 0.0f) || !std::isfinite(attn_scale)) throw InputError("model config: attn_scale invalid");
    if (!(layer_norm_eps > 0.0f)) throw InputError("model config: layer_norm_eps must be positive");
}

std::size_t ModelConfig::attn_width(std::size_t layer) const {
    std::size_t w = 0;
    for (auto h : head_widths.at(layer)) w += h;
    return w;
}

nlohmann::json to_json(const ModelConfig& c) {
    return nlohmann::json{
        {"num_layers", c.num_layers},   {"num_heads", c.num_heads},     {"d_model", c.d_model},
        {"d_attn", c.d_attn},           {"d_ffn", c.d_ffn},             {"base_d_ffn", c.base_d_ffn},
        {"head_widths", c.head_widths}, {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
        {"num_classes", c.num_classes}, {"attn_scale", c.attn_scale},   {"layer_norm_eps", c.layer_norm_eps},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    try {
        const auto layers = j.at("num_layers").get<std::size_t>();
        std::vector<std::size_t> d_ffn;
        if (j.at("d_ffn").is_array()) {
            d_ffn = j.at("d_ffn").get<std::vector<std::size_t>>();
        } else {
            d_ffn.assign(layers, j.at("d_ffn").get<std::size_t>());
        }
        ModelConfig c;
        c.num_layers = layers;
        c.num_heads = j.at("num_heads").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.d_attn = j.at("d_attn").get<std::size_t>();
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.d_ffn = d_ffn;
        c.base_d_ffn = j.contains("base_d_ffn") ? j["base_d_ffn"].get<std::vector<std::size_t>>() : d_ffn;
        if (c.num_heads == 0 || c.d_attn % c.num_heads != 0) {
            throw InputError("model config: d_attn must be a positive multiple of num_heads");
        }
        c.head_widths = j.contains("head_widths")
                            ? j["head_widths"].get<std::vector<std::vector<std::size_t>>>()
                            : std::vector<std::vector<std::size_t>>(layers, std::vector<std::size_t>(
                                                                                c.num_heads, c.d_attn / c.num_heads));
        c.attn_scale = j.contains("attn_scale") ? j["attn_scale"].get<float>()
                                                : 1.0f / std::sqrt(static_cast<float>(c.d_attn / c.num_heads));
        c.layer_norm_eps = j.value("layer_norm_eps", 1e-5f);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

Tensor normal_tensor(Shape shape, std::mt19937_64& rng, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    auto t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_values()) v = dist(rng);
    return t;
}

}  // namespace

EncoderModel EncoderModel::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    constexpr float kStd = 0.02f;
    std::mt19937_64 rng(seed);
    const std::size_t d = config.d_model;
    EncoderModel m;
    m.config = config;
    m.token_embedding = normal_tensor({config.vocab_size, d}, rng, kStd);
    m.position_embedding = normal_tensor({config.max_seq_len, d}, rng, kStd);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const std::size_t k = config.attn_width(l), j = config.d_ffn[l];
        LayerParams p;
        p.wq = normal_tensor({d, k}, rng, kStd);
        p.bq = Tensor::zeros({k});
        p.wk = normal_tensor({d, k}, rng, kStd);
        p.bk = Tensor::zeros({k});
        p.wv = normal_tensor({d, k}, rng, kStd);
        p.bv = Tensor::zeros({k});
        p.wo = normal_tensor({k, d}, rng, kStd);
        p.bo = Tensor::zeros({d});
        p.ln1_gain = Tensor::full({d}, 1.0f);
        p.ln1_bias = Tensor::zeros({d});
        p.fc1_w = normal_tensor({d, j}, rng, kStd);
        p.fc1_b = Tensor::zeros({j});
        p.fc2_w = normal_tensor({j, d}, rng, kStd);
        p.fc2_b = Tensor::zeros({d});
        p.ln2_gain = Tensor::full({d}, 1.0f);
        p.ln2_bias = Tensor::zeros({d});
        m.layers.push_back(std::move(p));
    }
    m.classifier_w = normal_tensor({d, config.num_classes}, rng, kStd);
    m.classifier_b = Tensor::zeros({config.num_classes});
    return m;
}

namespace {

std::vector<std::pair<std::string, Tensor*>> named_slots(EncoderModel& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("token_embedding", &m.token_embedding);
    out.emplace_back("position_embedding", &m.position_embedding);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& p = m.layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        for (auto [name, slot] : std::initializer_list<std::pair<const char*, Tensor*>>{
                 {"wq", &p.wq},           {"bq", &p.bq},           {"wk", &p.wk},       {"bk", &p.bk},
                 {"wv", &p.wv},           {"bv", &p.bv},           {"wo", &p.wo},       {"bo", &p.bo},
                 {"ln1_gain", &p.ln1_gain}, {"ln1_bias", &p.ln1_bias}, {"fc1_w", &p.fc1_w}, {"fc1_b", &p.fc1_b},
                 {"fc2_w", &p.fc2_w},     {"fc2_b", &p.fc2_b},     {"ln2_gain", &p.ln2_gain},
                 {"ln2_bias", &p.ln2_bias}}) {
            out.emplace_back(pre + name, slot);
        }
    }
    out.emplace_back("classifier_w", &m.classifier_w);
    out.emplace_back("classifier_b", &m.classifier_b);
    return out;
}

}  // namespace

EncoderModel EncoderModel::clone() const {
    EncoderModel copy = *this;
    for (auto& [name, slot] : named_slots(copy)) *slot = slot->clone();
    return copy;
}

std::vector<std::pair<std::string, Tensor>> EncoderModel::named_parameters() const {
    auto& self = const_cast<EncoderModel&>(*this);
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, slot] : named_slots(self)) out.emplace_back(name, *slot);
    return out;
}

std::vector<Tensor> EncoderModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

void EncoderModel::set_requires_grad(bool on) {
    for (auto& [name, slot] : named_slots(*this)) slot->set_requires_grad(on);
}

// ---------------------------------------------------------------------------

TokenBatch make_batch(std::span<const std::vector<std::int32_t>> sequences) {
    TokenBatch batch;
    batch.batch = sequences.size();
    for (const auto& s : sequences) {
        if (s.empty()) throw InputError("empty token sequence in batch");
        batch.seq = std::max(batch.seq, s.size());
    }
    batch.ids.assign(batch.batch * batch.seq, 0);
    for (std::size_t b = 0; b < sequences.size(); ++b) {
        std::copy(sequences[b].begin(), sequences[b].end(), batch.ids.begin() + static_cast<long>(b * batch.seq));
        batch.lengths.push_back(sequences[b].size());
    }
    return batch;
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

void check_gate(const Tensor* gate, std::size_t width, const char* site) {
    if (gate && (gate->rank() != 1 || gate->dim(0) != width)) {
        throw ShapeError(std::string(site) + " gate of shape " + shape_str(gate->shape()) + " for width " +
                         std::to_string(width));
    }
}

}  // namespace

Tensor mhsa_forward(const ModelConfig& config, std::size_t layer_index, const LayerParams& layer, const Tensor& x,
                    const TokenBatch& batch, const Tensor* gate) {
    const std::size_t width = layer.wq.dim(1);
    check_gate(gate, width, "attention");
    if (x.rank() != 2 || x.dim(1) != config.d_model || x.dim(0) != batch.batch * batch.seq) {
        throw ShapeError("mhsa_forward: input " + shape_str(x.shape()) + " does not match batch " +
                         std::to_string(batch.batch) + "×" + std::to_string(batch.seq) + "×" +
                         std::to_string(config.d_model));
    }
    Tensor q = linear(x, layer.wq, layer.bq);
    Tensor k = linear(x, layer.wk, layer.bk);
    Tensor v = linear(x, layer.wv, layer.bv);
    if (gate) {
        q = broadcast_mul(q, *gate);
        k = broadcast_mul(k, *gate);
        v = broadcast_mul(v, *gate);
    }
    AttentionLayout layout;
    layout.batch = batch.batch;
    layout.seq = batch.seq;
    layout.head_widths = config.head_widths.at(layer_index);
    layout.scale = config.attn_scale;
    layout.lengths = batch.lengths;
    return linear(attention(q, k, v, layout), layer.wo, layer.bo);
}

Tensor mlp_forward(const LayerParams& layer, const Tensor& x, const Tensor* gate) {
    check_gate(gate, layer.fc1_w.dim(1), "mlp");
    Tensor h = gelu(linear(x, layer.fc1_w, layer.fc1_b));
    if (gate) h = broadcast_mul(h, *gate);
    return linear(h, layer.fc2_w, layer.fc2_b);
}

Tensor forward(const EncoderModel& model, const TokenBatch& batch, const GateSet* gates) {
    const auto& c = model.config;
    if (batch.seq > c.max_seq_len) {
        throw InputError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                         std::to_string(c.max_seq_len));
    }
    if (gates && gates->size() != c.num_layers) {
        throw ShapeError("gate set has " + std::to_string(gates->size()) + " layers, model has " +
                         std::to_string(c.num_layers));
    }
    std::vector<std::size_t> positions(batch.batch * batch.seq);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % batch.seq;
    Tensor x = add(embedding(model.token_embedding, batch.ids), gather_rows(model.position_embedding, positions));
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const auto& layer = model.layers[l];
        const Tensor* attn_gate = nullptr;
        const Tensor* ffn_gate = nullptr;
        if (gates) {
            if ((*gates)[l].attn.defined()) attn_gate = &(*gates)[l].attn;
            if ((*gates)[l].ffn.defined()) ffn_gate = &(*gates)[l].ffn;
        }
        x = layer_norm(add(x, mhsa_forward(c, l, layer, x, batch, attn_gate)), layer.ln1_gain, layer.ln1_bias,
                       c.layer_norm_eps);
        x = layer_norm(add(x, mlp_forward(layer, x, ffn_gate)), layer.ln2_gain, layer.ln2_bias, c.layer_norm_eps);
    }
    std::vector<std::size_t> first(batch.batch);
    for (std::size_t b = 0; b < batch.batch; ++b) first[b] = b * batch.seq;
    return linear(gather_rows(x, first), model.classifier_w, model.classifier_b);
}

// ---------------------------------------------------------------------------

void check_mask_compatible(const ModelConfig& config, const BinaryMask& mask) {
    if (mask.attn.size() != config.num_layers || mask.ffn.size() != config.num_layers) {
        throw ShapeError("mask covers " + std::to_string(mask.attn.size()) + "/" + std::to_string(mask.ffn.size()) +
                         " layers, model has " + std::to_string(config.num_layers));
    }
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        if (mask.attn[l].size() != config.attn_width(l) || mask.ffn[l].size() != config.d_ffn[l]) {
            throw ShapeError("mask layer " + std::to_string(l) + " has widths " + std::to_string(mask.attn[l].size()) +
                             "/" + std::to_string(mask.ffn[l].size()) + ", model has " +
                             std::to_string(config.attn_width(l)) + "/" + std::to_string(config.d_ffn[l]));
        }
    }
}

namespace {

std::vector<std::size_t> kept_indices(const std::vector<std::uint8_t>& bits) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) out.push_back(i);
    }
    return out;
}

Tensor select_columns(const Tensor& w, const std::vector<std::size_t>& cols) {
    const std::size_t rows = w.dim(0), n = w.dim(1);
    auto out = Tensor::zeros({rows, cols.size()});
    auto src = w.values();
    auto dst = out.mutable_values();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) dst[r * cols.size() + c] = src[r * n + cols[c]];
    }
    return out;
}

Tensor select_rows(const Tensor& w, const std::vector<std::size_t>& rows) {
    const std::size_t n = w.dim(1);
    auto out = Tensor::zeros({rows.size(), n});
    auto src = w.values();
    auto dst = out.mutable_values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(src.data() + rows[r] * n, n, dst.data() + r * n);
    }
    return out;
}

Tensor select_entries(const Tensor& v, const std::vector<std::size_t>& idx) {
    auto out = Tensor::zeros({idx.size()});
    auto src = v.values();
    auto dst = out.mutable_values();
    for (std::size_t i = 0; i < idx.size(); ++i) dst[i] = src[idx[i]];
    return out;
}

}  // namespace

EncoderModel compact(const EncoderModel& model, const BinaryMask& mask) {
    check_mask_compatible(model.config, mask);
    EncoderModel out = model.clone();
    auto& c = out.config;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const auto attn_keep = kept_indices(mask.attn[l]);
        const auto ffn_keep = kept_indices(mask.ffn[l]);
        std::vector<std::size_t> widths;
        std::size_t offset = 0;
        for (auto w : model.config.head_widths[l]) {
            std::size_t kept = 0;
            for (std::size_t i = offset; i < offset + w; ++i) kept += mask.attn[l][i] ? 1 : 0;
            widths.push_back(kept);
            offset += w;
        }
        c.head_widths[l] = std::move(widths);
        c.d_ffn[l] = ffn_keep.size();

        const auto& src = model.layers[l];
        auto& dst = out.layers[l];
        dst.wq = select_columns(src.wq, attn_keep);
        dst.bq = select_entries(src.bq, attn_keep);
        dst.wk = select_columns(src.wk, attn_keep);
        dst.bk = select_entries(src.bk, attn_keep);
        dst.wv = select_columns(src.wv, attn_keep);
        dst.bv = select_entries(src.bv, attn_keep);
        dst.wo = select_rows(src.wo, attn_keep);
        dst.fc1_w = select_columns(src.fc1_w, ffn_keep);
        dst.fc1_b = select_entries(src.fc1_b, ffn_keep);
        dst.fc2_w = select_rows(src.fc2_w, ffn_keep);
    }
    c.validate();
    return out;
}

EncoderModel zero_masked_weights(const EncoderModel& model, const BinaryMask& mask) {
    check_mask_compatible(model.config, mask);
    EncoderModel out = model.clone();
    const std::size_t d = model.config.d_model;
    for (std::size_t l = 0; l < model.config.num_layers; ++l) {
        auto& p = out.layers[l];
        const std::size_t k = mask.attn[l].size(), j = mask.ffn[l].size();
        for (std::size_t i = 0; i < k; ++i) {
            if (mask.attn[l][i]) continue;
            for (Tensor* w : {&p.wq, &p.wk, &p.wv}) {
                auto v = w->mutable_values();
                for (std::size_t r = 0; r < d; ++r) v[r * k + i] = 0.0f;
            }
            for (Tensor* b : {&p.bq, &p.bk, &p.bv}) b->mutable_values()[i] = 0.0f;
            auto wo = p.wo.mutable_values();
            std::fill_n(wo.begin() + static_cast<long>(i * d), d, 0.0f);
        }
        for (std::size_t i = 0; i < j; ++i) {
            if (mask.ffn[l][i]) continue;
            auto w1 = p.fc1_w.mutable_values();
            for (std::size_t r = 0; r < d; ++r) w1[r * j + i] = 0.0f;
            p.fc1_b.mutable_values()[i] = 0.0f;
            auto w2 = p.fc2_w.mutable_values();
            std::fill_n(w2.begin() + static_cast<long>(i * d), d, 0.0f);
        }
    }
    return out;
}

}  // namespace sensitrim
