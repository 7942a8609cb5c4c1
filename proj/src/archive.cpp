#include "sensitrim/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sensitrim/errors.hpp"

namespace sensitrim {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'R', 'M'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::string encode_archive(const Archive& archive) {
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel() * sizeof(float);
    }
    nlohmann::json header = {
        {"kind", archive.kind}, {"config", archive.config}, {"meta", archive.meta}, {"tensors", manifest}};
    const std::string text = header.dump();

    std::string out(kMagic, kMagic + 4);
    put_u16(out, kArchiveVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : archive.tensors) {
        for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

Archive decode_archive(const std::string& bytes) {
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("not a STRM archive (bad magic)");
    }
    const std::uint16_t version = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[4]) |
                                                             (static_cast<unsigned char>(bytes[5]) << 8));
    if (version != kArchiveVersion) throw FormatError("unsupported archive version " + std::to_string(version));
    const std::size_t header_len = get_u32(bytes, 6);
    if (10 + header_len > bytes.size()) throw FormatError("archive header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + static_cast<long>(10 + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("archive header is not valid JSON: ") + e.what());
    }
    const std::size_t payload = 10 + header_len;
    Archive archive;
    try {
        archive.kind = header.at("kind").get<std::string>();
        archive.config = header.at("config");
        archive.meta = header.value("meta", nlohmann::json::object());
        for (const auto& entry : header.at("tensors")) {
            Shape shape = entry.at("shape").get<Shape>();
            const std::size_t offset = entry.at("offset").get<std::size_t>();
            const std::size_t n = shape_numel(shape);
            if (payload + offset + n * sizeof(float) > bytes.size()) {
                throw FormatError("archive payload truncated at tensor " + entry.at("name").get<std::string>());
            }
            std::vector<float> values(n);
            for (std::size_t i = 0; i < n; ++i) {
                values[i] = std::bit_cast<float>(get_u32(bytes, payload + offset + i * sizeof(float)));
            }
            archive.tensors.emplace_back(entry.at("name").get<std::string>(),
                                         Tensor::from(std::move(shape), std::move(values)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("archive header: ") + e.what());
    }
    return archive;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model, const nlohmann::json& meta) {
    Archive a;
    a.kind = "checkpoint";
    a.config = to_json(model.config);
    a.meta = meta;
    for (auto& [name, t] : model.named_parameters()) a.tensors.emplace_back(name, t);
    write_file(path, encode_archive(a));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Archive a = decode_archive(read_file(path));
    if (a.kind != "checkpoint") throw FormatError("'" + path.string() + "' holds a " + a.kind + ", not a checkpoint");
    Checkpoint ck;
    // Shapes come from a zero-initialised model of the stored config.
    ck.model = EncoderModel::init(config_from_json(a.config), 0);
    auto slots = ck.model.named_parameters();
    if (slots.size() != a.tensors.size()) {
        throw FormatError("checkpoint has " + std::to_string(a.tensors.size()) + " tensors, config needs " +
                          std::to_string(slots.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& [name, stored] = a.tensors[i];
        if (name != slots[i].first) {
            throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                              slots[i].first + "'");
        }
        if (stored.shape() != slots[i].second.shape()) {
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(stored.shape()) +
                             ", config implies " + shape_str(slots[i].second.shape()));
        }
        auto dst = slots[i].second.mutable_values();
        std::copy(stored.values().begin(), stored.values().end(), dst.begin());
    }
    ck.meta = a.meta;
    return ck;
}

namespace {

nlohmann::json to_json(const ScoreMetadata& m) {
    return {{"task", m.task}, {"epochs", m.epochs}, {"l1_coeff", m.l1_coeff}, {"seed", m.seed}, {"source", m.source}};
}

ScoreMetadata metadata_from_json(const nlohmann::json& j) {
    ScoreMetadata m;
    m.task = j.value("task", "");
    m.epochs = j.value("epochs", std::size_t{0});
    m.l1_coeff = j.value("l1_coeff", 0.0);
    m.seed = j.value("seed", std::uint64_t{0});
    m.source = j.value("source", "sensitivity");
    return m;
}

template <class T>
void pack_layers(Archive& a, const char* prefix, const std::vector<std::vector<T>>& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        std::vector<float> v(layers[l].begin(), layers[l].end());
        const std::size_t n = v.size();
        a.tensors.emplace_back(std::string(prefix) + std::to_string(l), Tensor::from({n}, std::move(v)));
    }
}

const Tensor& find_tensor(const Archive& a, const std::string& name) {
    for (const auto& [n, t] : a.tensors) {
        if (n == name) return t;
    }
    throw FormatError("archive is missing tensor '" + name + "'");
}

}  // namespace

void save_scores(const std::filesystem::path& path, const SensitivityScores& scores, const ModelConfig& config,
                 const nlohmann::json& meta) {
    Archive a;
    a.kind = "scores";
    a.config = sensitrim::to_json(config);
    a.meta = meta;
    a.meta["scores"] = to_json(scores.metadata);
    pack_layers(a, "attn.", scores.attn);
    pack_layers(a, "ffn.", scores.ffn);
    write_file(path, encode_archive(a));
}

ScoreFile load_scores(const std::filesystem::path& path) {
    Archive a = decode_archive(read_file(path));
    if (a.kind != "scores") throw FormatError("'" + path.string() + "' holds a " + a.kind + ", not scores");
    ScoreFile f;
    f.config = config_from_json(a.config);
    f.meta = a.meta;
    f.scores.metadata = metadata_from_json(a.meta.value("scores", nlohmann::json::object()));
    for (std::size_t l = 0; l < f.config.num_layers; ++l) {
        auto at = find_tensor(a, "attn." + std::to_string(l)).values();
        auto fv = find_tensor(a, "ffn." + std::to_string(l)).values();
        f.scores.attn.emplace_back(at.begin(), at.end());
        f.scores.ffn.emplace_back(fv.begin(), fv.end());
    }
    return f;
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask, const ModelConfig& config,
               const nlohmann::json& meta) {
    check_mask_compatible(config, mask);
    Archive a;
    a.kind = "mask";
    a.config = sensitrim::to_json(config);
    a.meta = meta;
    a.meta["budget"] = mask.budget;
    pack_layers(a, "attn.", mask.attn);
    pack_layers(a, "ffn.", mask.ffn);
    write_file(path, encode_archive(a));
}

MaskFile load_mask(const std::filesystem::path& path) {
    Archive a = decode_archive(read_file(path));
    if (a.kind != "mask") throw FormatError("'" + path.string() + "' holds a " + a.kind + ", not a mask");
    MaskFile f;
    f.config = config_from_json(a.config);
    f.meta = a.meta;
    f.mask.budget = a.meta.value("budget", 1.0);
    auto bits = [](const Tensor& t) {
        std::vector<std::uint8_t> out;
        for (float v : t.values()) {
            if (v != 0.0f && v != 1.0f) throw FormatError("mask entries must be 0 or 1");
            out.push_back(v != 0.0f ? 1 : 0);
        }
        return out;
    };
    for (std::size_t l = 0; l < f.config.num_layers; ++l) {
        f.mask.attn.push_back(bits(find_tensor(a, "attn." + std::to_string(l))));
        f.mask.ffn.push_back(bits(find_tensor(a, "ffn." + std::to_string(l))));
    }
    refresh_layer_budgets(f.mask);
    check_mask_compatible(f.config, f.mask);
    return f;
}

}  // namespace sensitrim
