#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sensitrim/masking.hpp"
#include "sensitrim/model.hpp"

namespace sensitrim {

// Binary container shared by checkpoints, score files and mask files:
//
//   "STRM" | u16 version | u32 header length | header JSON (UTF-8) | payload
//
// All integers and f32 payloads are little-endian. The header holds "kind",
// "config" (ModelConfig), "tensors" (name, shape, byte offset into the
// payload) and a free-form "meta" object.

inline constexpr std::uint16_t kArchiveVersion = 1;

struct Archive {
    std::string kind;
    nlohmann::json config;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

struct Checkpoint {
    EncoderModel model;
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct ScoreFile {
    SensitivityScores scores;
    ModelConfig config;
    nlohmann::json meta = nlohmann::json::object();
};

void save_scores(const std::filesystem::path& path, const SensitivityScores& scores, const ModelConfig& config,
                 const nlohmann::json& meta = nlohmann::json::object());
ScoreFile load_scores(const std::filesystem::path& path);

struct MaskFile {
    BinaryMask mask;
    ModelConfig config;
    nlohmann::json meta = nlohmann::json::object();
};

void save_mask(const std::filesystem::path& path, const BinaryMask& mask, const ModelConfig& config,
               const nlohmann::json& meta = nlohmann::json::object());
MaskFile load_mask(const std::filesystem::path& path);

}  // namespace sensitrim
