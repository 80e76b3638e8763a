#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "json.hpp"

#include "contab/model.hpp"

namespace contab {

/// Everything needed to continue a training run bit-exactly.
struct TrainState {
    ModelConfig model;
    ModelParameters params;
    ModelParameters accumulators;  // RMSProp running mean of squared gradients
    std::uint64_t step = 0;
    std::mt19937_64 data_rng;
    std::mt19937_64 corruption_rng;
    std::uint64_t preprocessor_hash = 0;
};

struct CheckpointFile {
    TrainState state;
    nlohmann::json train_config;
    std::string kind;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: 8-byte magic "CTABCKPT", u32 version, u64 header length, JSON
/// header (config, step, RNG states, tensor index), then every tensor as
/// row-major little-endian float64 in index order.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const nlohmann::json& train_config = nlohmann::json::object(),
                     const std::string& kind = "pretrain");
CheckpointFile load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the parameter payload.
std::uint64_t parameter_fingerprint(const ModelParameters& params);

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& s);

}  // namespace contab
