#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "longembed/encoder.hpp"

namespace longembed {

// File layout, little-endian:
//   "JBRT" | u32 version | u64 header_len | UTF-8 JSON header |
//   u64 tensor_count | tensor_count x
//     (u16 name_len | name | u8 dtype | u8 rank | rank x u64 extent | raw data)
// dtype 0 = f32, 1 = f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    ModelConfig model_config;
    std::vector<std::string> vocab;  // may be empty
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::string rng_state;
    nlohmann::json extra = nlohmann::json::object();  // trainer/sampler state
    std::vector<NamedTensor> tensors;                  // weights, then optimizer moments

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Weights only, step 0.
Checkpoint checkpoint_from_model(const EncoderState& state, const std::vector<std::string>& vocab = {});

// Rebuilds an EncoderState from the checkpoint's weight tensors. Tensors
// keep the precision they were saved with.
EncoderState model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace longembed
