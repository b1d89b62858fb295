#pragma once

// Versioned parameter container shared by encoder, regressor and backbone
// weight files. See docs/formats.md for the byte layout.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

namespace featimg {

enum class CheckpointKind : std::uint32_t {
    Encoder = 1,
    Autoencoder = 2,
    Regressor = 3,
    BackboneWeights = 4,
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'F', 'I', 'M', 'G', 'C', 'K', 'P', 'T'};

struct NamedTensor {
    std::string name;
    torch::Tensor value;
};

struct Checkpoint {
    CheckpointKind kind = CheckpointKind::Encoder;
    nlohmann::json config = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    /// Throws SchemaError when no tensor has this name.
    const torch::Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Verifies the trailing CRC-32 first (ChecksumError), then magic and
/// version (VersionError).
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// CRC-32 of the serialized file, as stored in its last four bytes.
std::uint32_t checkpoint_checksum(const std::filesystem::path& path);

} // namespace featimg
