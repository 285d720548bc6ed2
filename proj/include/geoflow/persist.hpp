#pragma once

// Binary volume files (GVL1) and model checkpoints (GCK1). All multi-byte
// values are little-endian.
//
// GVL1: "GVL1" | u16 version | u8 kind | u32 X | u32 Y | u32 Z | payload
// GCK1: "GCK1" | u16 version | u32 n | n bytes JSON metadata | u32 count |
//       count x (u16 name length | name | u8 rank | rank x u64 extent | f32 data)

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "geoflow/geophys.hpp"
#include "geoflow/sparsity.hpp"
#include "geoflow/tensor.hpp"

namespace geoflow {

enum class VolumeKind : std::uint8_t { Categorical = 0, Condition = 1, Continuous = 2, FieldMap = 3 };

inline constexpr std::uint16_t kVolumeFileVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct VolumeHeader {
    VolumeKind kind = VolumeKind::Categorical;
    std::uint32_t x = 0, y = 0, z = 0;
};

// Reads only the header. Throws DataError on a missing file or bad magic.
VolumeHeader read_volume_header(const std::filesystem::path& path);

void write_categorical(const std::filesystem::path& path, const CategoricalVolume& vol);
CategoricalVolume read_categorical(const std::filesystem::path& path);

// Borehole columns are not stored; on read they are the fully labelled
// columns that reach the grid bottom.
void write_condition(const std::filesystem::path& path, const ConditionVolume& cond);
ConditionVolume read_condition(const std::filesystem::path& path);

// [K, X, Y, Z] tensor; K is recovered from the payload length.
void write_continuous(const std::filesystem::path& path, const tc::Tensor<float>& cv);
tc::Tensor<float> read_continuous(const std::filesystem::path& path);

// Stored as an (nx, ny, 1) f32 grid, northing fastest. Receivers and noise
// metadata are not part of the file.
void write_fieldmap(const std::filesystem::path& path, const FieldMap& map);
FieldMap read_fieldmap(const std::filesystem::path& path);

struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, tc::Tensor<float>> tensors;
    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames, so readers never observe a
// partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace geoflow
