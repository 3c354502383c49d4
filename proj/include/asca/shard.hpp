#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace asca::frontend {

// One spectrogram record of a shard stream, little-endian on disk:
//   "ASCF" | u32 version=1 | u32 n_mels | u32 n_frames |
//   f32[n_mels * n_frames] row-major | u32 label_count | u32[label_count]
struct ShardRecord {
    std::uint32_t n_mels = 0;
    std::uint32_t n_frames = 0;
    std::vector<float> values;
    std::vector<std::uint32_t> labels;
};

inline constexpr std::uint32_t kShardVersion = 1;

void write_shard_record(std::ostream& out, const ShardRecord& record);
// Returns nullopt at a clean end of stream; throws DecodeError on a
// malformed or truncated record.
std::optional<ShardRecord> read_shard_record(std::istream& in);

std::vector<ShardRecord> read_shard_file(const std::filesystem::path& path);
void write_shard_file(const std::filesystem::path& path, const std::vector<ShardRecord>& records);

}  // namespace asca::frontend
