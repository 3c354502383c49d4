#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "asca/model.hpp"

namespace asca::model {

// Free-form key=value lines stored next to the architecture (class names,
// frontend parameters). Keys must not contain '=' or newlines; values must
// not contain newlines.
using Metadata = std::map<std::string, std::string>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, little-endian: "ASCA", u32 version, u32 length + ArchSpec text,
// u32 length + metadata text, u32 record count, then per record u32 length +
// path, u32 rank, i64 dims, f32 values. Written to a temporary file and
// renamed into place.
void save_checkpoint(const std::filesystem::path& path, const AscaModel& model, const Metadata& metadata = {});

struct Checkpoint {
    std::unique_ptr<AscaModel> model;
    Metadata metadata;
};

// Throws IoError / DecodeError on unreadable or malformed files and
// DecodeError when records do not match the stored architecture.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace asca::model
