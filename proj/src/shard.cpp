#include "asca/shard.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "asca/errors.hpp"

namespace asca::frontend {

namespace {

static_assert(std::endian::native == std::endian::little, "shard I/O assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'S', 'C', 'F'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

bool get_exact(std::istream& in, void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint32_t get_u32(std::istream& in, const char* field) {
    std::uint32_t v;
    if (!get_exact(in, &v, sizeof v)) throw DecodeError(std::string("shard: truncated record at ") + field);
    return v;
}

}  // namespace

void write_shard_record(std::ostream& out, const ShardRecord& record) {
    if (record.values.size() != static_cast<std::size_t>(record.n_mels) * record.n_frames) {
        throw ShapeError("shard: value count does not match n_mels x n_frames");
    }
    out.write(kMagic, 4);
    put_u32(out, kShardVersion);
    put_u32(out, record.n_mels);
    put_u32(out, record.n_frames);
    out.write(reinterpret_cast<const char*>(record.values.data()),
              static_cast<std::streamsize>(record.values.size() * sizeof(float)));
    put_u32(out, static_cast<std::uint32_t>(record.labels.size()));
    for (auto label : record.labels) put_u32(out, label);
}

std::optional<ShardRecord> read_shard_record(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() == 0) return std::nullopt;
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw DecodeError("shard: bad magic");
    const auto version = get_u32(in, "version");
    if (version != kShardVersion) throw DecodeError("shard: unsupported version " + std::to_string(version));
    ShardRecord rec;
    rec.n_mels = get_u32(in, "n_mels");
    rec.n_frames = get_u32(in, "n_frames");
    if (rec.n_mels == 0 || rec.n_frames == 0) throw DecodeError("shard: empty spectrogram");
    rec.values.resize(static_cast<std::size_t>(rec.n_mels) * rec.n_frames);
    if (!get_exact(in, rec.values.data(), rec.values.size() * sizeof(float))) {
        throw DecodeError("shard: truncated record at values");
    }
    const auto count = get_u32(in, "label_count");
    rec.labels.resize(count);
    for (auto& label : rec.labels) label = get_u32(in, "labels");
    return rec;
}

std::vector<ShardRecord> read_shard_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open shard " + path.string());
    std::vector<ShardRecord> out;
    while (auto rec = read_shard_record(in)) out.push_back(std::move(*rec));
    return out;
}

void write_shard_file(const std::filesystem::path& path, const std::vector<ShardRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write shard " + path.string());
    for (const auto& rec : records) write_shard_record(out, rec);
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace asca::frontend
