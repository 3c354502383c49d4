#include "asca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "asca/errors.hpp"

namespace asca::model {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    template <typename T>
    T get(const char* field) {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) fail(std::string("truncated while reading ") + field);
        return v;
    }

    std::string get_string(const char* field, std::uint32_t limit = 1u << 24) {
        const auto n = get<std::uint32_t>(field);
        if (n > limit) fail(std::string("implausible length for ") + field);
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (!in_) fail(std::string("truncated while reading ") + field);
        return s;
    }

    [[noreturn]] void fail(const std::string& what) const { throw DecodeError("checkpoint " + source_ + ": " + what); }

    std::istream& stream() { return in_; }

private:
    std::istream& in_;
    std::string source_;
};

std::string encode_metadata(const Metadata& metadata) {
    std::string text;
    for (const auto& [k, v] : metadata) {
        if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ConfigError("checkpoint metadata: invalid entry '" + k + "'");
        }
        text += k + "=" + v + "\n";
    }
    return text;
}

Metadata decode_metadata(const std::string& text, const Reader& reader) {
    Metadata out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) reader.fail("malformed metadata line '" + line + "'");
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AscaModel& model, const Metadata& metadata) {
    const auto meta_text = encode_metadata(metadata);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write("ASCA", 4);
        put<std::uint32_t>(out, kCheckpointVersion);
        put_string(out, model.spec().serialize());
        put_string(out, meta_text);
        const auto& entries = model.weights().entries();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
        for (const auto& p : entries) {
            put_string(out, p.path);
            const auto& shape = p.value.shape();
            put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
            for (auto d : shape) put<std::int64_t>(out, d);
            for (Scalar v : p.value.values()) put<float>(out, static_cast<float>(v));
        }
        out.flush();
        if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    Reader r(in, path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ASCA", 4) != 0) r.fail("bad magic (not a checkpoint)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

    Checkpoint ck;
    ArchSpec spec;
    try {
        spec = ArchSpec::deserialize(r.get_string("architecture"));
    } catch (const UserError& e) {
        r.fail(std::string("architecture block: ") + e.what());
    }
    ck.metadata = decode_metadata(r.get_string("metadata"), r);
    ck.model = std::make_unique<AscaModel>(spec);
    auto& weights = ck.model->weights();

    const auto count = r.get<std::uint32_t>("record count");
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = r.get_string("weight path", 4096);
        if (!weights.contains(name)) r.fail("unknown weight '" + name + "'");
        if (!seen.insert(name).second) r.fail("duplicate weight '" + name + "'");
        Tensor& t = weights.tensor(name);
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > 8) r.fail("implausible rank for '" + name + "'");
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::int64_t>("dimension");
        if (shape != t.shape()) {
            r.fail("shape " + to_string(shape) + " for '" + name + "' but architecture expects " + to_string(t.shape()));
        }
        std::vector<float> buf(static_cast<std::size_t>(t.numel()));
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) r.fail("truncated values for '" + name + "'");
        auto dst = t.data();
        for (std::size_t j = 0; j < buf.size(); ++j) dst[j] = static_cast<Scalar>(buf[j]);
    }
    if (seen.size() != weights.entries().size()) {
        for (const auto& p : weights.entries()) {
            if (!seen.count(p.path)) r.fail("missing weight '" + p.path + "'");
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after last record");
    return ck;
}

}  // namespace asca::model
