#include "asca/arch.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

#include "asca/errors.hpp"

namespace asca::model {

namespace {

struct PresetShape {
    std::array<int, 4> depths;
    std::array<int, 4> channels;
    int stem;
};

PresetShape preset_shape(Preset p) {
    switch (p) {
        case Preset::kDesk:
            return {{2, 2, 2, 2}, {32, 64, 128, 256}, 16};
        case Preset::kFull:
            // CoAtNet-0 widths and depths.
            return {{2, 3, 5, 2}, {96, 192, 384, 768}, 64};
        case Preset::kMicro:
            return {{1, 1, 1, 1}, {4, 4, 8, 8}, 4};
    }
    throw ConfigError("unknown preset");
}

int to_int(std::string_view key, std::string_view value) {
    int out = 0;
    const auto* end = value.data() + value.size();
    const auto res = std::from_chars(value.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end) {
        throw ParseError("arch: value for '" + std::string(key) + "' is not an integer: " + std::string(value));
    }
    return out;
}

}  // namespace

std::string_view preset_name(Preset p) {
    switch (p) {
        case Preset::kDesk:
            return "desk";
        case Preset::kFull:
            return "full";
        case Preset::kMicro:
            return "micro";
    }
    return "?";
}

Preset parse_preset(std::string_view name) {
    if (name == "desk") return Preset::kDesk;
    if (name == "full") return Preset::kFull;
    if (name == "micro") return Preset::kMicro;
    throw ParseError("unknown model preset '" + std::string(name) + "' (expected desk, full or micro)");
}

std::string ArchSpec::stage_string() const {
    std::string s;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) s += '-';
        s += stages[i].kind == StageKind::kConv ? 'C' : 'T';
    }
    return s;
}

int ArchSpec::heads_for(const StageSpec& stage) const {
    if (num_heads > 0) return num_heads;
    return std::max(1, stage.channels / 32);
}

void ArchSpec::validate() const {
    if (stem_channels < 1) throw ConfigError("arch: stem_channels must be positive");
    if (in_channels < 1) throw ConfigError("arch: in_channels must be positive");
    if (num_classes < 1) throw ConfigError("arch: num_classes must be positive");
    if (expansion < 1 || se_reduction < 1) throw ConfigError("arch: expansion and se_reduction must be positive");
    if (window != 7 && window != 14 && window != 16 && window != 32) {
        throw ConfigError("arch: window must be one of 7, 14, 16, 32 (got " + std::to_string(window) + ")");
    }
    int previous = stem_channels;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        const std::string name = "arch: stage S" + std::to_string(i + 1);
        if (st.depth < 1) throw ConfigError(name + " depth must be >= 1");
        if (st.stride != 1 && st.stride != 2) throw ConfigError(name + " stride must be 1 or 2");
        if (st.channels < previous) throw ConfigError(name + " channels decrease");
        if ((st.channels * expansion) % se_reduction != 0) {
            throw ConfigError(name + " hidden width not divisible by the squeeze-excitation reduction");
        }
        if (st.kind == StageKind::kAttn && st.channels % heads_for(st) != 0) {
            throw ConfigError(name + " channels not divisible by head count");
        }
        previous = st.channels;
    }
}

std::string ArchSpec::serialize() const {
    std::ostringstream os;
    os << "stages=" << stage_string() << '\n';
    os << "preset=" << preset_name(preset) << '\n';
    for (std::size_t i = 0; i < stages.size(); ++i) {
        os << "s" << i + 1 << ".depth=" << stages[i].depth << '\n';
        os << "s" << i + 1 << ".channels=" << stages[i].channels << '\n';
        os << "s" << i + 1 << ".stride=" << stages[i].stride << '\n';
    }
    os << "stem_channels=" << stem_channels << '\n';
    os << "window=" << window << '\n';
    os << "num_heads=" << num_heads << '\n';
    os << "num_classes=" << num_classes << '\n';
    os << "in_channels=" << in_channels << '\n';
    os << "expansion=" << expansion << '\n';
    os << "se_reduction=" << se_reduction << '\n';
    return os.str();
}

ArchSpec ArchSpec::deserialize(std::string_view text) {
    std::map<std::string, std::string, std::less<>> kv;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("arch: malformed line '" + std::string(line) + "'");
        kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
    }
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError("arch: missing key '" + key + "'");
        return it->second;
    };
    ArchSpec spec = parse_arch_spec(need("stages"), parse_preset(need("preset")));
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const std::string p = "s" + std::to_string(i + 1) + ".";
        spec.stages[i].depth = to_int(p + "depth", need(p + "depth"));
        spec.stages[i].channels = to_int(p + "channels", need(p + "channels"));
        spec.stages[i].stride = to_int(p + "stride", need(p + "stride"));
    }
    spec.stem_channels = to_int("stem_channels", need("stem_channels"));
    spec.window = to_int("window", need("window"));
    spec.num_heads = to_int("num_heads", need("num_heads"));
    spec.num_classes = to_int("num_classes", need("num_classes"));
    spec.in_channels = to_int("in_channels", need("in_channels"));
    spec.expansion = to_int("expansion", need("expansion"));
    spec.se_reduction = to_int("se_reduction", need("se_reduction"));
    spec.validate();
    return spec;
}

ArchSpec parse_arch_spec(std::string_view stages, Preset preset, int num_classes, int window) {
    constexpr std::size_t kLength = 7;  // four letters, three dashes
    for (std::size_t i = 0; i < std::min(stages.size(), kLength); ++i) {
        const char c = stages[i];
        if (i % 2 == 0 && c != 'C' && c != 'T') {
            throw ParseError("stage string '" + std::string(stages) + "': expected 'C' or 'T' at position " +
                             std::to_string(i));
        }
        if (i % 2 == 1 && c != '-') {
            throw ParseError("stage string '" + std::string(stages) + "': expected '-' at position " +
                             std::to_string(i));
        }
    }
    if (stages.size() != kLength) {
        throw ParseError("stage string '" + std::string(stages) + "': expected 4 stages at position " +
                         std::to_string(std::min(stages.size(), kLength)));
    }
    const auto shape = preset_shape(preset);
    ArchSpec spec;
    spec.preset = preset;
    spec.stem_channels = shape.stem;
    spec.num_classes = num_classes;
    spec.window = window;
    for (std::size_t i = 0; i < 4; ++i) {
        spec.stages[i].kind = stages[2 * i] == 'C' ? StageKind::kConv : StageKind::kAttn;
        spec.stages[i].depth = shape.depths[i];
        spec.stages[i].channels = shape.channels[i];
        spec.stages[i].stride = 2;
    }
    spec.validate();
    return spec;
}

}  // namespace asca::model
