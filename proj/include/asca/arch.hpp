#pragma once

#include <array>
#include <string>
#include <string_view>

namespace asca::model {

enum class StageKind { kConv, kAttn };

struct StageSpec {
    StageKind kind = StageKind::kConv;
    int depth = 1;
    int channels = 32;
    int stride = 2;

    bool operator==(const StageSpec&) const = default;
};

enum class Preset { kDesk, kFull, kMicro };

// Stage plan for S1..S4; S0 is the two-convolution stem.
struct ArchSpec {
    std::array<StageSpec, 4> stages{};
    int stem_channels = 16;
    int window = 7;     // attention partition edge at each attention stage's resolution
    int num_heads = 0;  // 0: channels / 32 per attention stage (at least 1)
    int num_classes = 2;
    int in_channels = 1;
    int expansion = 4;
    int se_reduction = 4;
    Preset preset = Preset::kDesk;

    std::string stage_string() const;  // e.g. "C-C-C-T"
    int heads_for(const StageSpec& stage) const;
    // Throws ConfigError on any violated invariant.
    void validate() const;

    // Flat "key=value" lines; the checkpoint header.
    std::string serialize() const;
    static ArchSpec deserialize(std::string_view text);

    bool operator==(const ArchSpec&) const = default;
};

std::string_view preset_name(Preset p);
Preset parse_preset(std::string_view name);

// Parses a stage string matching [CT](-[CT]){3}; the preset supplies depths,
// widths and the stem. Throws ParseError naming the offending position.
ArchSpec parse_arch_spec(std::string_view stages, Preset preset = Preset::kDesk, int num_classes = 2,
                         int window = 7);

}  // namespace asca::model
