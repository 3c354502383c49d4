#include <charconv>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "asca/cli.hpp"
#include "asca/errors.hpp"

namespace asca::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}
std::string format(int v) { return std::to_string(v); }
std::string format(std::int64_t v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ParseError("config key '" + key + "': '" + value + "' is not " + expected);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto res = std::from_chars(value.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end) bad_value(key, value, expected);
    return out;
}

void parse_into(const std::string& key, const std::string& value, double& dst) {
    dst = parse_number<double>(key, value, "a number");
}
void parse_into(const std::string& key, const std::string& value, int& dst) {
    dst = parse_number<int>(key, value, "an integer");
}
void parse_into(const std::string& key, const std::string& value, std::int64_t& dst) {
    dst = parse_number<std::int64_t>(key, value, "an integer");
}
void parse_into(const std::string& key, const std::string& value, std::uint64_t& dst) {
    dst = parse_number<std::uint64_t>(key, value, "a non-negative integer");
}
void parse_into(const std::string& key, const std::string& value, bool& dst) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") {
        dst = true;
    } else if (value == "false" || value == "0" || value == "no" || value == "off") {
        dst = false;
    } else {
        bad_value(key, value, "a boolean");
    }
}
void parse_into(const std::string&, const std::string& value, std::string& dst) { dst = value; }

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field field(std::string key, Access access) {
    return Field{key,
                 [key, access](RunConfig& c, const std::string& v) { parse_into(key, v, access(c)); },
                 [access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); }};
}

#define ASCA_FIELD(name, expr) field(name, [](RunConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        ASCA_FIELD("paths.manifest", c.manifest),
        ASCA_FIELD("paths.audio_root", c.audio_root),
        ASCA_FIELD("paths.output_dir", c.output_dir),
        ASCA_FIELD("paths.cache_dir", c.cache_dir),
        ASCA_FIELD("paths.noise_dir", c.augment.noise_dir),
        ASCA_FIELD("runtime.threads", c.threads),

        ASCA_FIELD("frontend.win_ms", c.frontend.win_ms),
        ASCA_FIELD("frontend.hop_ms", c.frontend.hop_ms),
        ASCA_FIELD("frontend.n_mels", c.frontend.n_mels),
        ASCA_FIELD("frontend.fmin", c.frontend.fmin),
        ASCA_FIELD("frontend.fmax", c.frontend.fmax),
        ASCA_FIELD("frontend.center", c.frontend.center),
        ASCA_FIELD("frontend.canvas_height", c.frontend.canvas_height),
        ASCA_FIELD("frontend.canvas_width", c.frontend.canvas_width),

        ASCA_FIELD("augment.mixup", c.augment.mixup),
        ASCA_FIELD("augment.mixup_alpha", c.augment.mixup_alpha),
        ASCA_FIELD("augment.masking", c.augment.masking),
        ASCA_FIELD("augment.n_freq_masks", c.augment.n_freq_masks),
        ASCA_FIELD("augment.freq_mask_max", c.augment.freq_mask_max),
        ASCA_FIELD("augment.n_time_masks", c.augment.n_time_masks),
        ASCA_FIELD("augment.time_mask_max", c.augment.time_mask_max),
        ASCA_FIELD("augment.noise", c.augment.noise),
        ASCA_FIELD("augment.noise_gain", c.augment.noise_gain),
        ASCA_FIELD("augment.noise_probability", c.augment.noise_probability),

        ASCA_FIELD("train.batch_size", c.train.batch_size),
        ASCA_FIELD("train.epochs", c.train.epochs),
        ASCA_FIELD("train.lr0", c.train.lr0),
        ASCA_FIELD("train.lr_min", c.train.lr_min),
        ASCA_FIELD("train.weight_decay", c.train.weight_decay),
        ASCA_FIELD("train.beta1", c.train.beta1),
        ASCA_FIELD("train.beta2", c.train.beta2),
        ASCA_FIELD("train.eps", c.train.eps),
        ASCA_FIELD("train.drop_path_max", c.train.drop_path_max),
        ASCA_FIELD("train.weight_noise_std", c.train.weight_noise_std),
        ASCA_FIELD("train.seed", c.train.seed),
        ASCA_FIELD("train.val_fraction", c.train.val_fraction),
        ASCA_FIELD("train.max_steps", c.train.max_steps),

        ASCA_FIELD("model.stages", c.stages),
        ASCA_FIELD("model.preset", c.preset),
        ASCA_FIELD("model.window", c.window),
        ASCA_FIELD("model.num_heads", c.num_heads),
    };
    return table;
}

#undef ASCA_FIELD

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
    return out;
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(source + " line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(source + " line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(source + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ParseError("--set expects key=value, got '" + assignment + "'");
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("ASCA_NUM_THREADS"); env != nullptr && *env != '\0') {
        int n = 0;
        const auto* end = env + std::char_traits<char>::length(env);
        const auto res = std::from_chars(env, end, n);
        if (res.ec != std::errc() || res.ptr != end || n < 1) {
            throw ConfigError(std::string("ASCA_NUM_THREADS must be a positive integer, got '") + env + "'");
        }
        return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace asca::cli
