#include "steer/model_config.hpp"

#include "steer/errors.hpp"
#include "steer/text_util.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace steer {

std::string_view to_string(PositionalScheme scheme) {
    switch (scheme) {
        case PositionalScheme::rotary: return "rotary";
        case PositionalScheme::learned_absolute: return "learned-absolute";
    }
    return "rotary";
}

PositionalScheme parse_positional_scheme(std::string_view text) {
    if (text == "rotary") return PositionalScheme::rotary;
    if (text == "learned-absolute") return PositionalScheme::learned_absolute;
    throw ConfigError("unknown positional_scheme '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
    };
    positive(n_layers, "n_layers");
    positive(hidden_dim, "hidden_dim");
    positive(n_heads, "n_heads");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    if (!(norm_epsilon > 0.0f) || !std::isfinite(norm_epsilon)) {
        throw ConfigError("norm_epsilon must be a finite positive number");
    }
    if (hidden_dim % n_heads != 0) {
        throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (positional_scheme == PositionalScheme::rotary && head_dim() % 2 != 0) {
        throw ConfigError("rotary positions need an even head dimension, got " + std::to_string(head_dim()));
    }
}

std::string ModelConfig::serialize() const {
    std::ostringstream out;
    out << "n_layers=" << n_layers << '\n'
        << "hidden_dim=" << hidden_dim << '\n'
        << "n_heads=" << n_heads << '\n'
        << "vocab_size=" << vocab_size << '\n'
        << "max_seq_len=" << max_seq_len << '\n'
        << "norm_epsilon=" << detail::format_float(norm_epsilon) << '\n'
        << "positional_scheme=" << to_string(positional_scheme) << '\n';
    return out.str();
}

namespace {

int parse_int_field(const std::string& key, std::string_view value) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("field '" + key + "' is not an integer: '" + std::string(value) + "'");
    }
    return out;
}

}  // namespace

ModelConfig ModelConfig::parse(std::string_view text) {
    std::map<std::string, std::string> fields;
    std::size_t line_no = 0;
    for (std::string_view line : detail::split_lines(text)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw FormatError("config line " + std::to_string(line_no) + " has no '='");
        }
        std::string key(detail::trim(line.substr(0, eq)));
        std::string value(detail::trim(line.substr(eq + 1)));
        if (!fields.emplace(key, value).second) {
            throw FormatError("config key '" + key + "' appears twice");
        }
    }

    static const char* const kKeys[] = {"n_layers",    "hidden_dim",   "n_heads",          "vocab_size",
                                        "max_seq_len", "norm_epsilon", "positional_scheme"};
    for (const char* key : kKeys) {
        if (!fields.count(key)) throw ConfigError(std::string("config is missing field '") + key + "'");
    }
    if (fields.size() != std::size(kKeys)) {
        for (const auto& [key, value] : fields) {
            bool known = false;
            for (const char* k : kKeys) known = known || key == k;
            if (!known) throw ConfigError("config has unknown field '" + key + "'");
        }
    }

    ModelConfig cfg;
    cfg.n_layers = parse_int_field("n_layers", fields["n_layers"]);
    cfg.hidden_dim = parse_int_field("hidden_dim", fields["hidden_dim"]);
    cfg.n_heads = parse_int_field("n_heads", fields["n_heads"]);
    cfg.vocab_size = parse_int_field("vocab_size", fields["vocab_size"]);
    cfg.max_seq_len = parse_int_field("max_seq_len", fields["max_seq_len"]);
    const std::string& eps = fields["norm_epsilon"];
    auto [ptr, ec] = std::from_chars(eps.data(), eps.data() + eps.size(), cfg.norm_epsilon);
    if (ec != std::errc() || ptr != eps.data() + eps.size()) {
        throw ConfigError("field 'norm_epsilon' is not a number: '" + eps + "'");
    }
    cfg.positional_scheme = parse_positional_scheme(fields["positional_scheme"]);
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
    return parse(detail::read_text_file(path));
}

void ModelConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write config " + path.string());
    out << serialize();
    if (!out) throw Error("failed writing config " + path.string());
}

}  // namespace steer
