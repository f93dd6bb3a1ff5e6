#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace steer {

enum class PositionalScheme { rotary, learned_absolute };

std::string_view to_string(PositionalScheme scheme);
PositionalScheme parse_positional_scheme(std::string_view text);

/// Shape of a decoder-only transformer.
///
/// Serialized as UTF-8 `key=value` lines carrying exactly these fields; blank
/// lines and `#` comments are ignored, anything else is rejected.
struct ModelConfig {
    int n_layers = 1;
    int hidden_dim = 8;
    int n_heads = 1;
    int vocab_size = 256;
    int max_seq_len = 128;
    float norm_epsilon = 1e-5f;
    PositionalScheme positional_scheme = PositionalScheme::rotary;

    int head_dim() const { return hidden_dim / n_heads; }
    // The feed-forward width is implied by the hidden size (gated MLP, 4x).
    int ffn_dim() const { return 4 * hidden_dim; }

    /// Throws ConfigError when a field is out of range or fields disagree.
    void validate() const;

    /// Canonical text form; parse(serialize()) round-trips exactly.
    std::string serialize() const;
    static ModelConfig parse(std::string_view text);

    static ModelConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace steer
