#pragma once

#include "steer/model_config.hpp"
#include "steer/tokenizer.hpp"
#include "steer/weights.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace steer {

/// SHA-256 over the canonical config text followed by every schema tensor
/// (name, shape, little-endian f32 bytes) in schema order.
struct ModelId {
    std::array<unsigned char, 32> bytes{};

    std::string hex() const;
    static ModelId from_hex(std::string_view hex);
    auto operator<=>(const ModelId&) const = default;
};

/// Immutable loaded model. Share it through ModelHandle; every inference call
/// owns its scratch state, so concurrent calls on one handle are safe.
class Model {
public:
    Model(ModelConfig config, ModelWeights weights, Tokenizer tokenizer);

    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    const ModelId& id() const { return id_; }

private:
    ModelConfig config_;
    ModelWeights weights_;
    Tokenizer tokenizer_;
    ModelId id_;
};

using ModelHandle = std::shared_ptr<const Model>;

ModelHandle load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path,
                       const std::optional<std::filesystem::path>& vocab_path = std::nullopt);
ModelHandle make_model(ModelConfig config, ModelWeights weights);
ModelId compute_model_id(const ModelConfig& config, const ModelWeights& weights);
void save_model(const Model& model, const std::filesystem::path& config_path,
                const std::filesystem::path& weights_path);

/// The post-block residual handed to hooks: rows are consecutive sequence
/// positions starting at `first_position`, each `hidden` floats wide.
struct ResidualView {
    int layer = 0;
    std::size_t first_position = 0;
    std::size_t rows = 0;
    std::size_t hidden = 0;
    std::span<float> data;

    std::span<float> row(std::size_t r) const { return data.subspan(r * hidden, hidden); }
};

using Hook = std::function<void(ResidualView&)>;

/// Hooks keyed by layer; hooks at one layer run in insertion order.
///
/// With the KV cache enabled, decode steps only pass the newly appended rows,
/// so hooks that must stay cache-consistent have to act position-wise.
class HookSet {
public:
    void add(int layer, Hook hook);
    bool empty() const { return hooks_.empty(); }
    const std::vector<Hook>* at(int layer) const;
    std::vector<int> layers() const;

private:
    std::map<int, std::vector<Hook>> hooks_;
};

/// Per-position logits, row-major [seq_len x vocab].
struct LogitRecord {
    std::size_t seq_len = 0;
    std::size_t vocab = 0;
    std::vector<float> logits;

    std::span<const float> row(std::size_t pos) const { return {logits.data() + pos * vocab, vocab}; }
    std::vector<double> log_softmax_row(std::size_t pos) const;
};

std::vector<double> log_softmax(std::span<const float> logits);

// Lowest id wins ties.
TokenId argmax_token(std::span<const float> logits);

/// Full forward pass over `tokens`. Each hook runs once at its layer with the
/// residual x_{l+1} = x_l + block_l(x_l) of every position, before the next
/// layer (and before the final norm for the last layer).
LogitRecord forward(const ModelHandle& model, std::span<const TokenId> tokens, const HookSet& hooks = {});

struct DecodeOptions {
    bool use_kv_cache = true;
    // Overrides the tokenizer's end-of-sequence id; -1 disables stopping on EOS.
    std::optional<TokenId> eos;
    // Called with each new token and its index; return false to stop early.
    std::function<bool(TokenId, std::size_t)> on_token;
};

/// Appends the argmax token until `max_new` tokens, EOS (not appended), or the
/// context limit. Returns the prompt followed by the continuation.
TokenSequence greedy_decode(const ModelHandle& model, std::span<const TokenId> prompt, int max_new,
                            const HookSet& hooks = {}, const DecodeOptions& options = {});

/// log P(tokens[i] | tokens[0..i)) for i = 1..N-1 under teacher forcing.
std::vector<double> sequence_logprob(const ModelHandle& model, std::span<const TokenId> tokens,
                                     const HookSet& hooks = {});

}  // namespace steer
