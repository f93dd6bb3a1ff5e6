#pragma once

#include "steer/model_config.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace steer {

/// Dense row-major f32 tensor.
struct Tensor {
    std::vector<std::uint64_t> shape;
    std::vector<float> data;

    std::uint64_t element_count() const;
    bool operator==(const Tensor&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Reads a CLMW weight file:
///   "CLMW" | u32 version=1 | u32 tensor count |
///   per tensor: u16 name length, UTF-8 name, u8 rank, u64 dims[rank], f32 data (little-endian).
/// Throws FormatError on a bad magic, version, or truncated body.
std::vector<NamedTensor> read_weight_file(const std::filesystem::path& path);
std::vector<NamedTensor> parse_weight_bytes(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_weights(const std::vector<NamedTensor>& tensors);
void write_weight_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

struct TensorSpec {
    std::string name;
    std::vector<std::uint64_t> shape;
};

/// Every tensor a config implies, in canonical order. Matrices are stored [in x out]
/// and applied as row-vector times matrix.
std::vector<TensorSpec> tensor_schema(const ModelConfig& config);

struct LayerWeights {
    std::vector<float> attn_norm;  // [H]
    std::vector<float> wq, wk, wv, wo;  // [H x H]
    std::vector<float> mlp_norm;  // [H]
    std::vector<float> w_gate, w_up;  // [H x F]
    std::vector<float> w_down;  // [F x H]
};

struct ModelWeights {
    std::vector<float> tok_embeddings;  // [vocab x H]
    std::vector<float> pos_embeddings;  // [max_seq_len x H], learned-absolute only
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;  // [H]
    std::vector<float> unembedding;  // [H x vocab]

    /// All-zero weights with norm gains set to one.
    static ModelWeights zeros(const ModelConfig& config);

    /// Checks every schema tensor is present with the declared shape and that
    /// nothing else is. Throws ShapeError naming the offending tensor.
    static ModelWeights from_tensors(const ModelConfig& config, const std::vector<NamedTensor>& tensors);
    std::vector<NamedTensor> to_tensors(const ModelConfig& config) const;
};

}  // namespace steer
