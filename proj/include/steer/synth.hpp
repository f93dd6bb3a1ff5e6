#pragma once

#include "steer/model.hpp"

#include <cstdint>

namespace steer {

/// Seeded Gaussian weights with norm gains one. Embeddings have std `scale`;
/// every projection matrix has std scale / sqrt(fan_in), which keeps the
/// residual stream of order one. Deterministic for a given (config, seed) on
/// one standard library implementation.
ModelWeights random_weights(const ModelConfig& config, std::uint64_t seed, float scale = 1.0f);

ModelHandle random_model(const ModelConfig& config, std::uint64_t seed, float scale = 1.0f);

}  // namespace steer
