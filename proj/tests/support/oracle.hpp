#pragma once

// Straight-line double-precision reimplementation of the transformer, kept
// independent of the engine's kernels. Used only to check the engine.

#include "steer/model.hpp"

#include <vector>

namespace steer::testing {

using Matrix = std::vector<std::vector<double>>;  // [rows][H]

// Token (+ learned position) embeddings, x_0.
Matrix reference_embed(const ModelConfig& cfg, const ModelWeights& w, const std::vector<TokenId>& tokens);

// Block output M_l(x) for the whole sequence, so that x_{l+1} = x + M_l(x).
Matrix reference_block_delta(const ModelConfig& cfg, const LayerWeights& L, const Matrix& x);

// Final norm + unembedding of every row.
Matrix reference_logits_from_residual(const ModelConfig& cfg, const ModelWeights& w, const Matrix& x);

Matrix reference_logits(const ModelConfig& cfg, const ModelWeights& w, const std::vector<TokenId>& tokens);

}  // namespace steer::testing
