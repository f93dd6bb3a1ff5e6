#include "steer/synth.hpp"

#include <cmath>
#include <random>

namespace steer {

ModelWeights random_weights(const ModelConfig& config, std::uint64_t seed, float scale) {
    auto w = ModelWeights::zeros(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto fill = [&](std::vector<float>& v, int fan_in) {
        const float std_dev = scale / std::sqrt(static_cast<float>(fan_in));
        for (auto& x : v) x = std_dev * normal(rng);
    };
    const int h = config.hidden_dim, f = config.ffn_dim();
    fill(w.tok_embeddings, 1);
    fill(w.pos_embeddings, 1);
    for (auto& L : w.layers) {
        fill(L.wq, h);
        fill(L.wk, h);
        fill(L.wv, h);
        fill(L.wo, h);
        fill(L.w_gate, h);
        fill(L.w_up, h);
        fill(L.w_down, f);
    }
    fill(w.unembedding, h);
    return w;
}

ModelHandle random_model(const ModelConfig& config, std::uint64_t seed, float scale) {
    return make_model(config, random_weights(config, seed, scale));
}

}  // namespace steer
