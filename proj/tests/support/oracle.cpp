#include "support/oracle.hpp"

#include <cmath>

namespace steer::testing {

namespace {

double at(const std::vector<float>& m, std::size_t cols, std::size_t r, std::size_t c) {
    return static_cast<double>(m[r * cols + c]);
}

std::vector<double> rms(const std::vector<double>& x, const std::vector<float>& gain, double eps) {
    double ms = 0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / std::sqrt(ms + eps) * gain[i];
    return y;
}

std::vector<double> times(const std::vector<double>& x, const std::vector<float>& w, std::size_t out) {
    std::vector<double> y(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
        for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * at(w, out, i, j);
    }
    return y;
}

void rotate(std::vector<double>& v, std::size_t heads, std::size_t hd, std::size_t pos) {
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < hd / 2; ++i) {
            double theta = static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(hd));
            double a = v[h * hd + 2 * i];
            double b = v[h * hd + 2 * i + 1];
            v[h * hd + 2 * i] = a * std::cos(theta) - b * std::sin(theta);
            v[h * hd + 2 * i + 1] = a * std::sin(theta) + b * std::cos(theta);
        }
    }
}

}  // namespace

Matrix reference_embed(const ModelConfig& cfg, const ModelWeights& w, const std::vector<TokenId>& tokens) {
    const std::size_t H = static_cast<std::size_t>(cfg.hidden_dim);
    Matrix x(tokens.size(), std::vector<double>(H));
    for (std::size_t p = 0; p < tokens.size(); ++p) {
        for (std::size_t i = 0; i < H; ++i) {
            x[p][i] = at(w.tok_embeddings, H, static_cast<std::size_t>(tokens[p]), i);
            if (cfg.positional_scheme == PositionalScheme::learned_absolute) x[p][i] += at(w.pos_embeddings, H, p, i);
        }
    }
    return x;
}

Matrix reference_block_delta(const ModelConfig& cfg, const LayerWeights& L, const Matrix& x) {
    const std::size_t H = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t F = static_cast<std::size_t>(cfg.ffn_dim());
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t hd = H / heads;
    const std::size_t n = x.size();

    Matrix q(n), k(n), v(n);
    for (std::size_t p = 0; p < n; ++p) {
        auto xn = rms(x[p], L.attn_norm, cfg.norm_epsilon);
        q[p] = times(xn, L.wq, H);
        k[p] = times(xn, L.wk, H);
        v[p] = times(xn, L.wv, H);
        if (cfg.positional_scheme == PositionalScheme::rotary) {
            rotate(q[p], heads, hd, p);
            rotate(k[p], heads, hd, p);
        }
    }

    Matrix delta(n, std::vector<double>(H));
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<double> attn(H, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> s(p + 1);
            double mx = -INFINITY;
            for (std::size_t j = 0; j <= p; ++j) {
                double d = 0;
                for (std::size_t e = 0; e < hd; ++e) d += q[p][h * hd + e] * k[j][h * hd + e];
                s[j] = d / std::sqrt(static_cast<double>(hd));
                mx = std::max(mx, s[j]);
            }
            double z = 0;
            for (auto& sj : s) z += (sj = std::exp(sj - mx));
            for (std::size_t j = 0; j <= p; ++j) {
                for (std::size_t e = 0; e < hd; ++e) attn[h * hd + e] += s[j] / z * v[j][h * hd + e];
            }
        }
        auto a = times(attn, L.wo, H);
        std::vector<double> mid(H);
        for (std::size_t i = 0; i < H; ++i) mid[i] = x[p][i] + a[i];
        auto hn = rms(mid, L.mlp_norm, cfg.norm_epsilon);
        auto g = times(hn, L.w_gate, F);
        auto u = times(hn, L.w_up, F);
        for (std::size_t i = 0; i < F; ++i) g[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
        auto m = times(g, L.w_down, H);
        for (std::size_t i = 0; i < H; ++i) delta[p][i] = a[i] + m[i];
    }
    return delta;
}

Matrix reference_logits_from_residual(const ModelConfig& cfg, const ModelWeights& w, const Matrix& x) {
    Matrix out;
    for (const auto& row : x) {
        out.push_back(times(rms(row, w.final_norm, cfg.norm_epsilon), w.unembedding,
                            static_cast<std::size_t>(cfg.vocab_size)));
    }
    return out;
}

Matrix reference_logits(const ModelConfig& cfg, const ModelWeights& w, const std::vector<TokenId>& tokens) {
    Matrix x = reference_embed(cfg, w, tokens);
    for (const auto& L : w.layers) {
        auto d = reference_block_delta(cfg, L, x);
        for (std::size_t p = 0; p < x.size(); ++p) {
            for (std::size_t i = 0; i < x[p].size(); ++i) x[p][i] += d[p][i];
        }
    }
    return reference_logits_from_residual(cfg, w, x);
}

}  // namespace steer::testing
