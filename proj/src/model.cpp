#include "steer/model.hpp"

#include "binary_io.hpp"
#include "steer/errors.hpp"
#include "steer/text_util.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <memory>

namespace steer {

std::string ModelId::hex() const { return detail::hex_encode(bytes.data(), bytes.size()); }

ModelId ModelId::from_hex(std::string_view hex) {
    if (hex.size() != 64) throw FormatError("model id must be 64 hex digits");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw FormatError("model id has a non-hex digit");
    };
    ModelId id;
    for (std::size_t i = 0; i < 32; ++i) {
        id.bytes[i] = static_cast<unsigned char>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    }
    return id;
}

ModelId compute_model_id(const ModelConfig& config, const ModelWeights& weights) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    auto update = [&](const void* p, std::size_t n) {
        if (EVP_DigestUpdate(ctx.get(), p, n) != 1) throw Error("sha256 update failed");
    };
    const std::string cfg = config.serialize();
    update(cfg.data(), cfg.size());
    for (const auto& nt : weights.to_tensors(config)) {
        detail::ByteWriter w;
        w.u16(static_cast<std::uint16_t>(nt.name.size()));
        w.text(nt.name);
        w.u8(static_cast<std::uint8_t>(nt.tensor.shape.size()));
        for (auto d : nt.tensor.shape) w.u64(d);
        for (float v : nt.tensor.data) w.f32(v);
        update(w.buffer().data(), w.size());
    }
    ModelId id;
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), id.bytes.data(), &len) != 1 || len != 32) throw Error("sha256 final failed");
    return id;
}

Model::Model(ModelConfig config, ModelWeights weights, Tokenizer tokenizer)
    : config_(std::move(config)), weights_(std::move(weights)), tokenizer_(std::move(tokenizer)) {
    config_.validate();
    // Re-check shapes of in-memory weights through the same path as file loads.
    weights_ = ModelWeights::from_tensors(config_, weights_.to_tensors(config_));
    if (tokenizer_.vocab_size() != config_.vocab_size) {
        throw ConfigError("tokenizer vocabulary " + std::to_string(tokenizer_.vocab_size()) +
                          " does not match vocab_size " + std::to_string(config_.vocab_size));
    }
    id_ = compute_model_id(config_, weights_);
}

ModelHandle make_model(ModelConfig config, ModelWeights weights) {
    auto tok = Tokenizer::byte_level(config.vocab_size);
    return std::make_shared<const Model>(std::move(config), std::move(weights), std::move(tok));
}

ModelHandle load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path,
                       const std::optional<std::filesystem::path>& vocab_path) {
    auto config = ModelConfig::load(config_path);
    auto weights = ModelWeights::from_tensors(config, read_weight_file(weights_path));
    auto tok = vocab_path ? Tokenizer::from_vocab_file(*vocab_path, config.vocab_size)
                          : Tokenizer::byte_level(config.vocab_size);
    return std::make_shared<const Model>(std::move(config), std::move(weights), std::move(tok));
}

void save_model(const Model& model, const std::filesystem::path& config_path,
                const std::filesystem::path& weights_path) {
    model.config().save(config_path);
    write_weight_file(weights_path, model.weights().to_tensors(model.config()));
}

void HookSet::add(int layer, Hook hook) { hooks_[layer].push_back(std::move(hook)); }

const std::vector<Hook>* HookSet::at(int layer) const {
    auto it = hooks_.find(layer);
    return it == hooks_.end() ? nullptr : &it->second;
}

std::vector<int> HookSet::layers() const {
    std::vector<int> out;
    for (const auto& [layer, hooks] : hooks_) out.push_back(layer);
    return out;
}

std::vector<double> log_softmax(std::span<const float> logits) {
    double max = -INFINITY;
    for (float v : logits) max = std::max(max, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - max);
    const double log_z = max + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - log_z;
    return out;
}

std::vector<double> LogitRecord::log_softmax_row(std::size_t pos) const { return log_softmax(row(pos)); }

TokenId argmax_token(std::span<const float> logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

namespace {

// y = x * W for W stored [in x out]. Dot products longer than 4096 terms
// accumulate in double.
void matvec(const float* x, const float* w, std::size_t in, std::size_t out, float* y) {
    if (in > 4096) {
        std::vector<double> acc(out, 0.0);
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = x[i];
            const float* row = w + i * out;
            for (std::size_t j = 0; j < out; ++j) acc[j] += xi * static_cast<double>(row[j]);
        }
        for (std::size_t j = 0; j < out; ++j) y[j] = static_cast<float>(acc[j]);
        return;
    }
    std::fill(y, y + out, 0.0f);
    for (std::size_t i = 0; i < in; ++i) {
        const float xi = x[i];
        const float* row = w + i * out;
        for (std::size_t j = 0; j < out; ++j) y[j] += xi * row[j];
    }
}

void rms_norm(const float* x, const float* gain, std::size_t n, float eps, float* y) {
    float ss = 0.0f;
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * inv * gain[i];
}

// Rotates consecutive (even, odd) pairs inside each head.
void apply_rotary(float* v, std::size_t n_heads, std::size_t head_dim, std::size_t pos) {
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(pos) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        for (std::size_t h = 0; h < n_heads; ++h) {
            float* p = v + h * head_dim + 2 * i;
            const float a = p[0];
            const float b = p[1];
            p[0] = a * c - b * s;
            p[1] = a * s + b * c;
        }
    }
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

// Owns the per-call state of one inference: the KV cache and position counter.
// Every row is computed by the same per-row code whether it arrives in a full
// pass or as a single decode step, so cached and uncached runs agree bit for bit.
class Engine {
public:
    explicit Engine(const Model& model)
        : cfg_(model.config()), w_(model.weights()), k_(static_cast<std::size_t>(cfg_.n_layers)),
          v_(static_cast<std::size_t>(cfg_.n_layers)) {}

    std::size_t n_past() const { return n_past_; }

    // Processes `tokens` at positions [n_past, n_past + size). Returns logits for
    // every new row when `all_rows`, otherwise only for the last one.
    std::vector<float> run(std::span<const TokenId> tokens, const HookSet& hooks, bool all_rows) {
        const std::size_t H = static_cast<std::size_t>(cfg_.hidden_dim);
        const std::size_t F = static_cast<std::size_t>(cfg_.ffn_dim());
        const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
        const std::size_t n_heads = static_cast<std::size_t>(cfg_.n_heads);
        const std::size_t hd = static_cast<std::size_t>(cfg_.head_dim());
        const std::size_t rows = tokens.size();
        const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

        std::vector<float> x(rows * H);
        for (std::size_t r = 0; r < rows; ++r) {
            const float* emb = w_.tok_embeddings.data() + static_cast<std::size_t>(tokens[r]) * H;
            std::copy(emb, emb + H, x.begin() + static_cast<std::ptrdiff_t>(r * H));
            if (cfg_.positional_scheme == PositionalScheme::learned_absolute) {
                const float* pe = w_.pos_embeddings.data() + (n_past_ + r) * H;
                for (std::size_t i = 0; i < H; ++i) x[r * H + i] += pe[i];
            }
        }

        std::vector<float> xn(H), q(rows * H), attn(H), proj(H), gate(F), up(F), scores;
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const auto& L = w_.layers[static_cast<std::size_t>(l)];
            auto& kc = k_[static_cast<std::size_t>(l)];
            auto& vc = v_[static_cast<std::size_t>(l)];
            kc.resize((n_past_ + rows) * H);
            vc.resize((n_past_ + rows) * H);

            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t pos = n_past_ + r;
                rms_norm(&x[r * H], L.attn_norm.data(), H, cfg_.norm_epsilon, xn.data());
                matvec(xn.data(), L.wq.data(), H, H, &q[r * H]);
                matvec(xn.data(), L.wk.data(), H, H, &kc[pos * H]);
                matvec(xn.data(), L.wv.data(), H, H, &vc[pos * H]);
                if (cfg_.positional_scheme == PositionalScheme::rotary) {
                    apply_rotary(&q[r * H], n_heads, hd, pos);
                    apply_rotary(&kc[pos * H], n_heads, hd, pos);
                }
            }

            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t pos = n_past_ + r;
                scores.resize(pos + 1);
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const float* qh = &q[r * H + h * hd];
                    float max = -INFINITY;
                    for (std::size_t j = 0; j <= pos; ++j) {
                        const float* kh = &kc[j * H + h * hd];
                        float dot = 0.0f;
                        for (std::size_t d = 0; d < hd; ++d) dot += qh[d] * kh[d];
                        scores[j] = dot * scale;
                        max = std::max(max, scores[j]);
                    }
                    float sum = 0.0f;
                    for (std::size_t j = 0; j <= pos; ++j) {
                        scores[j] = std::exp(scores[j] - max);
                        sum += scores[j];
                    }
                    float* out = &attn[h * hd];
                    std::fill(out, out + hd, 0.0f);
                    for (std::size_t j = 0; j <= pos; ++j) {
                        const float p = scores[j] / sum;
                        const float* vh = &vc[j * H + h * hd];
                        for (std::size_t d = 0; d < hd; ++d) out[d] += p * vh[d];
                    }
                }
                matvec(attn.data(), L.wo.data(), H, H, proj.data());
                float* xr = &x[r * H];
                for (std::size_t i = 0; i < H; ++i) xr[i] += proj[i];

                rms_norm(xr, L.mlp_norm.data(), H, cfg_.norm_epsilon, xn.data());
                matvec(xn.data(), L.w_gate.data(), H, F, gate.data());
                matvec(xn.data(), L.w_up.data(), H, F, up.data());
                for (std::size_t i = 0; i < F; ++i) gate[i] = silu(gate[i]) * up[i];
                matvec(gate.data(), L.w_down.data(), F, H, proj.data());
                for (std::size_t i = 0; i < H; ++i) xr[i] += proj[i];
            }

            if (const auto* layer_hooks = hooks.at(l)) {
                ResidualView view{l, n_past_, rows, H, std::span<float>(x)};
                for (const auto& hook : *layer_hooks) hook(view);
            }
            for (float v : x) {
                if (!std::isfinite(v)) throw NonFiniteError(l);
            }
        }
        n_past_ += rows;

        const std::size_t first = all_rows ? 0 : rows - 1;
        std::vector<float> logits((rows - first) * V);
        for (std::size_t r = first; r < rows; ++r) {
            rms_norm(&x[r * H], w_.final_norm.data(), H, cfg_.norm_epsilon, xn.data());
            matvec(xn.data(), w_.unembedding.data(), H, V, &logits[(r - first) * V]);
        }
        return logits;
    }

private:
    const ModelConfig& cfg_;
    const ModelWeights& w_;
    std::vector<std::vector<float>> k_;
    std::vector<std::vector<float>> v_;
    std::size_t n_past_ = 0;
};

void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw PreconditionError("token sequence is empty");
    if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
        throw RangeError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    }
    for (auto t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw RangeError("token id " + std::to_string(t) + " outside vocabulary of " +
                             std::to_string(cfg.vocab_size));
        }
    }
}

void check_hooks(const ModelConfig& cfg, const HookSet& hooks) {
    for (int l : hooks.layers()) {
        if (l < 0 || l >= cfg.n_layers) {
            throw RangeError("hook layer " + std::to_string(l) + " outside [0, " + std::to_string(cfg.n_layers) + ")");
        }
    }
}

}  // namespace

LogitRecord forward(const ModelHandle& model, std::span<const TokenId> tokens, const HookSet& hooks) {
    check_tokens(model->config(), tokens);
    check_hooks(model->config(), hooks);
    Engine engine(*model);
    LogitRecord rec;
    rec.seq_len = tokens.size();
    rec.vocab = static_cast<std::size_t>(model->config().vocab_size);
    rec.logits = engine.run(tokens, hooks, true);
    return rec;
}

TokenSequence greedy_decode(const ModelHandle& model, std::span<const TokenId> prompt, int max_new,
                            const HookSet& hooks, const DecodeOptions& options) {
    if (max_new < 0) throw PreconditionError("max_new must be >= 0");
    const auto& cfg = model->config();
    check_tokens(cfg, prompt);
    check_hooks(cfg, hooks);

    TokenSequence seq(prompt.begin(), prompt.end());
    if (max_new == 0) return seq;

    std::optional<TokenId> eos = options.eos ? options.eos : model->tokenizer().eos();
    if (eos && *eos < 0) eos.reset();
    const std::size_t limit = static_cast<std::size_t>(cfg.max_seq_len);

    Engine engine(*model);
    std::vector<float> logits = options.use_kv_cache ? engine.run(prompt, hooks, false) : std::vector<float>();
    for (int step = 0; step < max_new && seq.size() < limit; ++step) {
        if (!options.use_kv_cache) {
            Engine fresh(*model);
            logits = fresh.run(seq, hooks, false);
        }
        const TokenId next = argmax_token(logits);
        if (eos && next == *eos) break;
        seq.push_back(next);
        if (options.on_token && !options.on_token(next, static_cast<std::size_t>(step))) break;
        if (step + 1 < max_new && seq.size() < limit && options.use_kv_cache) {
            const TokenId one[1] = {next};
            logits = engine.run(one, hooks, false);
        }
    }
    return seq;
}

std::vector<double> sequence_logprob(const ModelHandle& model, std::span<const TokenId> tokens,
                                     const HookSet& hooks) {
    if (tokens.size() < 2) throw PreconditionError("sequence_logprob needs at least two tokens");
    auto rec = forward(model, tokens, hooks);
    std::vector<double> out;
    out.reserve(tokens.size() - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        out.push_back(rec.log_softmax_row(i - 1)[static_cast<std::size_t>(tokens[i])]);
    }
    return out;
}

}  // namespace steer
