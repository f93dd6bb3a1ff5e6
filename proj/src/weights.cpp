#include "steer/weights.hpp"

#include "binary_io.hpp"
#include "steer/errors.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>

namespace steer {

namespace {

constexpr char kMagic[4] = {'C', 'L', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;

std::string shape_string(const std::vector<std::uint64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

namespace detail {

std::vector<unsigned char> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

std::uint64_t Tensor::element_count() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::vector<NamedTensor> parse_weight_bytes(const std::vector<unsigned char>& bytes) {
    detail::ByteReader r(bytes, "weight file");
    auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("weight file has bad magic");
    auto version = r.u32();
    if (version != kVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
    auto count = r.u32();

    std::vector<NamedTensor> out;
    for (std::uint32_t t = 0; t < count; ++t) {
        NamedTensor nt;
        nt.name = r.text(r.u16());
        auto rank = r.u8();
        std::uint64_t elements = 1;
        for (int d = 0; d < rank; ++d) {
            nt.tensor.shape.push_back(r.u64());
            elements *= nt.tensor.shape.back();
        }
        if (elements > r.remaining() / 4) {
            throw FormatError("weight file truncated in tensor '" + nt.name + "'");
        }
        nt.tensor.data.resize(elements);
        for (auto& v : nt.tensor.data) v = r.f32();
        out.push_back(std::move(nt));
    }
    if (r.remaining() != 0) throw FormatError("weight file has trailing bytes");
    return out;
}

std::vector<NamedTensor> read_weight_file(const std::filesystem::path& path) {
    return parse_weight_bytes(detail::read_binary_file(path.string()));
}

std::vector<unsigned char> serialize_weights(const std::vector<NamedTensor>& tensors) {
    detail::ByteWriter w;
    w.text(std::string_view(kMagic, 4));
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        w.u16(static_cast<std::uint16_t>(nt.name.size()));
        w.text(nt.name);
        w.u8(static_cast<std::uint8_t>(nt.tensor.shape.size()));
        for (auto d : nt.tensor.shape) w.u64(d);
        for (float v : nt.tensor.data) w.f32(v);
    }
    return std::move(w.buffer());
}

void write_weight_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    auto bytes = serialize_weights(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

std::vector<TensorSpec> tensor_schema(const ModelConfig& c) {
    const auto H = static_cast<std::uint64_t>(c.hidden_dim);
    const auto F = static_cast<std::uint64_t>(c.ffn_dim());
    const auto V = static_cast<std::uint64_t>(c.vocab_size);
    std::vector<TensorSpec> s;
    s.push_back({"tok_embeddings", {V, H}});
    if (c.positional_scheme == PositionalScheme::learned_absolute) {
        s.push_back({"pos_embeddings", {static_cast<std::uint64_t>(c.max_seq_len), H}});
    }
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        s.push_back({p + "attn_norm", {H}});
        s.push_back({p + "wq", {H, H}});
        s.push_back({p + "wk", {H, H}});
        s.push_back({p + "wv", {H, H}});
        s.push_back({p + "wo", {H, H}});
        s.push_back({p + "mlp_norm", {H}});
        s.push_back({p + "w_gate", {H, F}});
        s.push_back({p + "w_up", {H, F}});
        s.push_back({p + "w_down", {F, H}});
    }
    s.push_back({"final_norm", {H}});
    s.push_back({"unembedding", {H, V}});
    return s;
}

namespace {

// Visits (name, storage) for every schema tensor in canonical order.
template <typename Weights, typename Fn>
void for_each_tensor(const ModelConfig& c, Weights& w, Fn&& fn) {
    fn("tok_embeddings", w.tok_embeddings);
    if (c.positional_scheme == PositionalScheme::learned_absolute) fn("pos_embeddings", w.pos_embeddings);
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        auto& L = w.layers[static_cast<std::size_t>(l)];
        fn(p + "attn_norm", L.attn_norm);
        fn(p + "wq", L.wq);
        fn(p + "wk", L.wk);
        fn(p + "wv", L.wv);
        fn(p + "wo", L.wo);
        fn(p + "mlp_norm", L.mlp_norm);
        fn(p + "w_gate", L.w_gate);
        fn(p + "w_up", L.w_up);
        fn(p + "w_down", L.w_down);
    }
    fn("final_norm", w.final_norm);
    fn("unembedding", w.unembedding);
}

}  // namespace

ModelWeights ModelWeights::zeros(const ModelConfig& config) {
    config.validate();
    ModelWeights w;
    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    auto schema = tensor_schema(config);
    std::size_t i = 0;
    for_each_tensor(config, w, [&](const std::string& name, std::vector<float>& data) {
        const auto& spec = schema[i++];
        std::uint64_t n = 1;
        for (auto d : spec.shape) n *= d;
        const bool is_gain = name.ends_with("norm");
        data.assign(n, is_gain ? 1.0f : 0.0f);
    });
    return w;
}

ModelWeights ModelWeights::from_tensors(const ModelConfig& config, const std::vector<NamedTensor>& tensors) {
    config.validate();
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : tensors) {
        if (!by_name.emplace(nt.name, &nt.tensor).second) throw ShapeError(nt.name, "appears twice");
    }
    std::map<std::string, std::vector<std::uint64_t>> expected;
    for (auto& spec : tensor_schema(config)) expected.emplace(spec.name, spec.shape);
    for (const auto& nt : tensors) {
        if (!expected.count(nt.name)) throw ShapeError(nt.name, "not part of the model schema");
    }

    ModelWeights w;
    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    for_each_tensor(config, w, [&](const std::string& name, std::vector<float>& data) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ShapeError(name, "missing");
        const auto& want = expected.at(name);
        if (it->second->shape != want) {
            throw ShapeError(name, "shape mismatch: expected " + shape_string(want) + ", found " +
                                       shape_string(it->second->shape));
        }
        data = it->second->data;
    });
    return w;
}

std::vector<NamedTensor> ModelWeights::to_tensors(const ModelConfig& config) const {
    auto schema = tensor_schema(config);
    std::vector<NamedTensor> out;
    std::size_t i = 0;
    for_each_tensor(config, *this, [&](const std::string& name, const std::vector<float>& data) {
        const auto& spec = schema[i++];
        Tensor t{spec.shape, data};
        if (t.element_count() != data.size()) throw ShapeError(name, "in-memory size does not match schema");
        out.push_back({name, std::move(t)});
    });
    return out;
}

}  // namespace steer
