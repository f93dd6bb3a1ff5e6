#include "steer/steering.hpp"

#include "steer/errors.hpp"
#include "steer/text_util.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>

namespace steer {

std::string_view to_string(ReadPosition p) {
    return p == ReadPosition::last_token ? "last_token" : "mean_over_tokens";
}

ReadPosition parse_read_position(std::string_view text) {
    if (text == "last_token") return ReadPosition::last_token;
    if (text == "mean_over_tokens") return ReadPosition::mean_over_tokens;
    throw PreconditionError("unknown read position '" + std::string(text) + "'");
}

void PromptPairSet::validate() const {
    if (trait.empty()) throw PreconditionError("prompt pair set has no trait name");
    if (pairs.empty()) throw PreconditionError("prompt pair set for '" + trait + "' is empty");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const std::string where = "pair " + std::to_string(i) + " of '" + trait + "'";
        if (p.trait != trait) throw PreconditionError(where + " is tagged '" + p.trait + "'");
        if (p.positive.empty() || p.negative.empty()) throw PreconditionError(where + " has an empty text");
        if (p.positive == p.negative) throw PreconditionError(where + " has identical positive and negative text");
    }
}

PromptPairSet parse_pairs_jsonl(std::string_view text) {
    PromptPairSet set;
    std::size_t line_no = 0;
    for (const auto& raw : detail::split_lines(text)) {
        ++line_no;
        auto line = detail::trim(raw);
        if (line.empty()) continue;
        const std::string where = "pairs line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        PromptPair p;
        try {
            p.trait = j.at("trait").get<std::string>();
            p.positive = j.at("positive").get<std::string>();
            p.negative = j.at("negative").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw FormatError(where + ": expected string fields trait, positive, negative");
        }
        if (set.pairs.empty()) set.trait = p.trait;
        if (p.trait != set.trait) {
            throw FormatError(where + ": trait '" + p.trait + "' differs from '" + set.trait + "'");
        }
        set.pairs.push_back(std::move(p));
    }
    return set;
}

PromptPairSet read_pairs_jsonl(const std::filesystem::path& path) {
    return parse_pairs_jsonl(detail::read_text_file(path));
}

std::string pairs_to_jsonl(const PromptPairSet& set) {
    std::string out;
    for (const auto& p : set.pairs) {
        nlohmann::ordered_json j{{"trait", p.trait}, {"positive", p.positive}, {"negative", p.negative}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

void write_pairs_jsonl(const PromptPairSet& set, const std::filesystem::path& path) {
    detail::write_text_file(path, pairs_to_jsonl(set));
}

std::vector<int> ControlVector::layers() const {
    std::vector<int> out;
    for (const auto& [l, v] : layer_vectors) out.push_back(l);
    return out;
}

double ControlVector::norm(int layer) const {
    auto it = layer_vectors.find(layer);
    if (it == layer_vectors.end()) throw NotFoundError("trait '" + trait + "' has no vector at layer " + std::to_string(layer));
    double ss = 0.0;
    for (float v : it->second) ss += static_cast<double>(v) * v;
    return std::sqrt(ss);
}

void ControlVector::validate() const {
    if (trait.empty()) throw PreconditionError("control vector has no trait name");
    if (layer_vectors.empty()) throw PreconditionError("control vector '" + trait + "' has no layers");
    for (const auto& [l, v] : layer_vectors) {
        if (l < 0) throw RangeError("control vector '" + trait + "' has negative layer " + std::to_string(l));
        if (v.size() != hidden_dim) {
            throw ModelMismatchError("control vector '" + trait + "' layer " + std::to_string(l) + " has " +
                                     std::to_string(v.size()) + " entries, expected " + std::to_string(hidden_dim));
        }
        for (float x : v) {
            if (!std::isfinite(x)) {
                throw PreconditionError("control vector '" + trait + "' layer " + std::to_string(l) + " is not finite");
            }
        }
    }
}

void SteeringPlan::validate(const Model& model) const {
    const auto& cfg = model.config();
    for (const auto& e : entries) {
        if (!e.control) throw PreconditionError("plan entry without a control vector");
        const auto& cv = *e.control;
        if (cv.model_id != model.id()) {
            throw ModelMismatchError("control vector '" + cv.trait + "' was extracted from model " +
                                     cv.model_id.hex().substr(0, 12) + ", not " + model.id().hex().substr(0, 12));
        }
        if (cv.hidden_dim != static_cast<std::size_t>(cfg.hidden_dim)) {
            throw ModelMismatchError("control vector '" + cv.trait + "' has hidden size " +
                                     std::to_string(cv.hidden_dim) + ", model has " + std::to_string(cfg.hidden_dim));
        }
        if (!std::isfinite(e.gamma)) throw PreconditionError("gamma for '" + cv.trait + "' is not finite");
        if (e.layers.empty()) throw PreconditionError("plan entry for '" + cv.trait + "' names no layers");
        for (int l : e.layers) {
            if (l < 0 || l >= cfg.n_layers) {
                throw RangeError("layer " + std::to_string(l) + " outside [0, " + std::to_string(cfg.n_layers) + ")");
            }
            auto it = cv.layer_vectors.find(l);
            if (it == cv.layer_vectors.end()) {
                throw PreconditionError("control vector '" + cv.trait + "' has no vector at layer " + std::to_string(l));
            }
            if (it->second.size() != cv.hidden_dim) {
                throw ModelMismatchError("control vector '" + cv.trait + "' layer " + std::to_string(l) +
                                         " has the wrong length");
            }
        }
    }
}

namespace {

void check_layers(const ModelConfig& cfg, std::span<const int> layers) {
    if (layers.empty()) throw PreconditionError("no layers requested");
    for (int l : layers) {
        if (l < 0 || l >= cfg.n_layers) {
            throw RangeError("layer " + std::to_string(l) + " outside [0, " + std::to_string(cfg.n_layers) + ")");
        }
    }
}

// Post-block residual of `text` at each layer, read at `pos`.
std::map<int, std::vector<float>> read_activations(const ModelHandle& model, const std::string& text,
                                                   std::span<const int> layers, ReadPosition pos) {
    auto tokens = model->tokenizer().encode(text);
    if (tokens.empty()) throw TokenizeError("prompt '" + text + "' produced no tokens");
    std::map<int, std::vector<float>> out;
    HookSet hooks;
    for (int l : layers) {
        hooks.add(l, [&out, pos](ResidualView& v) {
            std::vector<float> a(v.hidden, 0.0f);
            if (pos == ReadPosition::last_token) {
                auto row = v.row(v.rows - 1);
                a.assign(row.begin(), row.end());
            } else {
                std::vector<double> acc(v.hidden, 0.0);
                for (std::size_t r = 0; r < v.rows; ++r) {
                    auto row = v.row(r);
                    for (std::size_t i = 0; i < v.hidden; ++i) acc[i] += row[i];
                }
                for (std::size_t i = 0; i < v.hidden; ++i) {
                    a[i] = static_cast<float>(acc[i] / static_cast<double>(v.rows));
                }
            }
            out[v.layer] = std::move(a);
        });
    }
    forward(model, tokens, hooks);
    return out;
}

}  // namespace

ControlVector extract_control_vector(const ModelHandle& model, const PromptPairSet& pair_set,
                                     std::span<const int> layers, ReadPosition read_position,
                                     std::int64_t timestamp) {
    if (pair_set.pairs.empty()) throw PreconditionError("prompt pair set for '" + pair_set.trait + "' is empty");
    const auto& cfg = model->config();
    check_layers(cfg, layers);
    const std::size_t H = static_cast<std::size_t>(cfg.hidden_dim);

    std::map<int, std::vector<double>> sums;
    for (int l : layers) sums[l].assign(H, 0.0);
    for (const auto& pair : pair_set.pairs) {
        auto pos = read_activations(model, pair.positive, layers, read_position);
        auto neg = read_activations(model, pair.negative, layers, read_position);
        for (auto& [l, sum] : sums) {
            const auto& a = pos.at(l);
            const auto& b = neg.at(l);
            for (std::size_t i = 0; i < H; ++i) sum[i] += static_cast<double>(a[i] - b[i]);
        }
    }

    ControlVector cv;
    cv.trait = pair_set.trait;
    cv.model_id = model->id();
    cv.hidden_dim = H;
    const double P = static_cast<double>(pair_set.pairs.size());
    for (auto& [l, sum] : sums) {
        std::vector<float> v(H);
        for (std::size_t i = 0; i < H; ++i) v[i] = static_cast<float>(sum[i] / P);
        cv.layer_vectors.emplace(l, std::move(v));
    }
    cv.meta.pair_count = static_cast<std::uint32_t>(pair_set.pairs.size());
    cv.meta.read_position = read_position;
    cv.meta.timestamp = timestamp;
    return cv;
}

HookSet make_hooks(const Model& model, const SteeringPlan& plan) {
    plan.validate(model);
    HookSet hooks;
    for (const auto& e : plan.entries) {
        const float gamma = static_cast<float>(e.gamma);
        for (int l : e.layers) {
            const std::vector<float>* vec = &e.control->layer_vectors.at(l);
            hooks.add(l, [control = e.control, vec, gamma](ResidualView& v) {
                for (std::size_t r = 0; r < v.rows; ++r) {
                    auto row = v.row(r);
                    for (std::size_t i = 0; i < v.hidden; ++i) row[i] += gamma * (*vec)[i];
                }
            });
        }
    }
    return hooks;
}

SteeringPlan compose(std::span<const SteeringPlan> plans) {
    SteeringPlan out;
    const ModelId* first = nullptr;
    for (const auto& p : plans) {
        for (const auto& e : p.entries) {
            if (!e.control) throw PreconditionError("plan entry without a control vector");
            if (!first) {
                first = &e.control->model_id;
            } else if (e.control->model_id != *first) {
                throw ModelMismatchError("cannot compose plans for different models (trait '" + e.control->trait + "')");
            }
            out.entries.push_back(e);
        }
    }
    return out;
}

SteeringPlan with_gamma(const SteeringPlan& plan, double gamma) {
    SteeringPlan out = plan;
    for (auto& e : out.entries) e.gamma = gamma;
    return out;
}

int default_injection_layer(const ModelConfig& config) { return (2 * config.n_layers) / 3; }

std::vector<SweepRow> gamma_sweep(const ModelHandle& model, const SteeringPlan& plan_template,
                                  std::span<const double> gammas,
                                  const std::function<double(const SteeringPlan&)>& eval) {
    if (gammas.empty()) throw PreconditionError("gamma sweep needs at least one value");
    std::vector<SweepRow> rows;
    rows.reserve(gammas.size());
    for (double g : gammas) {
        SweepRow row;
        row.gamma = g;
        try {
            auto plan = with_gamma(plan_template, g);
            plan.validate(*model);
            row.metric = eval(plan);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
    std::ostringstream out;
    out << "gamma,metric,status\n";
    for (const auto& r : rows) {
        out << detail::format_double(r.gamma) << ',';
        if (r.ok && r.metric) out << detail::format_double(*r.metric);
        out << ',' << (r.ok ? "ok" : "failed") << '\n';
    }
    return out.str();
}

}  // namespace steer
