#pragma once

#include "steer/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steer {

enum class ReadPosition : std::uint8_t { last_token = 0, mean_over_tokens = 1 };

std::string_view to_string(ReadPosition p);
ReadPosition parse_read_position(std::string_view text);

struct PromptPair {
    std::string positive;
    std::string negative;
    std::string trait;
};

struct PromptPairSet {
    std::string trait;
    std::vector<PromptPair> pairs;

    /// Non-empty, every pair tagged with `trait`, texts non-empty and distinct.
    void validate() const;
};

/// JSON Lines, one {"trait", "positive", "negative"} object per line. Every
/// line must carry the same trait.
PromptPairSet read_pairs_jsonl(const std::filesystem::path& path);
PromptPairSet parse_pairs_jsonl(std::string_view text);
std::string pairs_to_jsonl(const PromptPairSet& set);
void write_pairs_jsonl(const PromptPairSet& set, const std::filesystem::path& path);

struct ExtractionMeta {
    std::uint32_t pair_count = 0;
    ReadPosition read_position = ReadPosition::last_token;
    // Unix seconds when the vector was extracted.
    std::int64_t timestamp = 0;

    bool operator==(const ExtractionMeta&) const = default;
};

/// Per-layer steering direction for one trait, bound to one model.
///
/// Vectors are mean differences of post-block residuals (the residual stream
/// after layer l), positive minus negative.
struct ControlVector {
    std::string trait;
    ModelId model_id;
    std::size_t hidden_dim = 0;
    std::map<int, std::vector<float>> layer_vectors;
    ExtractionMeta meta;

    std::vector<int> layers() const;
    double norm(int layer) const;
    /// Every vector has hidden_dim finite entries and layer indices are >= 0.
    void validate() const;

    bool operator==(const ControlVector&) const = default;
};

struct PlanEntry {
    std::shared_ptr<const ControlVector> control;
    std::vector<int> layers;
    double gamma = 1.0;
};

/// Ordered injections x_{l+1} += gamma * V_l applied during a forward pass.
struct SteeringPlan {
    std::vector<PlanEntry> entries;

    bool empty() const { return entries.empty(); }

    /// Throws ModelMismatchError when a vector belongs to another model or
    /// hidden size, RangeError for a bad layer, PreconditionError for a
    /// non-finite gamma or a layer the vector does not carry.
    void validate(const Model& model) const;
};

/// V_l = (1/P) * sum_i (a_l(positive_i) - a_l(negative_i)) for every requested layer,
/// where a_l is the residual after layer l read at `read_position`.
ControlVector extract_control_vector(const ModelHandle& model, const PromptPairSet& pairs,
                                     std::span<const int> layers,
                                     ReadPosition read_position = ReadPosition::last_token,
                                     std::int64_t timestamp = 0);

/// Hooks adding gamma * V_l to every position at each entry's layers; entries
/// sharing a layer apply in plan order. The plan is validated first.
HookSet make_hooks(const Model& model, const SteeringPlan& plan);

/// Concatenates entries in order. All plans must target one model.
SteeringPlan compose(std::span<const SteeringPlan> plans);

/// Copy of `plan` with every entry's gamma set to `gamma`.
SteeringPlan with_gamma(const SteeringPlan& plan, double gamma);

// Default injection layer for a model without an explicit choice: floor(2n/3).
int default_injection_layer(const ModelConfig& config);

struct SweepRow {
    double gamma = 0.0;
    std::optional<double> metric;
    bool ok = false;
    std::string error;
};

/// Evaluates `eval` once per gamma (template gamma substituted), in input
/// order. A failing row is recorded and the sweep continues.
std::vector<SweepRow> gamma_sweep(const ModelHandle& model, const SteeringPlan& plan_template,
                                  std::span<const double> gammas,
                                  const std::function<double(const SteeringPlan&)>& eval);

/// CSV with header "gamma,metric,status"; failed rows have an empty metric.
std::string sweep_to_csv(std::span<const SweepRow> rows);

}  // namespace steer
