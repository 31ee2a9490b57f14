#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>

#include "deepsense/dsp.hpp"
#include "deepsense/layers.hpp"

namespace deepsense {

enum class Variant { Full, SingleGRU, NoIndvConv, NoMergeConv };
enum class TaskKind { Regression, Classification };

std::string to_string(Variant v);
std::string to_string(TaskKind t);
Variant variant_from_string(const std::string& s);
TaskKind task_from_string(const std::string& s);

struct TaskSpec {
    TaskKind kind = TaskKind::Classification;
    int64_t output_dim = 2;  // regression dimensions or class count
};

struct DeepSenseConfig {
    int64_t K = 2;
    std::vector<int64_t> d = {3, 3};
    int64_t f = 10;
    int64_t T = 20;
    double tau = 0.25;
    std::array<int64_t, 6> cov = {3, 3, 3, 3, 3, 3};
    int64_t n_filters = 64;
    int64_t gru_hidden = 64;
    int64_t gru_layers = 2;
    double dropout_rate = 0.5;
    /// Constant multiplier applied to the input tensors (DFT magnitudes grow
    /// with the window length; 1/m* keeps features near unit scale).
    double input_scale = 1.0;
    Variant variant = Variant::Full;
    TaskSpec task;

    void validate() const;
    /// GRU input dimension for this variant (flattened features + interval width).
    int64_t gru_input_dim() const;
};

struct DeepSenseModel {
    DeepSenseConfig config;
    std::vector<ConvSubnetParams> individual;  // per sensor; empty for noIndvConv
    std::optional<ConvSubnetParams> merge;     // absent for noMergeConv
    GRUParams gru;
    Tensor head_w, head_b;

    /// Stable traversal over every trainable tensor; this order defines the
    /// checkpoint layout and the optimizer slot order.
    void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit_params(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

/// One mini-batch of inputs: K sensor tensors shaped (B, d_k, 2f, T) plus the
/// per-sample interval widths (B, T).
struct ModelInput {
    std::vector<Tensor> sensors;
    Tensor widths;

    int64_t batch() const { return sensors.at(0).dim(0); }
    int64_t T() const { return sensors.at(0).dim(3); }
};

/// Stack per-sample FreqTensors (K per sample, equal T) into a batch.
ModelInput make_model_input(const std::vector<std::vector<FreqTensor>>& samples);

struct ForwardResult {
    std::vector<Node*> interval_features;  // T entries of (B, hidden)
    std::vector<Node*> interval_outputs;   // regression: T entries of (B, out)
    Node* logits = nullptr;                // classification: (B, n_classes)
    Node* probs = nullptr;                 // classification: softmax of logits
};

DeepSenseModel build(const DeepSenseConfig& config, uint64_t seed);

ForwardResult forward(DeepSenseModel& model, Graph& g, ParamBinder& bind, const ModelInput& input,
                      bool train, std::mt19937_64& rng);

/// Class indices per batch row (classification only); ties to the lowest index.
std::vector<int64_t> predict_class(DeepSenseModel& model, const ModelInput& input);

int64_t count_params(const DeepSenseModel& model);
/// Closed-form parameter count for a config (no allocation).
int64_t count_params(const DeepSenseConfig& config);

/// Output head applied to a raw feature vector (testing hook).
Tensor apply_output_head(const DeepSenseModel& model, const Tensor& features);

}  // namespace deepsense
