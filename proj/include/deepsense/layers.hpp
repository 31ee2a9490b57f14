#pragma once

#include <array>
#include <random>
#include <unordered_map>
#include <vector>

#include "deepsense/autodiff.hpp"

namespace deepsense {

/// Binds persistent parameter tensors to graph leaves, once per tensor per
/// graph. After backward, gradients are read back through the bind list.
class ParamBinder {
public:
    explicit ParamBinder(Graph& g) : graph_(&g) {}

    Node* operator()(Tensor& t);

    struct Bind {
        Tensor* host;
        Node* node;
    };
    const std::vector<Bind>& binds() const { return binds_; }

private:
    Graph* graph_;
    std::unordered_map<Tensor*, Node*> map_;
    std::vector<Bind> binds_;
};

/// Per-feature batch normalization over axis 1 of a rank >= 2 input; all
/// other axes form the statistics set.
struct BatchNormState {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.9;
    double eps = 1e-5;

    void init(int64_t channels);
};

Node* batch_norm(Node* x, Node* gamma, Node* beta, BatchNormState& state, bool train);

/// Recurrent variant: shared gamma/beta, separate running statistics per
/// time step. Steps beyond the last recorded slot reuse that slot.
struct RecurrentBnState {
    Tensor gamma, beta;
    std::vector<Tensor> step_mean, step_var;
    double momentum = 0.9;
    double eps = 1e-5;

    void init(int64_t channels);
};

Node* recurrent_batch_norm(Node* x, Node* gamma, Node* beta, RecurrentBnState& state, int64_t step,
                           bool train);

/// Inverted dropout; identity when train is false. rate must lie in [0, 1).
Node* dropout(Node* x, double rate, bool train, std::mt19937_64& rng);

// ---------------------------------------------------------------------------

struct ConvLayer {
    Tensor w;  // (c_out, c_in, fh, fw)
    Tensor b;  // (c_out)
    BatchNormState bn;
};

/// Three conv->BN->ReLU stages. The first filter spans the full input height
/// (d for an individual subnet, K for the merge subnet), the next two are
/// 1-d along the frequency axis.
struct ConvSubnetParams {
    std::array<ConvLayer, 3> layers;

    int64_t filters() const { return layers[0].w.dim(0); }
    int64_t input_height() const { return layers[0].w.dim(2); }
    int64_t output_width(int64_t input_width) const;
    int64_t min_input_width() const;
};

ConvSubnetParams init_conv_subnet(int64_t input_height, const std::array<int64_t, 3>& widths,
                                  int64_t n_filters, std::mt19937_64& rng);

/// input (N, 1, height, width) -> flattened (N, filters * out_width).
Node* conv_subnet_forward(Node* input, ConvSubnetParams& params, ParamBinder& bind, bool train);

/// Spec-level single-interval helpers over a (height, width) matrix.
Tensor individual_subnet_forward(const Tensor& x, ConvSubnetParams& params, bool train);
Tensor merge_subnet_forward(const Tensor& stacked, ConvSubnetParams& params, bool train);

/// Concatenate the interval width onto each feature row: (B, n) -> (B, n+1).
Node* append_interval_width(Node* x, Node* tau_column);
std::vector<double> append_interval_width(const std::vector<double>& x, double tau);

// ---------------------------------------------------------------------------

struct GruLayerParams {
    Tensor w_update, b_update;     // ((in + h), h), (h)
    Tensor w_reset, b_reset;
    Tensor w_cand, b_cand;
    RecurrentBnState bn_update, bn_reset, bn_cand;

    int64_t hidden() const { return w_update.dim(1); }
    int64_t input_dim() const { return w_update.dim(0) - hidden(); }
};

GruLayerParams init_gru_layer(int64_t input_dim, int64_t hidden, std::mt19937_64& rng);

/// One GRU update on a batch: x (B, in), h_prev (B, h) -> h (B, h), with
/// recurrent batch normalization on the three pre-activations.
Node* gru_step(Node* x, Node* h_prev, GruLayerParams& params, ParamBinder& bind, int64_t step, bool train);

struct GRUParams {
    std::vector<GruLayerParams> layers;
    double dropout_rate = 0.5;
};

/// Carried state for incremental (streaming) evaluation.
struct GruCarry {
    std::vector<Node*> hidden;  // per layer, (B, h)
    int64_t step = 0;
};

GruCarry gru_initial_carry(Graph& g, const GRUParams& params, int64_t batch);

/// Feed one interval through every layer, dropout between layers.
Node* stacked_gru_step(Node* x, GRUParams& params, ParamBinder& bind, GruCarry& carry, bool train,
                       std::mt19937_64& rng);

/// Batch (whole-sequence) form; returns the top-layer output per interval.
std::vector<Node*> stacked_gru_forward(const std::vector<Node*>& inputs, GRUParams& params,
                                       ParamBinder& bind, bool train, std::mt19937_64& rng);

// ---------------------------------------------------------------------------

/// Glorot-uniform fill: +-sqrt(6 / (fan_in + fan_out)).
void fill_glorot(Tensor& t, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng);

}  // namespace deepsense
