#include "deepsense/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace deepsense {

Node* ParamBinder::operator()(Tensor& t) {
    auto it = map_.find(&t);
    if (it != map_.end()) return it->second;
    Node* n = graph_->param(t);
    map_.emplace(&t, n);
    binds_.push_back({&t, n});
    return n;
}

void fill_glorot(Tensor& t, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : t.vec()) v = d(rng);
}

// ---------------------------------------------------------------------------
// batch normalization

void BatchNormState::init(int64_t channels) {
    gamma = Tensor::ones({channels});
    beta = Tensor::zeros({channels});
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::ones({channels});
}

void RecurrentBnState::init(int64_t channels) {
    gamma = Tensor::ones({channels});
    beta = Tensor::zeros({channels});
    step_mean.clear();
    step_var.clear();
}

namespace {

struct BnLayout {
    int64_t channels, pre, post;  // index = (p * channels + c) * post + q
};

BnLayout bn_layout(const Tensor& x) {
    if (x.rank() < 2) throw std::invalid_argument("batch_norm: input must have rank >= 2");
    BnLayout l{x.dim(1), x.dim(0), 1};
    for (int a = 2; a < x.rank(); ++a) l.post *= x.dim(a);
    return l;
}

Node* bn_apply(Node* x, Node* gamma, Node* beta, const Tensor& mean, const Tensor& var, double eps,
               bool batch_stats) {
    const BnLayout l = bn_layout(x->value);
    if (gamma->value.numel() != l.channels || beta->value.numel() != l.channels)
        throw std::invalid_argument("batch_norm: scale/shift size mismatch with channel count " +
                                    std::to_string(l.channels));
    std::vector<double> istd(static_cast<size_t>(l.channels));
    for (int64_t c = 0; c < l.channels; ++c) istd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[c] + eps);

    Tensor out(x->value.shape());
    for (int64_t p = 0; p < l.pre; ++p)
        for (int64_t c = 0; c < l.channels; ++c) {
            const double m = mean[c], is = istd[static_cast<size_t>(c)];
            const double g = gamma->value[c], b = beta->value[c];
            const int64_t base = (p * l.channels + c) * l.post;
            for (int64_t q = 0; q < l.post; ++q) out[base + q] = g * (x->value[base + q] - m) * is + b;
        }

    Tensor mean_c = mean, var_c = var;  // captured for the backward pass
    return x->graph->make(std::move(out), {x, gamma, beta},
                          [l, istd, mean_c, batch_stats](Node& self) {
        Node* x = self.parents[0];
        Node* gamma = self.parents[1];
        Node* beta = self.parents[2];
        const auto M = static_cast<double>(l.pre * l.post);

        for (int64_t c = 0; c < l.channels; ++c) {
            const double m = mean_c[c], is = istd[static_cast<size_t>(c)], g = gamma->value[c];
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int64_t p = 0; p < l.pre; ++p) {
                const int64_t base = (p * l.channels + c) * l.post;
                for (int64_t q = 0; q < l.post; ++q) {
                    const double dy = self.grad[base + q];
                    sum_dy += dy;
                    sum_dy_xhat += dy * (x->value[base + q] - m) * is;
                }
            }
            if (beta->requires_grad) grad_buf(beta)[c] += sum_dy;
            if (gamma->requires_grad) grad_buf(gamma)[c] += sum_dy_xhat;
            if (x->requires_grad) {
                Tensor& gx = grad_buf(x);
                for (int64_t p = 0; p < l.pre; ++p) {
                    const int64_t base = (p * l.channels + c) * l.post;
                    for (int64_t q = 0; q < l.post; ++q) {
                        const double dy = self.grad[base + q];
                        const double xhat = (x->value[base + q] - m) * is;
                        // batch statistics couple every element; running
                        // statistics make this a plain affine map
                        if (batch_stats)
                            gx[base + q] += g * is * (dy - sum_dy / M - xhat * sum_dy_xhat / M);
                        else
                            gx[base + q] += g * is * dy;
                    }
                }
            }
        }
    });
}

void bn_batch_stats(const Tensor& x, Tensor& mean, Tensor& var) {
    const BnLayout l = bn_layout(x);
    mean = Tensor::zeros({l.channels});
    var = Tensor::zeros({l.channels});
    const auto M = static_cast<double>(l.pre * l.post);
    for (int64_t p = 0; p < l.pre; ++p)
        for (int64_t c = 0; c < l.channels; ++c) {
            const int64_t base = (p * l.channels + c) * l.post;
            for (int64_t q = 0; q < l.post; ++q) mean[c] += x[base + q];
        }
    for (int64_t c = 0; c < l.channels; ++c) mean[c] /= M;
    for (int64_t p = 0; p < l.pre; ++p)
        for (int64_t c = 0; c < l.channels; ++c) {
            const int64_t base = (p * l.channels + c) * l.post;
            for (int64_t q = 0; q < l.post; ++q) {
                const double d = x[base + q] - mean[c];
                var[c] += d * d;
            }
        }
    for (int64_t c = 0; c < l.channels; ++c) var[c] /= M;  // biased, as usual for BN
}

void bn_update_running(Tensor& running, const Tensor& batch, double momentum) {
    for (int64_t c = 0; c < running.numel(); ++c)
        running[c] = momentum * running[c] + (1.0 - momentum) * batch[c];
}

}  // namespace

Node* batch_norm(Node* x, Node* gamma, Node* beta, BatchNormState& state, bool train) {
    if (train) {
        Tensor mean, var;
        bn_batch_stats(x->value, mean, var);
        bn_update_running(state.running_mean, mean, state.momentum);
        bn_update_running(state.running_var, var, state.momentum);
        return bn_apply(x, gamma, beta, mean, var, state.eps, true);
    }
    return bn_apply(x, gamma, beta, state.running_mean, state.running_var, state.eps, false);
}

Node* recurrent_batch_norm(Node* x, Node* gamma, Node* beta, RecurrentBnState& state, int64_t step,
                           bool train) {
    const BnLayout l = bn_layout(x->value);
    if (train) {
        Tensor mean, var;
        bn_batch_stats(x->value, mean, var);
        while (static_cast<int64_t>(state.step_mean.size()) <= step) {
            state.step_mean.push_back(Tensor::zeros({l.channels}));
            state.step_var.push_back(Tensor::ones({l.channels}));
        }
        const auto slot = static_cast<size_t>(step);
        bn_update_running(state.step_mean[slot], mean, state.momentum);
        bn_update_running(state.step_var[slot], var, state.momentum);
        return bn_apply(x, gamma, beta, mean, var, state.eps, true);
    }
    if (state.step_mean.empty()) {
        // untrained: normalize against the (0, 1) prior
        return bn_apply(x, gamma, beta, Tensor::zeros({l.channels}), Tensor::ones({l.channels}), state.eps,
                        false);
    }
    const auto slot = static_cast<size_t>(std::min<int64_t>(step, static_cast<int64_t>(state.step_mean.size()) - 1));
    return bn_apply(x, gamma, beta, state.step_mean[slot], state.step_var[slot], state.eps, false);
}

Node* dropout(Node* x, double rate, bool train, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    if (!train || rate == 0.0) return x;
    Tensor mask(x->value.shape());
    std::uniform_real_distribution<double> d(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& v : mask.vec()) v = d(rng) < rate ? 0.0 : keep_scale;
    return mul(x, x->graph->constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// conv subnets

int64_t ConvSubnetParams::output_width(int64_t input_width) const {
    int64_t w = input_width;
    for (const auto& l : layers) w -= l.w.dim(3) - 1;
    return w;
}

int64_t ConvSubnetParams::min_input_width() const {
    int64_t need = 1;
    for (const auto& l : layers) need += l.w.dim(3) - 1;
    return need;
}

ConvSubnetParams init_conv_subnet(int64_t input_height, const std::array<int64_t, 3>& widths,
                                  int64_t n_filters, std::mt19937_64& rng) {
    if (input_height < 1) throw std::invalid_argument("init_conv_subnet: input height must be >= 1");
    ConvSubnetParams p;
    for (int i = 0; i < 3; ++i) {
        const int64_t cin = i == 0 ? 1 : n_filters;
        const int64_t fh = i == 0 ? input_height : 1;
        const int64_t fw = widths[static_cast<size_t>(i)];
        p.layers[static_cast<size_t>(i)].w = Tensor({n_filters, cin, fh, fw});
        fill_glorot(p.layers[static_cast<size_t>(i)].w, cin * fh * fw, n_filters * fh * fw, rng);
        p.layers[static_cast<size_t>(i)].b = Tensor::zeros({n_filters});
        p.layers[static_cast<size_t>(i)].bn.init(n_filters);
    }
    return p;
}

Node* conv_subnet_forward(Node* input, ConvSubnetParams& params, ParamBinder& bind, bool train) {
    const Tensor& in = input->value;
    if (in.rank() != 4 || in.dim(1) != 1)
        throw std::invalid_argument("conv_subnet_forward: expects input (N, 1, height, width)");
    if (in.dim(2) != params.input_height())
        throw std::invalid_argument("conv_subnet_forward: input height " + std::to_string(in.dim(2)) +
                                    " does not match first-layer filter height " +
                                    std::to_string(params.input_height()));
    if (in.dim(3) < params.min_input_width())
        throw std::invalid_argument("conv_subnet_forward: input width " + std::to_string(in.dim(3)) +
                                    " infeasible, requires at least " + std::to_string(params.min_input_width()));

    Node* h = input;
    for (auto& layer : params.layers) {
        h = conv2d_valid(h, bind(layer.w), bind(layer.b));
        h = batch_norm(h, bind(layer.bn.gamma), bind(layer.bn.beta), layer.bn, train);
        h = relu(h);
    }
    const int64_t n = h->value.dim(0);
    return reshape(h, {n, h->value.numel() / n});
}

namespace {

Tensor subnet_single(const Tensor& x, ConvSubnetParams& params, bool train) {
    if (x.rank() != 2) throw std::invalid_argument("subnet: expects a (height, width) matrix");
    Graph g;
    ParamBinder bind(g);
    Node* in = g.constant(Tensor({1, 1, x.dim(0), x.dim(1)}, x.vec()));
    Node* out = conv_subnet_forward(in, params, bind, train);
    return Tensor({out->value.numel()}, out->value.vec());
}

}  // namespace

Tensor individual_subnet_forward(const Tensor& x, ConvSubnetParams& params, bool train) {
    return subnet_single(x, params, train);
}

Tensor merge_subnet_forward(const Tensor& stacked, ConvSubnetParams& params, bool train) {
    return subnet_single(stacked, params, train);
}

Node* append_interval_width(Node* x, Node* tau_column) {
    if (x->value.rank() != 2 || tau_column->value.rank() != 2 || tau_column->value.dim(1) != 1 ||
        tau_column->value.dim(0) != x->value.dim(0))
        throw std::invalid_argument("append_interval_width: expects x (B, n) and tau (B, 1)");
    return concat({x, tau_column}, 1);
}

std::vector<double> append_interval_width(const std::vector<double>& x, double tau) {
    if (tau <= 0) throw std::invalid_argument("append_interval_width: tau must be positive");
    std::vector<double> out = x;
    out.push_back(tau);
    return out;
}

// ---------------------------------------------------------------------------
// GRU

GruLayerParams init_gru_layer(int64_t input_dim, int64_t hidden, std::mt19937_64& rng) {
    GruLayerParams p;
    const int64_t in = input_dim + hidden;
    for (Tensor* w : {&p.w_update, &p.w_reset, &p.w_cand}) {
        *w = Tensor({in, hidden});
        fill_glorot(*w, in, hidden, rng);
    }
    p.b_update = Tensor::zeros({hidden});
    p.b_reset = Tensor::zeros({hidden});
    p.b_cand = Tensor::zeros({hidden});
    p.bn_update.init(hidden);
    p.bn_reset.init(hidden);
    p.bn_cand.init(hidden);
    return p;
}

Node* gru_step(Node* x, Node* h_prev, GruLayerParams& params, ParamBinder& bind, int64_t step, bool train) {
    if (x->value.rank() != 2 || h_prev->value.rank() != 2)
        throw std::invalid_argument("gru_step: expects x (B, in) and h_prev (B, h)");
    if (x->value.dim(1) != params.input_dim() || h_prev->value.dim(1) != params.hidden() ||
        x->value.dim(0) != h_prev->value.dim(0))
        throw std::invalid_argument("gru_step: dimension mismatch, x " + x->value.shape_str() + " h " +
                                    h_prev->value.shape_str() + " vs params (in " +
                                    std::to_string(params.input_dim()) + ", hidden " +
                                    std::to_string(params.hidden()) + ")");

    Node* cat = concat({x, h_prev}, 1);
    Node* z_pre = linear(cat, bind(params.w_update), bind(params.b_update));
    Node* z = sigmoid(recurrent_batch_norm(z_pre, bind(params.bn_update.gamma), bind(params.bn_update.beta),
                                           params.bn_update, step, train));
    Node* r_pre = linear(cat, bind(params.w_reset), bind(params.b_reset));
    Node* r = sigmoid(recurrent_batch_norm(r_pre, bind(params.bn_reset.gamma), bind(params.bn_reset.beta),
                                           params.bn_reset, step, train));
    Node* cat2 = concat({x, mul(r, h_prev)}, 1);
    Node* cand_pre = linear(cat2, bind(params.w_cand), bind(params.b_cand));
    Node* cand = tanh_op(recurrent_batch_norm(cand_pre, bind(params.bn_cand.gamma), bind(params.bn_cand.beta),
                                              params.bn_cand, step, train));
    // h = (1 - z) * h_prev + z * cand
    Node* one_minus_z = add_scalar(neg(z), 1.0);
    return add(mul(one_minus_z, h_prev), mul(z, cand));
}

GruCarry gru_initial_carry(Graph& g, const GRUParams& params, int64_t batch) {
    GruCarry c;
    for (const auto& layer : params.layers) c.hidden.push_back(g.constant(Tensor::zeros({batch, layer.hidden()})));
    return c;
}

Node* stacked_gru_step(Node* x, GRUParams& params, ParamBinder& bind, GruCarry& carry, bool train,
                       std::mt19937_64& rng) {
    if (params.dropout_rate < 0.0 || params.dropout_rate >= 1.0)
        throw std::invalid_argument("stacked_gru: dropout rate must lie in [0, 1)");
    Node* h = x;
    for (size_t layer = 0; layer < params.layers.size(); ++layer) {
        if (layer > 0) h = dropout(h, params.dropout_rate, train, rng);
        carry.hidden[layer] = gru_step(h, carry.hidden[layer], params.layers[layer], bind, carry.step, train);
        h = carry.hidden[layer];
    }
    carry.step += 1;
    return h;
}

std::vector<Node*> stacked_gru_forward(const std::vector<Node*>& inputs, GRUParams& params,
                                       ParamBinder& bind, bool train, std::mt19937_64& rng) {
    if (inputs.empty()) throw std::invalid_argument("stacked_gru_forward: needs at least one interval");
    GruCarry carry = gru_initial_carry(*inputs[0]->graph, params, inputs[0]->value.dim(0));
    std::vector<Node*> out;
    out.reserve(inputs.size());
    for (Node* x : inputs) out.push_back(stacked_gru_step(x, params, bind, carry, train, rng));
    return out;
}

}  // namespace deepsense
