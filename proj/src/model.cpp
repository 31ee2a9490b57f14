#include "deepsense/model.hpp"

#include <cmath>
#include <stdexcept>

namespace deepsense {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::SingleGRU: return "singleGRU";
        case Variant::NoIndvConv: return "noIndvConv";
        case Variant::NoMergeConv: return "noMergeConv";
    }
    return "?";
}

std::string to_string(TaskKind t) { return t == TaskKind::Regression ? "regression" : "classification"; }

Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "singleGRU" || s == "singlegru") return Variant::SingleGRU;
    if (s == "noIndvConv" || s == "noindvconv") return Variant::NoIndvConv;
    if (s == "noMergeConv" || s == "nomergeconv") return Variant::NoMergeConv;
    throw std::invalid_argument("unknown variant '" + s + "' (full|singleGRU|noIndvConv|noMergeConv)");
}

TaskKind task_from_string(const std::string& s) {
    if (s == "regression") return TaskKind::Regression;
    if (s == "classification") return TaskKind::Classification;
    throw std::invalid_argument("unknown task kind '" + s + "'");
}

namespace {

int64_t indv_out_width(const DeepSenseConfig& c) {
    return 2 * c.f - (c.cov[0] + c.cov[1] + c.cov[2] - 3);
}

int64_t merge_in_width(const DeepSenseConfig& c) {
    switch (c.variant) {
        case Variant::NoIndvConv: return 2 * c.f;
        case Variant::NoMergeConv: return 0;
        default: return c.n_filters * indv_out_width(c);
    }
}

int64_t merge_out_width(const DeepSenseConfig& c) {
    return merge_in_width(c) - (c.cov[3] + c.cov[4] + c.cov[5] - 3);
}

int64_t sum_d(const DeepSenseConfig& c) {
    int64_t s = 0;
    for (int64_t dk : c.d) s += dk;
    return s;
}

int64_t conv_subnet_count(int64_t height, int64_t filters, int64_t c1, int64_t c2, int64_t c3) {
    int64_t n = filters * height * c1 + filters + 2 * filters;  // conv1 + bias + bn
    n += filters * filters * c2 + filters + 2 * filters;
    n += filters * filters * c3 + filters + 2 * filters;
    return n;
}

int64_t gru_layer_count(int64_t in, int64_t h) {
    return 3 * ((in + h) * h + h) + 3 * 2 * h;  // gates + recurrent bn scale/shift
}

int64_t head_count(int64_t features, int64_t out) { return features * out + out; }

int64_t conv_total_count(const DeepSenseConfig& c) {
    int64_t n = 0;
    if (c.variant != Variant::NoIndvConv)
        for (int64_t dk : c.d) n += conv_subnet_count(dk, c.n_filters, c.cov[0], c.cov[1], c.cov[2]);
    if (c.variant != Variant::NoMergeConv) {
        const int64_t height = c.variant == Variant::NoIndvConv ? sum_d(c) : c.K;
        n += conv_subnet_count(height, c.n_filters, c.cov[3], c.cov[4], c.cov[5]);
    }
    return n;
}

int64_t stacked_count(const DeepSenseConfig& c, int64_t hidden, int64_t layers) {
    int64_t n = gru_layer_count(c.gru_input_dim(), hidden);
    for (int64_t l = 1; l < layers; ++l) n += gru_layer_count(hidden, hidden);
    return n + head_count(hidden, c.task.output_dim);
}

/// Width of the single-layer GRU holding total parameter count closest to
/// the stacked configuration.
int64_t solve_single_gru_hidden(const DeepSenseConfig& c) {
    DeepSenseConfig full = c;
    full.variant = Variant::Full;
    const int64_t target = stacked_count(full, c.gru_hidden, c.gru_layers);
    int64_t best_h = 1;
    int64_t best_diff = std::llabs(stacked_count(full, 1, 1) - target);
    for (int64_t h = 2;; ++h) {
        const int64_t n = stacked_count(full, h, 1);
        const int64_t diff = std::llabs(n - target);
        if (diff < best_diff) {
            best_diff = diff;
            best_h = h;
        }
        if (n > target) break;
    }
    return best_h;
}

}  // namespace

void DeepSenseConfig::validate() const {
    if (K < 1) throw std::invalid_argument("config: K must be >= 1");
    if (static_cast<int64_t>(d.size()) != K)
        throw std::invalid_argument("config: d lists " + std::to_string(d.size()) + " sensors but K = " +
                                    std::to_string(K));
    for (int64_t dk : d)
        if (dk < 1) throw std::invalid_argument("config: sensor dimensions must be >= 1");
    if (f < 1 || T < 1) throw std::invalid_argument("config: f and T must be >= 1");
    if (tau <= 0) throw std::invalid_argument("config: tau must be positive");
    for (int64_t cv : cov)
        if (cv < 1) throw std::invalid_argument("config: filter widths must be >= 1");
    if (n_filters < 1 || gru_hidden < 1 || gru_layers < 1)
        throw std::invalid_argument("config: n_filters, gru_hidden, gru_layers must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("config: dropout_rate must lie in [0, 1)");
    if (input_scale <= 0) throw std::invalid_argument("config: input_scale must be positive");
    if (task.output_dim < 1) throw std::invalid_argument("config: task output dimension must be >= 1");

    if (variant != Variant::NoIndvConv && indv_out_width(*this) < 1)
        throw std::invalid_argument("config: individual subnet infeasible, 2f = " + std::to_string(2 * f) +
                                    " < cov1+cov2+cov3-2 = " + std::to_string(cov[0] + cov[1] + cov[2] - 2));
    if (variant != Variant::NoMergeConv && merge_out_width(*this) < 1)
        throw std::invalid_argument("config: merge subnet infeasible, input width " +
                                    std::to_string(merge_in_width(*this)) + " < cov4+cov5+cov6-2 = " +
                                    std::to_string(cov[3] + cov[4] + cov[5] - 2));
}

int64_t DeepSenseConfig::gru_input_dim() const {
    switch (variant) {
        case Variant::NoMergeConv: return K * n_filters * indv_out_width(*this) + 1;
        default: return n_filters * merge_out_width(*this) + 1;
    }
}

DeepSenseModel build(const DeepSenseConfig& config, uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    DeepSenseModel m;
    m.config = config;

    if (config.variant != Variant::NoIndvConv)
        for (int64_t k = 0; k < config.K; ++k)
            m.individual.push_back(init_conv_subnet(config.d[static_cast<size_t>(k)],
                                                    {config.cov[0], config.cov[1], config.cov[2]},
                                                    config.n_filters, rng));
    if (config.variant != Variant::NoMergeConv) {
        const int64_t height = config.variant == Variant::NoIndvConv ? sum_d(config) : config.K;
        m.merge = init_conv_subnet(height, {config.cov[3], config.cov[4], config.cov[5]},
                                   config.n_filters, rng);
    }

    const int64_t in = config.gru_input_dim();
    int64_t hidden = config.gru_hidden;
    int64_t layers = config.gru_layers;
    if (config.variant == Variant::SingleGRU) {
        hidden = solve_single_gru_hidden(config);
        layers = 1;
    }
    m.gru.dropout_rate = config.dropout_rate;
    m.gru.layers.push_back(init_gru_layer(in, hidden, rng));
    for (int64_t l = 1; l < layers; ++l) m.gru.layers.push_back(init_gru_layer(hidden, hidden, rng));

    m.head_w = Tensor({hidden, config.task.output_dim});
    fill_glorot(m.head_w, hidden, config.task.output_dim, rng);
    m.head_b = Tensor::zeros({config.task.output_dim});

    if (config.variant == Variant::SingleGRU) {
        const int64_t full = count_params(DeepSenseConfig{[&] {
            DeepSenseConfig f2 = config;
            f2.variant = Variant::Full;
            return f2;
        }()});
        const int64_t got = count_params(m);
        if (std::llabs(got - full) * 20 > full)
            throw std::logic_error("singleGRU width solve missed the 5% parity window");
    }
    return m;
}

void DeepSenseModel::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
    auto subnet = [&](const std::string& prefix, ConvSubnetParams& p) {
        for (size_t i = 0; i < 3; ++i) {
            const std::string base = prefix + ".conv" + std::to_string(i + 1);
            fn(base + ".w", p.layers[i].w);
            fn(base + ".b", p.layers[i].b);
            fn(base + ".bn.gamma", p.layers[i].bn.gamma);
            fn(base + ".bn.beta", p.layers[i].bn.beta);
        }
    };
    for (size_t k = 0; k < individual.size(); ++k) subnet("indv" + std::to_string(k), individual[k]);
    if (merge) subnet("merge", *merge);
    for (size_t l = 0; l < gru.layers.size(); ++l) {
        const std::string base = "gru" + std::to_string(l);
        auto& p = gru.layers[l];
        fn(base + ".w_update", p.w_update);
        fn(base + ".b_update", p.b_update);
        fn(base + ".w_reset", p.w_reset);
        fn(base + ".b_reset", p.b_reset);
        fn(base + ".w_cand", p.w_cand);
        fn(base + ".b_cand", p.b_cand);
        fn(base + ".bn_update.gamma", p.bn_update.gamma);
        fn(base + ".bn_update.beta", p.bn_update.beta);
        fn(base + ".bn_reset.gamma", p.bn_reset.gamma);
        fn(base + ".bn_reset.beta", p.bn_reset.beta);
        fn(base + ".bn_cand.gamma", p.bn_cand.gamma);
        fn(base + ".bn_cand.beta", p.bn_cand.beta);
    }
    fn("head.w", head_w);
    fn("head.b", head_b);
}

void DeepSenseModel::visit_params(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<DeepSenseModel*>(this)->visit_params(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

int64_t count_params(const DeepSenseModel& model) {
    int64_t n = 0;
    model.visit_params([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

int64_t count_params(const DeepSenseConfig& config) {
    config.validate();
    int64_t hidden = config.gru_hidden;
    int64_t layers = config.gru_layers;
    if (config.variant == Variant::SingleGRU) {
        hidden = solve_single_gru_hidden(config);
        layers = 1;
    }
    return conv_total_count(config) + stacked_count(config, hidden, layers);
}

// ---------------------------------------------------------------------------
// forward

ModelInput make_model_input(const std::vector<std::vector<FreqTensor>>& samples) {
    if (samples.empty()) throw std::invalid_argument("make_model_input: empty batch");
    const auto B = static_cast<int64_t>(samples.size());
    const size_t K = samples.front().size();
    const int64_t T = samples.front().front().T();

    ModelInput in;
    for (size_t k = 0; k < K; ++k) {
        const int64_t d = samples.front()[k].d();
        const int64_t f2 = samples.front()[k].data.dim(1);
        Tensor t({B, d, f2, T});
        for (int64_t b = 0; b < B; ++b) {
            const FreqTensor& ft = samples[static_cast<size_t>(b)].at(k);
            if (ft.d() != d || ft.data.dim(1) != f2 || ft.T() != T)
                throw std::invalid_argument("make_model_input: inconsistent tensor shapes across the batch");
            std::copy(ft.data.data(), ft.data.data() + ft.data.numel(), t.data() + b * d * f2 * T);
        }
        in.sensors.push_back(std::move(t));
    }
    in.widths = Tensor({B, T});
    for (int64_t b = 0; b < B; ++b) {
        const auto& w = samples[static_cast<size_t>(b)].front().widths;
        if (static_cast<int64_t>(w.size()) != T)
            throw std::invalid_argument("make_model_input: interval width count mismatch");
        for (int64_t t = 0; t < T; ++t) in.widths[b * T + t] = w[static_cast<size_t>(t)];
    }
    return in;
}

namespace {

// (B, d, 2f, T) -> (B*T, 1, d, 2f), rows t-major so that interval t occupies
// rows [t*B, (t+1)*B)
Tensor fold_time_into_batch(const Tensor& sensor, double scale) {
    const int64_t B = sensor.dim(0), d = sensor.dim(1), f2 = sensor.dim(2), T = sensor.dim(3);
    Tensor out({B * T, 1, d, f2});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < d; ++i)
            for (int64_t c = 0; c < f2; ++c) {
                const double* src = sensor.data() + ((b * d + i) * f2 + c) * T;
                for (int64_t t = 0; t < T; ++t) out[((t * B + b) * d + i) * f2 + c] = scale * src[t];
            }
    return out;
}

Tensor fold_concat_sensors(const ModelInput& in, double scale) {
    const int64_t B = in.batch(), T = in.T();
    int64_t dsum = 0;
    for (const auto& s : in.sensors) dsum += s.dim(1);
    const int64_t f2 = in.sensors.front().dim(2);
    Tensor out({B * T, 1, dsum, f2});
    int64_t drow = 0;
    for (const auto& s : in.sensors) {
        const int64_t d = s.dim(1);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < d; ++i)
                for (int64_t c = 0; c < f2; ++c) {
                    const double* src = s.data() + ((b * d + i) * f2 + c) * T;
                    for (int64_t t = 0; t < T; ++t)
                        out[((t * B + b) * dsum + drow + i) * f2 + c] = scale * src[t];
                }
        drow += d;
    }
    return out;
}

Tensor fold_widths(const Tensor& widths) {
    const int64_t B = widths.dim(0), T = widths.dim(1);
    Tensor out({B * T, 1});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t) out[t * B + b] = widths[b * T + t];
    return out;
}

void check_input(const DeepSenseModel& m, const ModelInput& in) {
    const auto& c = m.config;
    if (static_cast<int64_t>(in.sensors.size()) != c.K)
        throw std::invalid_argument("forward: expected K = " + std::to_string(c.K) + " sensors, got " +
                                    std::to_string(in.sensors.size()));
    const int64_t B = in.batch(), T = in.T();
    for (int64_t k = 0; k < c.K; ++k) {
        const Tensor& s = in.sensors[static_cast<size_t>(k)];
        if (s.rank() != 4 || s.dim(0) != B || s.dim(1) != c.d[static_cast<size_t>(k)] ||
            s.dim(2) != 2 * c.f || s.dim(3) != T)
            throw std::invalid_argument("forward: sensor " + std::to_string(k) + " shape " + s.shape_str() +
                                        " does not match config (B, " +
                                        std::to_string(c.d[static_cast<size_t>(k)]) + ", " +
                                        std::to_string(2 * c.f) + ", T)");
    }
    if (in.widths.rank() != 2 || in.widths.dim(0) != B || in.widths.dim(1) != T)
        throw std::invalid_argument("forward: widths must be (B, T)");
}

}  // namespace

ForwardResult forward(DeepSenseModel& model, Graph& g, ParamBinder& bind, const ModelInput& input,
                      bool train, std::mt19937_64& rng) {
    check_input(model, input);
    const auto& c = model.config;
    const int64_t B = input.batch(), T = input.T();

    // convolutional stage, T folded into the batch axis
    Node* fused = nullptr;
    if (c.variant == Variant::NoIndvConv) {
        Node* stacked = g.constant(fold_concat_sensors(input, c.input_scale));
        fused = conv_subnet_forward(stacked, *model.merge, bind, train);
    } else {
        std::vector<Node*> per_sensor;
        for (int64_t k = 0; k < c.K; ++k) {
            Node* x = g.constant(fold_time_into_batch(input.sensors[static_cast<size_t>(k)], c.input_scale));
            per_sensor.push_back(
                conv_subnet_forward(x, model.individual[static_cast<size_t>(k)], bind, train));
        }
        if (c.variant == Variant::NoMergeConv) {
            fused = per_sensor.size() == 1 ? per_sensor[0] : concat(per_sensor, 1);
        } else {
            Node* rows = per_sensor.size() == 1 ? per_sensor[0] : concat(per_sensor, 1);
            const int64_t w = per_sensor[0]->value.dim(1);
            Node* stacked = reshape(rows, {B * T, 1, c.K, w});
            fused = conv_subnet_forward(stacked, *model.merge, bind, train);
        }
    }

    // append interval widths, then unfold T for the recurrent stage
    Node* with_tau = append_interval_width(fused, g.constant(fold_widths(input.widths)));
    std::vector<Node*> intervals;
    intervals.reserve(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) intervals.push_back(slice(with_tau, 0, t * B, B));

    ForwardResult out;
    out.interval_features = stacked_gru_forward(intervals, model.gru, bind, train, rng);

    Node* hw = bind(model.head_w);
    Node* hb = bind(model.head_b);
    if (c.task.kind == TaskKind::Regression) {
        for (Node* feat : out.interval_features) out.interval_outputs.push_back(linear(feat, hw, hb));
    } else {
        Node* acc = out.interval_features[0];
        for (size_t t = 1; t < out.interval_features.size(); ++t) acc = add(acc, out.interval_features[t]);
        Node* avg = mul_scalar(acc, 1.0 / static_cast<double>(T));
        out.logits = linear(avg, hw, hb);
        out.probs = softmax_rows(out.logits);
    }
    return out;
}

std::vector<int64_t> predict_class(DeepSenseModel& model, const ModelInput& input) {
    if (model.config.task.kind != TaskKind::Classification)
        throw std::invalid_argument("predict_class: model is configured for regression");
    Graph g;
    ParamBinder bind(g);
    std::mt19937_64 rng(0);
    ForwardResult r = forward(model, g, bind, input, false, rng);
    const Tensor idx = argmax_tensor(r.probs->value, 1);
    std::vector<int64_t> out(static_cast<size_t>(idx.numel()));
    for (int64_t i = 0; i < idx.numel(); ++i) out[static_cast<size_t>(i)] = static_cast<int64_t>(idx[i]);
    return out;
}

Tensor apply_output_head(const DeepSenseModel& model, const Tensor& features) {
    const int64_t h = model.head_w.dim(0), out_dim = model.head_w.dim(1);
    if (features.numel() != h) throw std::invalid_argument("apply_output_head: feature size mismatch");
    Tensor y({out_dim});
    for (int64_t j = 0; j < out_dim; ++j) {
        double s = model.head_b[j];
        for (int64_t i = 0; i < h; ++i) s += features[i] * model.head_w[i * out_dim + j];
        y[j] = s;
    }
    return y;
}

}  // namespace deepsense
