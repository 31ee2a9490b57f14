#include "deepsense/training.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace deepsense {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

// ---------------------------------------------------------------------------
// loss primitives

void GaussianTarget::validate() const {
    const double a = cov[0], b = cov[1], c = cov[2], d = cov[3];
    const double scale = std::max({std::fabs(a), std::fabs(d), 1.0});
    if (std::fabs(b - c) > 1e-9 * scale)
        throw std::invalid_argument("GaussianTarget: covariance not symmetric");
    if (a <= 0 || a * d - b * c <= 0)
        throw std::invalid_argument("GaussianTarget: covariance not positive-definite");
}

void CarTrackLossParams::validate() const {
    if (theta < 0 || theta >= std::numbers::pi)
        throw std::invalid_argument("CarTrackLossParams: theta must lie in [0, pi)");
    if (lambda < 0) throw std::invalid_argument("CarTrackLossParams: lambda must be >= 0");
}

double cross_entropy(const std::vector<double>& probs, const std::vector<double>& onehot) {
    if (probs.size() != onehot.size())
        throw std::invalid_argument("cross_entropy: dimension mismatch " + std::to_string(probs.size()) +
                                    " vs " + std::to_string(onehot.size()));
    double sum = 0;
    for (double p : probs) sum += p;
    if (std::fabs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("cross_entropy: probabilities sum to " + std::to_string(sum));
    double loss = 0;
    for (size_t i = 0; i < probs.size(); ++i)
        if (onehot[i] != 0.0) loss -= onehot[i] * std::log(std::max(probs[i], 1e-300));
    return loss;
}

double mse(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("mse: shape mismatch " + pred.shape_str() + " vs " + target.shape_str());
    double s = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.numel());
}

namespace {

constexpr double kNormFloor = 1e-9;

struct Gauss2 {
    double i00, i01, i11;  // inverse covariance
    double log_norm;       // ln(2*pi) + 0.5 * ln det
};

Gauss2 gauss_terms(const GaussianTarget& t) {
    t.validate();
    const double det = t.cov[0] * t.cov[3] - t.cov[1] * t.cov[2];
    Gauss2 g;
    g.i00 = t.cov[3] / det;
    g.i01 = -t.cov[1] / det;
    g.i11 = t.cov[0] / det;
    g.log_norm = std::log(2.0 * std::numbers::pi) + 0.5 * std::log(det);
    return g;
}

}  // namespace

double cartrack_loss(const std::vector<std::array<double, 2>>& preds,
                     const std::vector<GaussianTarget>& targets, const CarTrackLossParams& params) {
    params.validate();
    if (preds.empty() || preds.size() != targets.size())
        throw std::invalid_argument("cartrack_loss: prediction/target count mismatch");
    double loss = 0;
    const double cos_theta = std::cos(params.theta);
    for (size_t t = 0; t < preds.size(); ++t) {
        const Gauss2 g = gauss_terms(targets[t]);
        const double e0 = preds[t][0] - targets[t].mean[0];
        const double e1 = preds[t][1] - targets[t].mean[1];
        loss += 0.5 * (g.i00 * e0 * e0 + 2.0 * g.i01 * e0 * e1 + g.i11 * e1 * e1) + g.log_norm;

        const double np = std::hypot(preds[t][0], preds[t][1]);
        const double ny = std::hypot(targets[t].mean[0], targets[t].mean[1]);
        const double cs = (np < kNormFloor || ny < kNormFloor)
                              ? 0.0
                              : (preds[t][0] * targets[t].mean[0] + preds[t][1] * targets[t].mean[1]) / (np * ny);
        loss += params.lambda * std::max(0.0, cos_theta - cs);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// graph losses

Node* cross_entropy_loss_node(Node* logits, const std::vector<int64_t>& labels) {
    const int64_t B = logits->value.dim(0), C = logits->value.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        throw std::invalid_argument("cross_entropy_loss_node: label count mismatch");
    Tensor onehot({B, C});
    for (int64_t i = 0; i < B; ++i) {
        const int64_t l = labels[static_cast<size_t>(i)];
        if (l < 0 || l >= C) throw std::invalid_argument("cross_entropy_loss_node: label out of range");
        onehot[i * C + l] = 1.0;
    }
    Node* picked = mul(log_softmax_rows(logits), logits->graph->constant(std::move(onehot)));
    return mul_scalar(neg(sum_all(picked)), 1.0 / static_cast<double>(B));
}

Node* mse_loss_node(Node* pred, const Tensor& target) {
    if (!pred->value.same_shape(target))
        throw std::invalid_argument("mse_loss_node: shape mismatch " + pred->value.shape_str() + " vs " +
                                    target.shape_str());
    Node* d = sub(pred, pred->graph->constant(target));
    return mean_all(mul(d, d));
}

Node* cartrack_loss_node(const std::vector<Node*>& interval_preds,
                         const std::vector<const std::vector<GaussianTarget>*>& targets,
                         const CarTrackLossParams& params) {
    params.validate();
    if (interval_preds.empty()) throw std::invalid_argument("cartrack_loss_node: no intervals");
    const auto T = interval_preds.size();
    const int64_t B = interval_preds[0]->value.dim(0);
    if (static_cast<int64_t>(targets.size()) != B)
        throw std::invalid_argument("cartrack_loss_node: batch/target count mismatch");
    for (const auto* tg : targets)
        if (tg->size() != T) throw std::invalid_argument("cartrack_loss_node: interval count mismatch");

    Graph* g = interval_preds[0]->graph;
    const double cos_theta = std::cos(params.theta);
    Node* total = nullptr;

    for (size_t t = 0; t < T; ++t) {
        Node* pred = interval_preds[t];  // (B, 2)
        Tensor y0({B, 1}), y1({B, 1}), a00({B, 1}), a01({B, 1}), a11({B, 1}), log_norm({B, 1});
        Tensor mask({B, 1}), inv_ny({B, 1});
        for (int64_t b = 0; b < B; ++b) {
            const GaussianTarget& tg = (*targets[static_cast<size_t>(b)])[t];
            const Gauss2 gs = gauss_terms(tg);
            y0[b] = tg.mean[0];
            y1[b] = tg.mean[1];
            a00[b] = gs.i00;
            a01[b] = gs.i01;
            a11[b] = gs.i11;
            log_norm[b] = gs.log_norm;
            const double ny = std::hypot(tg.mean[0], tg.mean[1]);
            const double np = std::hypot(pred->value[b * 2], pred->value[b * 2 + 1]);
            const bool defined = ny >= kNormFloor && np >= kNormFloor;
            mask[b] = defined ? 1.0 : 0.0;
            inv_ny[b] = defined ? 1.0 / ny : 1.0;
        }

        Node* p0 = slice(pred, 1, 0, 1);
        Node* p1 = slice(pred, 1, 1, 1);
        Node* e0 = sub(p0, g->constant(y0));
        Node* e1 = sub(p1, g->constant(y1));
        Node* quad = add(add(mul(g->constant(a00), mul(e0, e0)),
                             mul_scalar(mul(g->constant(a01), mul(e0, e1)), 2.0)),
                         mul(g->constant(a11), mul(e1, e1)));
        Node* nll = add(mul_scalar(quad, 0.5), g->constant(log_norm));
        Node* term = sum_all(nll);

        if (params.lambda > 0) {
            Node* mask_c = g->constant(mask);
            Node* dot = add(mul(p0, g->constant(y0)), mul(p1, g->constant(y1)));
            Node* sumsq = add(mul(p0, p0), mul(p1, p1));
            // masked rows get a unit norm so the sqrt stays differentiable
            Tensor one_minus_mask({B, 1});
            for (int64_t b = 0; b < B; ++b) one_minus_mask[b] = 1.0 - mask[b];
            Node* safe_sumsq = add(mul(sumsq, mask_c), g->constant(one_minus_mask));
            Node* cs = mul(div(dot, sqrt_op(safe_sumsq)), g->constant(inv_ny));
            Node* hinge = relu(add_scalar(neg(mul(cs, mask_c)), cos_theta));
            term = add(term, mul_scalar(sum_all(hinge), params.lambda));
        }
        total = total == nullptr ? term : add(total, term);
    }
    return mul_scalar(total, 1.0 / static_cast<double>(B));
}

// ---------------------------------------------------------------------------
// optimizer

void AdamOptimizer::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("optimizer: param/grad count mismatch");
    if (m_.empty()) {
        for (Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape()));
            v_.push_back(Tensor::zeros(p->shape()));
        }
    }
    double scale = 1.0;
    if (cfg_.clip_norm > 0) {
        double sq = 0;
        for (const Tensor* gp : grads)
            if (gp)
                for (int64_t i = 0; i < gp->numel(); ++i) sq += (*gp)[i] * (*gp)[i];
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }

    t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        if (!grads[i]) continue;
        Tensor& p = *params[i];
        const Tensor& gt = *grads[i];
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double gv = gt[j] * scale;
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gv;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gv * gv;
            p[j] -= cfg_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop

namespace {

struct HostParams {
    std::vector<std::string> names;
    std::vector<Tensor*> tensors;
};

HostParams collect_params(DeepSenseModel& model) {
    HostParams hp;
    model.visit_params([&](const std::string& name, Tensor& t) {
        hp.names.push_back(name);
        hp.tensors.push_back(&t);
    });
    return hp;
}

std::map<int64_t, std::vector<size_t>> bucket_by_T(const std::vector<Sample>& dataset) {
    std::map<int64_t, std::vector<size_t>> buckets;
    for (size_t i = 0; i < dataset.size(); ++i) buckets[dataset[i].T()].push_back(i);
    return buckets;
}

ModelInput batch_input(const std::vector<Sample>& dataset, const std::vector<size_t>& idx) {
    std::vector<std::vector<FreqTensor>> rows;
    rows.reserve(idx.size());
    for (size_t i : idx) rows.push_back(dataset[i].sensors);
    return make_model_input(rows);
}

struct BatchLoss {
    Node* node;
    double metric;  // accuracy (classification) or mean displacement error
};

BatchLoss build_loss(DeepSenseModel& model, const ForwardResult& fwd, const std::vector<Sample>& dataset,
                     const std::vector<size_t>& idx, const LossSpec& spec) {
    BatchLoss out{nullptr, 0.0};
    if (spec.kind == LossSpec::Kind::CrossEntropy) {
        std::vector<int64_t> labels;
        for (size_t i : idx) labels.push_back(dataset[i].label);
        out.node = cross_entropy_loss_node(fwd.logits, labels);
        const Tensor am = argmax_tensor(fwd.probs->value, 1);
        int64_t hits = 0;
        for (size_t b = 0; b < idx.size(); ++b)
            if (static_cast<int64_t>(am[static_cast<int64_t>(b)]) == labels[b]) ++hits;
        out.metric = static_cast<double>(hits) / static_cast<double>(idx.size());
        return out;
    }

    if (model.config.task.kind != TaskKind::Regression)
        throw std::invalid_argument("train: regression loss on a classification head");
    const auto B = static_cast<int64_t>(idx.size());
    const auto T = static_cast<size_t>(dataset[idx[0]].T());
    for (size_t i : idx)
        if (dataset[i].displacement.size() != T)
            throw std::invalid_argument("train: sample lacks per-interval displacement targets");

    double err = 0;
    for (size_t t = 0; t < T; ++t) {
        const Tensor& pv = fwd.interval_outputs[t]->value;
        for (int64_t b = 0; b < B; ++b) {
            const auto& m = dataset[idx[static_cast<size_t>(b)]].displacement[t].mean;
            err += std::hypot(pv[b * 2] - m[0], pv[b * 2 + 1] - m[1]);
        }
    }
    out.metric = err / static_cast<double>(B * static_cast<int64_t>(T));

    if (spec.kind == LossSpec::Kind::CarTrack) {
        std::vector<const std::vector<GaussianTarget>*> targets;
        for (size_t i : idx) targets.push_back(&dataset[i].displacement);
        out.node = cartrack_loss_node(fwd.interval_outputs, targets, spec.cartrack);
        return out;
    }

    // plain MSE against the target means, all intervals stacked
    Tensor target({static_cast<int64_t>(T) * B, 2});
    for (size_t t = 0; t < T; ++t)
        for (int64_t b = 0; b < B; ++b) {
            const auto& m = dataset[idx[static_cast<size_t>(b)]].displacement[t].mean;
            target[(static_cast<int64_t>(t) * B + b) * 2] = m[0];
            target[(static_cast<int64_t>(t) * B + b) * 2 + 1] = m[1];
        }
    out.node = mse_loss_node(concat(fwd.interval_outputs, 0), target);
    return out;
}

std::vector<const Tensor*> gather_grads(const HostParams& hp, const ParamBinder& bind) {
    std::vector<const Tensor*> grads(hp.tensors.size(), nullptr);
    std::map<const Tensor*, const Node*> bound;
    for (const auto& b : bind.binds()) bound[b.host] = b.node;
    for (size_t i = 0; i < hp.tensors.size(); ++i) {
        auto it = bound.find(hp.tensors[i]);
        if (it != bound.end() && !it->second->grad.empty()) grads[i] = &it->second->grad;
    }
    return grads;
}

}  // namespace

std::vector<EpochLog> train(DeepSenseModel& model, const std::vector<Sample>& dataset, const LossSpec& loss,
                            const TrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");

    HostParams hp = collect_params(model);
    AdamOptimizer opt(cfg.opt);
    std::mt19937_64 rng(cfg.seed);
    auto buckets = bucket_by_T(dataset);

    std::vector<EpochLog> log;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0, metric_sum = 0;
        int64_t batches = 0, batch_index = 0;
        for (auto& [T, indices] : buckets) {
            std::shuffle(indices.begin(), indices.end(), rng);
            for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(cfg.batch_size)) {
                const size_t end = std::min(indices.size(), start + static_cast<size_t>(cfg.batch_size));
                const std::vector<size_t> idx(indices.begin() + static_cast<long>(start),
                                              indices.begin() + static_cast<long>(end));
                Graph g;
                ParamBinder bind(g);
                ForwardResult fwd = forward(model, g, bind, batch_input(dataset, idx), true, rng);
                BatchLoss bl = build_loss(model, fwd, dataset, idx, loss);
                if (!std::isfinite(bl.node->value[0])) throw TrainingDiverged(epoch, batch_index);
                g.backward(bl.node);
                opt.step(hp.tensors, gather_grads(hp, bind));

                loss_sum += bl.node->value[0];
                metric_sum += bl.metric;
                batches += 1;
                batch_index += 1;
            }
        }
        log.push_back({epoch, "train", loss_sum / static_cast<double>(batches),
                       metric_sum / static_cast<double>(batches)});
    }
    return log;
}

double classification_accuracy(DeepSenseModel& model, const std::vector<Sample>& dataset,
                               std::vector<int64_t>* predictions) {
    if (dataset.empty()) throw std::invalid_argument("classification_accuracy: empty dataset");
    if (predictions) predictions->assign(dataset.size(), -1);
    auto buckets = bucket_by_T(dataset);
    int64_t hits = 0;
    for (auto& [T, indices] : buckets) {
        for (size_t start = 0; start < indices.size(); start += 64) {
            const size_t end = std::min(indices.size(), start + 64);
            const std::vector<size_t> idx(indices.begin() + static_cast<long>(start),
                                          indices.begin() + static_cast<long>(end));
            auto preds = predict_class(model, batch_input(dataset, idx));
            for (size_t b = 0; b < idx.size(); ++b) {
                if (predictions) (*predictions)[idx[b]] = preds[b];
                if (preds[b] == dataset[idx[b]].label) ++hits;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

std::vector<std::array<double, 2>> predict_displacements(DeepSenseModel& model, const Sample& sample) {
    Graph g;
    ParamBinder bind(g);
    std::mt19937_64 rng(0);
    ForwardResult fwd = forward(model, g, bind, make_model_input({sample.sensors}), false, rng);
    if (model.config.task.kind != TaskKind::Regression)
        throw std::invalid_argument("predict_displacements: regression head required");
    std::vector<std::array<double, 2>> out;
    for (Node* o : fwd.interval_outputs) out.push_back({o->value[0], o->value[1]});
    return out;
}

// ---------------------------------------------------------------------------
// gradient check

GradCheckReport gradient_check_model(DeepSenseModel& model, const std::vector<Sample>& batch,
                                     const LossSpec& loss, const GradCheckOptions& opts) {
    HostParams hp = collect_params(model);
    std::vector<size_t> idx(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) idx[i] = i;

    auto eval_loss = [&]() -> double {
        Graph g;
        ParamBinder bind(g);
        std::mt19937_64 rng(opts.dropout_seed);
        ForwardResult fwd = forward(model, g, bind, batch_input(batch, idx), true, rng);
        return build_loss(model, fwd, batch, idx, loss).node->value[0];
    };

    // analytic pass
    std::vector<Tensor> analytic;
    {
        Graph g;
        ParamBinder bind(g);
        std::mt19937_64 rng(opts.dropout_seed);
        ForwardResult fwd = forward(model, g, bind, batch_input(batch, idx), true, rng);
        BatchLoss bl = build_loss(model, fwd, batch, idx, loss);
        g.backward(bl.node);
        auto grads = gather_grads(hp, bind);
        for (size_t i = 0; i < hp.tensors.size(); ++i)
            analytic.push_back(grads[i] ? *grads[i] : Tensor::zeros(hp.tensors[i]->shape()));
    }
    if (opts.corrupt_param >= 0 && opts.corrupt_param < static_cast<int64_t>(analytic.size()))
        for (auto& v : analytic[static_cast<size_t>(opts.corrupt_param)].vec()) v = 3.0 * v + 0.1;

    GradCheckReport report;
    for (size_t p = 0; p < hp.tensors.size(); ++p) {
        Tensor& host = *hp.tensors[p];
        double worst = 0;
        for (int64_t j = 0; j < host.numel(); ++j) {
            const double orig = host[j];
            const double a = analytic[p][j];
            double rel = 0;
            // A ReLU/hinge kink inside the difference window fakes a large
            // mismatch that clears once the window shrinks; pure cancellation
            // noise clears once it widens. A wrong backward rule fails at
            // every rung of the ladder.
            const std::array<double, 4> steps{opts.step, opts.step / 8.0, opts.step / 64.0, opts.step * 8.0};
            for (size_t attempt = 0; attempt < steps.size(); ++attempt) {
                const double step = steps[attempt];
                host[j] = orig + step;
                const double lp = eval_loss();
                host[j] = orig - step;
                const double lm = eval_loss();
                host[j] = orig;
                const double fd = (lp - lm) / (2.0 * step);
                const double r = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), opts.grad_floor});
                rel = attempt == 0 ? r : std::min(rel, r);
                if (rel < 5e-5) break;
            }
            worst = std::max(worst, rel);
        }
        report.entries.push_back({hp.names[p], worst});
        if (worst > report.max_rel_err) {
            report.max_rel_err = worst;
            report.worst_param = hp.names[p];
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// config text + checkpointing

std::string to_config_text(const DeepSenseConfig& c) {
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < 6; ++i) os << "model.cov" << i + 1 << "=" << c.cov[i] << "\n";
    os << "model.d=";
    for (size_t i = 0; i < c.d.size(); ++i) os << (i ? "," : "") << c.d[i];
    os << "\n";
    os << "model.dropout_rate=" << c.dropout_rate << "\n";
    os << "model.f=" << c.f << "\n";
    os << "model.gru_hidden=" << c.gru_hidden << "\n";
    os << "model.gru_layers=" << c.gru_layers << "\n";
    os << "model.input_scale=" << c.input_scale << "\n";
    os << "model.k=" << c.K << "\n";
    os << "model.n_filters=" << c.n_filters << "\n";
    os << "model.output_dim=" << c.task.output_dim << "\n";
    os << "model.t=" << c.T << "\n";
    os << "model.task=" << to_string(c.task.kind) << "\n";
    os << "model.tau=" << c.tau << "\n";
    os << "model.variant=" << to_string(c.variant) << "\n";
    return os.str();
}

DeepSenseConfig config_from_text(const std::string& text) {
    DeepSenseConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config text: missing '=' in: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "model.d") {
            c.d.clear();
            std::istringstream ds(value);
            std::string tok;
            while (std::getline(ds, tok, ',')) c.d.push_back(std::stoll(tok));
        } else if (key == "model.k") {
            c.K = std::stoll(value);
        } else if (key == "model.f") {
            c.f = std::stoll(value);
        } else if (key == "model.t") {
            c.T = std::stoll(value);
        } else if (key == "model.tau") {
            c.tau = std::stod(value);
        } else if (key == "model.n_filters") {
            c.n_filters = std::stoll(value);
        } else if (key == "model.gru_hidden") {
            c.gru_hidden = std::stoll(value);
        } else if (key == "model.gru_layers") {
            c.gru_layers = std::stoll(value);
        } else if (key == "model.dropout_rate") {
            c.dropout_rate = std::stod(value);
        } else if (key == "model.input_scale") {
            c.input_scale = std::stod(value);
        } else if (key == "model.variant") {
            c.variant = variant_from_string(value);
        } else if (key == "model.task") {
            c.task.kind = task_from_string(value);
        } else if (key == "model.output_dim") {
            c.task.output_dim = std::stoll(value);
        } else if (key.rfind("model.cov", 0) == 0) {
            const auto i = static_cast<size_t>(std::stoi(key.substr(9)) - 1);
            if (i >= 6) throw std::invalid_argument("config text: bad key " + key);
            c.cov[i] = std::stoll(value);
        } else {
            throw std::invalid_argument("config text: unknown key " + key);
        }
    }
    return c;
}

namespace {

constexpr char kMagic[4] = {'D', 'S', 'N', 'S'};
constexpr uint32_t kVersion = 1;

struct ByteSink {
    std::string bytes;
    void raw(const void* p, size_t n) { bytes.append(static_cast<const char*>(p), n); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void doubles(const Tensor& t) { raw(t.data(), static_cast<size_t>(t.numel()) * 8); }
};

struct ByteSource {
    const std::string& bytes;
    size_t pos = 0;
    void raw(void* p, size_t n) {
        if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    void doubles(Tensor& t) { raw(t.data(), static_cast<size_t>(t.numel()) * 8); }
};

template <typename ConvFn, typename GruFn>
void visit_state(DeepSenseModel& m, ConvFn conv_fn, GruFn gru_fn) {
    auto subnet = [&](ConvSubnetParams& p) {
        for (auto& layer : p.layers) conv_fn(layer.bn);
    };
    for (auto& s : m.individual) subnet(s);
    if (m.merge) subnet(*m.merge);
    for (auto& layer : m.gru.layers) {
        gru_fn(layer.bn_update);
        gru_fn(layer.bn_reset);
        gru_fn(layer.bn_cand);
    }
}

}  // namespace

void save_checkpoint(const DeepSenseModel& model, const std::string& path) {
    ByteSink sink;
    sink.raw(kMagic, 4);
    sink.u32(kVersion);
    const std::string cfg = to_config_text(model.config);
    sink.u32(static_cast<uint32_t>(cfg.size()));
    sink.raw(cfg.data(), cfg.size());

    int64_t n_params = count_params(model);
    sink.u64(static_cast<uint64_t>(n_params));
    model.visit_params([&](const std::string&, const Tensor& t) { sink.doubles(t); });

    auto& m = const_cast<DeepSenseModel&>(model);
    visit_state(
        m,
        [&](BatchNormState& bn) {
            sink.doubles(bn.running_mean);
            sink.doubles(bn.running_var);
        },
        [&](RecurrentBnState& bn) {
            sink.u64(bn.step_mean.size());
            for (size_t s = 0; s < bn.step_mean.size(); ++s) {
                sink.doubles(bn.step_mean[s]);
                sink.doubles(bn.step_var[s]);
            }
        });

    const auto crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(sink.bytes.data()), static_cast<uInt>(sink.bytes.size())));
    sink.u32(crc);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(sink.bytes.data(), static_cast<std::streamsize>(sink.bytes.size()));
}

DeepSenseModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw std::runtime_error("checkpoint: truncated file");

    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    const auto computed = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
    if (stored_crc != computed) throw std::runtime_error("checkpoint: CRC mismatch");

    ByteSource src{bytes};
    char magic[4];
    src.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    if (src.u32() != kVersion) throw std::runtime_error("checkpoint: unsupported format version");
    const uint32_t cfg_len = src.u32();
    std::string cfg(cfg_len, '\0');
    src.raw(cfg.data(), cfg_len);

    DeepSenseModel model = build(config_from_text(cfg), 0);
    const auto n_params = static_cast<int64_t>(src.u64());
    if (n_params != count_params(model))
        throw std::runtime_error("checkpoint: parameter count mismatch with config");
    model.visit_params([&](const std::string&, Tensor& t) { src.doubles(t); });

    visit_state(
        model,
        [&](BatchNormState& bn) {
            src.doubles(bn.running_mean);
            src.doubles(bn.running_var);
        },
        [&](RecurrentBnState& bn) {
            const auto slots = src.u64();
            const int64_t h = bn.gamma.numel();
            bn.step_mean.assign(slots, Tensor::zeros({h}));
            bn.step_var.assign(slots, Tensor::zeros({h}));
            for (size_t s = 0; s < slots; ++s) {
                src.doubles(bn.step_mean[s]);
                src.doubles(bn.step_var[s]);
            }
        });
    return model;
}

}  // namespace deepsense
