#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepsense/model.hpp"

namespace deepsense {

/// Per-interval 2D displacement distribution from Kalman smoothing.
struct GaussianTarget {
    std::array<double, 2> mean{0, 0};       // meters
    std::array<double, 4> cov{1, 0, 0, 1};  // row-major 2x2, m^2

    void validate() const;  // symmetric positive-definite
};

struct CarTrackLossParams {
    double lambda = 1.0;          // penalty weight
    double theta = 0.5235987755982988;  // angular margin, pi/6

    void validate() const;
};

/// One dataset element: K per-sensor frequency tensors plus the task target.
struct Sample {
    std::vector<FreqTensor> sensors;
    int64_t label = -1;                        // classification
    int64_t group = -1;                        // split key (user index)
    std::vector<GaussianTarget> displacement;  // regression, one per interval

    int64_t T() const { return sensors.at(0).T(); }
};

// --- losses, plain single-sample forms -------------------------------------

/// -sum y_i log yhat_i for a probability vector and a one-hot target.
double cross_entropy(const std::vector<double>& probs, const std::vector<double>& onehot);

/// Mean squared difference.
double mse(const Tensor& pred, const Tensor& target);

/// Gaussian negative log likelihood summed over intervals plus the
/// lambda-weighted hinge penalty on the prediction-target angle. The cosine
/// similarity is defined as 0 when either vector's norm falls under 1e-9.
double cartrack_loss(const std::vector<std::array<double, 2>>& preds,
                     const std::vector<GaussianTarget>& targets, const CarTrackLossParams& params);

// --- losses, graph forms (batch mean) ---------------------------------------

Node* cross_entropy_loss_node(Node* logits, const std::vector<int64_t>& labels);
Node* mse_loss_node(Node* pred, const Tensor& target);
/// interval_preds: T nodes of (B, 2); targets: per sample, per interval.
Node* cartrack_loss_node(const std::vector<Node*>& interval_preds,
                         const std::vector<const std::vector<GaussianTarget>*>& targets,
                         const CarTrackLossParams& params);

// --- optimization ------------------------------------------------------------

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // global gradient norm; <= 0 disables
};

/// Adaptive-moment optimizer over a fixed parameter list.
class AdamOptimizer {
public:
    explicit AdamOptimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
    int64_t steps_taken() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

// --- training loop ------------------------------------------------------------

struct LossSpec {
    enum class Kind { CrossEntropy, Mse, CarTrack };
    Kind kind = Kind::CrossEntropy;
    CarTrackLossParams cartrack;
};

struct TrainConfig {
    OptimizerConfig opt;
    int64_t batch_size = 16;
    int64_t epochs = 10;
    uint64_t seed = 0;
};

struct EpochLog {
    int64_t epoch;
    std::string split;
    double loss;
    double metric;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int64_t epoch, int64_t batch)
        : std::runtime_error("diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch)),
          epoch(epoch),
          batch(batch) {}
    int64_t epoch, batch;
};

/// Deterministic seeded mini-batch training; samples are bucketed by interval
/// count so every batch shares one T.
std::vector<EpochLog> train(DeepSenseModel& model, const std::vector<Sample>& dataset,
                            const LossSpec& loss, const TrainConfig& cfg);

/// Batched inference helpers.
double classification_accuracy(DeepSenseModel& model, const std::vector<Sample>& dataset,
                               std::vector<int64_t>* predictions = nullptr);
std::vector<std::array<double, 2>> predict_displacements(DeepSenseModel& model, const Sample& sample);

// --- gradient checking ----------------------------------------------------------

struct GradCheckEntry {
    std::string param;
    double max_rel_err;
};

struct GradCheckReport {
    double max_rel_err = 0;
    std::string worst_param;
    std::vector<GradCheckEntry> entries;
    bool passed(double tol) const { return max_rel_err < tol; }
};

struct GradCheckOptions {
    double step = 1e-5;
    /// Relative-error denominator floor: coordinates under this scale are
    /// compared absolutely at tolerance * floor. Central differences bottom
    /// out near 1e-8 absolute here (cancellation + curvature), so gradients
    /// smaller than the floor cannot be resolved to a tight relative
    /// tolerance; batch norm also makes conv biases exactly dead.
    double grad_floor = 1e-4;
    uint64_t dropout_seed = 1;
    /// Self-test knob: index of a parameter tensor whose analytic gradient is
    /// deliberately corrupted before comparison (-1 = off).
    int64_t corrupt_param = -1;
};

/// Compare every parameter's analytic gradient against central finite
/// differences on one batch. Report only; never throws on mismatch.
GradCheckReport gradient_check_model(DeepSenseModel& model, const std::vector<Sample>& batch,
                                     const LossSpec& loss, const GradCheckOptions& opts = {});

// --- checkpointing -----------------------------------------------------------

std::string to_config_text(const DeepSenseConfig& config);
DeepSenseConfig config_from_text(const std::string& text);

/// Versioned binary checkpoint: "DSNS" magic, u32 format version, length-
/// prefixed canonical config text, parameters as little-endian doubles in
/// visit_params order, batch-norm running statistics, trailing CRC32.
void save_checkpoint(const DeepSenseModel& model, const std::string& path);
DeepSenseModel load_checkpoint(const std::string& path);

}  // namespace deepsense
