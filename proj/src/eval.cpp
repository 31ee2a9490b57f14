#include "deepsense/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace deepsense {

GridMap GridMap::make(double block, int half_extent_blocks) {
    if (block <= 0 || half_extent_blocks < 1)
        throw std::invalid_argument("GridMap: block size and extent must be positive");
    GridMap m;
    m.block = block;
    const double extent = block * half_extent_blocks;
    int64_t id = 0;
    for (int i = -half_extent_blocks; i <= half_extent_blocks; ++i)
        m.segments.push_back({{-extent, i * block}, {extent, i * block}, id++});
    for (int i = -half_extent_blocks; i <= half_extent_blocks; ++i)
        m.segments.push_back({{i * block, -extent}, {i * block, extent}, id++});
    return m;
}

double point_segment_distance(const std::array<double, 2>& p, const RoadSegment& s) {
    const double dx = s.b[0] - s.a[0], dy = s.b[1] - s.a[1];
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p[0] - s.a[0]) * dx + (p[1] - s.a[1]) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p[0] - (s.a[0] + t * dx), p[1] - (s.a[1] + t * dy));
}

int64_t snap_point(const GridMap& map, const std::array<double, 2>& p) {
    if (map.segments.empty()) throw std::invalid_argument("snap_point: empty map");
    int64_t best = map.segments.front().id;
    double best_d = point_segment_distance(p, map.segments.front());
    for (const auto& s : map.segments) {
        const double d = point_segment_distance(p, s);
        if (d < best_d) {  // strict: ties keep the lowest id
            best_d = d;
            best = s.id;
        }
    }
    return best;
}

double map_snap_accuracy(const std::vector<Trajectory>& trajectories, const std::vector<Trajectory>& truths,
                         const GridMap& map) {
    if (map.segments.empty()) throw std::invalid_argument("map_snap_accuracy: empty map");
    if (trajectories.size() != truths.size() || trajectories.empty())
        throw std::invalid_argument("map_snap_accuracy: trajectory/truth lists must align 1:1");

    int64_t successes = 0;
    for (size_t i = 0; i < trajectories.size(); ++i) {
        const Trajectory& a = trajectories[i];
        const Trajectory& b = truths[i];
        if (a.size() != b.size() || a.size() < 2)
            throw std::invalid_argument("map_snap_accuracy: trajectories need matching interval counts");
        bool all_match = true;
        for (size_t t = 0; t + 1 < a.size() && all_match; ++t) {
            const std::array<double, 2> ma{0.5 * (a[t][0] + a[t + 1][0]), 0.5 * (a[t][1] + a[t + 1][1])};
            const std::array<double, 2> mb{0.5 * (b[t][0] + b[t + 1][0]), 0.5 * (b[t][1] + b[t + 1][1])};
            all_match = snap_point(map, ma) == snap_point(map, mb);
        }
        successes += all_match ? 1 : 0;
    }
    return static_cast<double>(successes) / static_cast<double>(trajectories.size());
}

std::pair<double, double> mae_ci(const std::vector<double>& errors) {
    if (errors.size() < 2) throw std::invalid_argument("mae_ci: needs at least 2 samples");
    double mean = 0;
    for (double e : errors) mean += std::fabs(e);
    mean /= static_cast<double>(errors.size());
    double var = 0;
    for (double e : errors) {
        const double d = std::fabs(e) - mean;
        var += d * d;
    }
    var /= static_cast<double>(errors.size() - 1);
    const double half = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(errors.size()));
    return {mean, half};
}

ClassMetrics classification_metrics(const std::vector<int64_t>& predicted,
                                    const std::vector<int64_t>& truth, int64_t n_classes) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("classification_metrics: length mismatch " +
                                    std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()));
    if (predicted.empty()) throw std::invalid_argument("classification_metrics: empty label lists");

    ClassMetrics m;
    m.confusion.assign(static_cast<size_t>(n_classes), std::vector<int64_t>(static_cast<size_t>(n_classes), 0));
    for (size_t i = 0; i < truth.size(); ++i) {
        const int64_t t = truth[i], p = predicted[i];
        if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
            throw std::invalid_argument("classification_metrics: label out of range");
        m.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)] += 1;
    }

    const auto n = static_cast<int64_t>(truth.size());
    int64_t diag = 0;
    for (int64_t c = 0; c < n_classes; ++c) diag += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    m.accuracy = static_cast<double>(diag) / static_cast<double>(n);

    double macro = 0;
    for (int64_t c = 0; c < n_classes; ++c) {
        int64_t tp = m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
        int64_t row = 0, col = 0;
        for (int64_t j = 0; j < n_classes; ++j) {
            row += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(j)];
            col += m.confusion[static_cast<size_t>(j)][static_cast<size_t>(c)];
        }
        const double precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        const double recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        macro += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    m.macro_f1 = macro / static_cast<double>(n_classes);

    // micro F1 from pooled counts; in single-label classification every
    // misprediction is one FP and one FN, so this must equal accuracy
    const int64_t fp = n - diag, fn = n - diag;
    m.micro_f1 = 2.0 * static_cast<double>(diag) / static_cast<double>(2 * diag + fp + fn);
    if (std::fabs(m.micro_f1 - m.accuracy) > 1e-12)
        throw std::logic_error("classification_metrics: micro F1 diverged from accuracy");
    return m;
}

// ---------------------------------------------------------------------------
// dead-reckoning baseline

namespace {

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

}  // namespace

Trajectory sensor_fusion_baseline(const SensorSeries& accel, const SensorSeries& gyro,
                                  const SensorSeries& mag, double gravity,
                                  const std::vector<double>& interval_bounds,
                                  const std::array<double, 2>& origin,
                                  const std::array<double, 2>& mag_bias) {
    (void)gravity;  // gravity rides the device z axis; the 2D track uses x/y
    accel.validate();
    gyro.validate();
    mag.validate();
    if (accel.samples() < 2) throw std::invalid_argument("sensor_fusion_baseline: empty input");
    if (interval_bounds.size() < 2)
        throw std::invalid_argument("sensor_fusion_baseline: needs at least two interval bounds");

    const int64_t n = accel.samples();
    const int64_t nm = mag.samples();

    auto mag_heading = [&](int64_t j) {
        return std::atan2(-(mag.values[1 * nm + j] - mag_bias[1]), mag.values[0 * nm + j] - mag_bias[0]);
    };

    // complementary filter: integrate gyro z, lean on the magnetometer
    const double alpha = 0.02;
    double theta = mag_heading(0);
    int64_t mj = 0;

    Trajectory out;
    size_t bound = 0;
    std::array<double, 2> v{0, 0}, p{origin};
    std::array<double, 2> aw_prev{0, 0};
    const int64_t ng = gyro.samples();

    for (int64_t i = 0; i < n; ++i) {
        const double t = accel.timestamps[static_cast<size_t>(i)];
        while (bound < interval_bounds.size() && interval_bounds[bound] <= t + 1e-9) {
            out.push_back(p);
            ++bound;
        }
        if (i == 0) continue;
        const double dt = t - accel.timestamps[static_cast<size_t>(i - 1)];

        const auto gi = std::min<int64_t>(i, ng - 1);
        theta += gyro.values[2 * ng + gi] * dt;
        while (mj + 1 < nm && mag.timestamps[static_cast<size_t>(mj + 1)] <= t) ++mj;
        theta = wrap_angle(theta + alpha * wrap_angle(mag_heading(mj) - theta));

        const double ax = accel.values[0 * n + i], ay = accel.values[1 * n + i];
        const std::array<double, 2> aw{std::cos(theta) * ax - std::sin(theta) * ay,
                                       std::sin(theta) * ax + std::cos(theta) * ay};
        for (int a = 0; a < 2; ++a) {
            const double vn = v[static_cast<size_t>(a)] +
                              0.5 * (aw_prev[static_cast<size_t>(a)] + aw[static_cast<size_t>(a)]) * dt;
            p[static_cast<size_t>(a)] += 0.5 * (v[static_cast<size_t>(a)] + vn) * dt;
            v[static_cast<size_t>(a)] = vn;
        }
        aw_prev = aw;
    }
    while (bound < interval_bounds.size()) {
        out.push_back(p);
        ++bound;
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization

std::string track_metrics_json(const std::string& variant, const TrackMetrics& ds,
                               const TrackMetrics& baseline, int64_t n_samples, uint64_t seed) {
    nlohmann::json j;
    j["task"] = "cartrack";
    j["variant"] = variant;
    j["metrics"]["mae_m"] = ds.mae;
    j["metrics"]["mae_ci95_m"] = ds.ci_half_width;
    j["metrics"]["map_aided_accuracy"] = ds.map_aided_accuracy;
    j["metrics"]["baseline_mae_m"] = baseline.mae;
    j["metrics"]["baseline_mae_ci95_m"] = baseline.ci_half_width;
    j["metrics"]["baseline_map_aided_accuracy"] = baseline.map_aided_accuracy;
    j["n_samples"] = n_samples;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

std::string class_metrics_json(const std::string& task, const std::string& variant, const ClassMetrics& m,
                               int64_t n_samples, uint64_t seed) {
    nlohmann::json j;
    j["task"] = task;
    j["variant"] = variant;
    j["metrics"]["accuracy"] = m.accuracy;
    j["metrics"]["macro_f1"] = m.macro_f1;
    j["metrics"]["micro_f1"] = m.micro_f1;
    j["confusion"] = m.confusion;
    j["n_samples"] = n_samples;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

void write_trajectory_csv(const Trajectory& traj, const std::vector<double>& times,
                          const std::string& path) {
    if (traj.size() != times.size())
        throw std::invalid_argument("write_trajectory_csv: time/position count mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "t,x,y\n";
    char buf[120];
    for (size_t i = 0; i < traj.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", times[i], traj[i][0], traj[i][1]);
        out << buf;
    }
}

}  // namespace deepsense
