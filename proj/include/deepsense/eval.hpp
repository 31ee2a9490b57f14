#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deepsense/data.hpp"

namespace deepsense {

// ---------------------------------------------------------------------------
// grid map and snapping

struct RoadSegment {
    std::array<double, 2> a, b;
    int64_t id = 0;
};

/// Axis-aligned roads on a uniform grid: one full-length segment per road
/// line, horizontal roads first (ascending y), then vertical (ascending x).
struct GridMap {
    double block = 80.0;
    std::vector<RoadSegment> segments;

    static GridMap make(double block, int half_extent_blocks);
};

double point_segment_distance(const std::array<double, 2>& p, const RoadSegment& s);

/// Nearest road segment id; exact distance ties resolve to the lowest id.
int64_t snap_point(const GridMap& map, const std::array<double, 2>& p);

using Trajectory = std::vector<std::array<double, 2>>;  // interval-boundary positions

/// Fraction of trajectories whose per-interval segments (midpoints) all snap
/// to the same road segment as the ground truth's.
double map_snap_accuracy(const std::vector<Trajectory>& trajectories, const std::vector<Trajectory>& truths,
                         const GridMap& map);

// ---------------------------------------------------------------------------
// metrics

struct TrackMetrics {
    double mae = 0;
    double ci_half_width = 0;  // 95%, normal approximation
    std::vector<double> errors;
    double map_aided_accuracy = 0;
};

/// (mean |error|, 1.96 * s / sqrt(n)); needs at least two samples.
std::pair<double, double> mae_ci(const std::vector<double>& errors);

struct ClassMetrics {
    double accuracy = 0;
    double macro_f1 = 0;
    double micro_f1 = 0;
    std::vector<std::vector<int64_t>> confusion;  // rows = truth, cols = prediction
};

ClassMetrics classification_metrics(const std::vector<int64_t>& predicted,
                                    const std::vector<int64_t>& truth, int64_t n_classes);

// ---------------------------------------------------------------------------
// dead-reckoning baseline

/// Gyroscope-integrated heading with magnetometer anchoring, gravity removed,
/// world-frame acceleration double-integrated from rest. Returns positions at
/// the interval boundaries, starting at origin. mag_bias is the calibrated
/// hard-iron offset subtracted before the compass heading is computed.
Trajectory sensor_fusion_baseline(const SensorSeries& accel, const SensorSeries& gyro,
                                  const SensorSeries& mag, double gravity,
                                  const std::vector<double>& interval_bounds,
                                  const std::array<double, 2>& origin,
                                  const std::array<double, 2>& mag_bias = {45.0, 45.0});

// ---------------------------------------------------------------------------
// report serialization

std::string track_metrics_json(const std::string& variant, const TrackMetrics& ds,
                               const TrackMetrics& baseline, int64_t n_samples, uint64_t seed);
std::string class_metrics_json(const std::string& task, const std::string& variant, const ClassMetrics& m,
                               int64_t n_samples, uint64_t seed);

void write_trajectory_csv(const Trajectory& traj, const std::vector<double>& times,
                          const std::string& path);

}  // namespace deepsense
