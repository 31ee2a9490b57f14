#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deepsense/training.hpp"

namespace deepsense {

// ---------------------------------------------------------------------------
// synthetic driving traces

/// Ground-truth kinematics sampled on the simulator clock, plus the
/// GPS-delimited per-interval displacements.
struct KinematicTrace {
    std::vector<double> t;
    std::vector<std::array<double, 2>> pos, vel, acc;  // world frame
    std::vector<double> heading;                       // rad, 0 = +x
    std::vector<double> interval_bounds;               // GPS fix times
    std::vector<std::array<double, 2>> interval_displacement;
};

struct SyntheticIMUConfig {
    double accel_rate_hz = 100.0;
    double gyro_rate_hz = 100.0;
    double mag_rate_hz = 50.0;

    double accel_noise_std = 0.05;  // m/s^2
    double accel_bias_std = 0.10;   // initial bias draw, m/s^2
    double accel_bias_walk = 0.01;  // m/s^2 per sqrt(s)
    double gyro_noise_std = 0.01;   // rad/s
    double gyro_bias_std = 0.01;
    double gyro_bias_walk = 0.001;
    double mag_noise_std = 1.0;  // uT
    double mag_field = 25.0;     // horizontal field, uT
    double mag_field_z = -40.0;
    // hard-iron offset from vehicle magnetization; keeps the device-frame
    // field components one-signed so compass information survives the
    // magnitude/phase encoding
    double mag_bias_x = 45.0;
    double mag_bias_y = 45.0;
    double gps_noise_std = 4.0;  // m
    double gps_period_s = 1.0;
    double gravity = 9.81;

    // road vibration injected into the accelerometer; its amplitude and
    // spectral peaks scale with speed, which is what makes speed observable
    double vib_base = 0.10;
    double vib_per_speed = 0.12;
    double idle_vib = 0.02;

    double grid_spacing = 80.0;  // roads every 80 m
    uint64_t seed = 0;
    bool stationary = false;  // park for the whole trace (calibration runs)

    void validate() const;
};

struct SimulatedTrace {
    KinematicTrace truth;
    std::vector<SensorSeries> sensors;  // accelerometer, gyroscope, magnetometer (d=3)
    std::vector<double> gps_t;
    std::vector<std::array<double, 2>> gps;  // noisy fixes

    std::array<double, 2> final_displacement() const {
        return {truth.pos.back()[0] - truth.pos.front()[0], truth.pos.back()[1] - truth.pos.front()[1]};
    }
};

/// Grid-following zero-speed-to-zero-speed journey with device-frame sensor
/// streams. Duration is met to within a few seconds.
SimulatedTrace simulate_trace(const SyntheticIMUConfig& config, double duration);

// ---------------------------------------------------------------------------
// Kalman smoothing of GPS fixes

struct KalmanConfig {
    double process_noise = 0.6;      // white-acceleration density, (m/s^2)^2/Hz
    double measurement_std = 4.0;    // m
    double first_interval_std = 0.3; // fixed sigma of the zero-displacement head interval
};

struct SmoothedTrack {
    std::vector<std::array<double, 2>> positions;  // per fix
    std::vector<std::array<double, 2>> pos_var;    // per fix, per axis
    std::vector<GaussianTarget> displacements;     // per interval (fix i -> i+1)
};

/// Constant-velocity forward filter + RTS smoother, one 2-state filter per
/// axis. Interval 0 is pinned to zero displacement with a small fixed
/// covariance (the zero-speed head interval).
SmoothedTrack kalman_smooth(const std::vector<double>& times,
                            const std::vector<std::array<double, 2>>& fixes, const KalmanConfig& config);

/// Preprocess one simulated trace into a training sample (tensors for
/// accel/gyro/mag plus Kalman-smoothed displacement targets).
Sample make_cartrack_sample(const SimulatedTrace& trace, int64_t target_len, int f,
                            const KalmanConfig& kalman);

// ---------------------------------------------------------------------------
// HHAR-style activity data

enum class HharSensor { Accelerometer, Gyroscope };

extern const std::array<std::string, 6> kHharActivities;  // biking .. climbStair-down
extern const std::string kHharUsers;                      // "abcdefghi"

struct HHARRecord {
    int user = 0;  // 0..8 for users a..i
    std::string device;
    int activity = 0;  // index into kHharActivities
    HharSensor sensor = HharSensor::Accelerometer;
    double t = 0;  // seconds
    double x = 0, y = 0, z = 0;
};

struct HharLoadResult {
    std::vector<HHARRecord> records;
    int64_t dropped_rows = 0;
};

/// CSV columns: index, arrival-time, creation-time, x, y, z, user, model,
/// device, gt ('_' and case-insensitive header accepted). Rows with missing
/// fields or unknown activity/user labels are dropped and counted.
HharLoadResult load_hhar_csv(const std::string& path, HharSensor sensor);

enum class LabelBy { Activity, User };

struct MakeSamplesResult {
    std::vector<Sample> samples;
    int64_t skipped_windows = 0;
};

/// Cut per-(user, device, activity-run) windows of sample_len seconds, build
/// both sensors' frequency tensors per tau interval. Windows missing a sensor
/// are skipped and counted. Sample.group carries the user index.
MakeSamplesResult make_samples(const std::vector<HHARRecord>& records, double tau, double sample_len,
                               LabelBy label_by, int64_t target_len = 32, int f = 10);

// ---------------------------------------------------------------------------
// evaluation splits

struct SplitResult {
    std::vector<size_t> train, test;
};

/// All samples of the held-out group (user) form the test set.
SplitResult split_leave_one_user_out(const std::vector<Sample>& samples, int64_t user);

/// Stratified k-fold: per-label seeded shuffle, round-robin assignment.
SplitResult split_stratified_kfold(const std::vector<Sample>& samples, int k, int fold, uint64_t seed);

// ---------------------------------------------------------------------------
// synthetic classification set for overfit checks

DeepSenseConfig synthetic_two_class_config();
std::vector<Sample> synthetic_two_class_dataset(int n, uint64_t seed);

// ---------------------------------------------------------------------------
// trace CSV round-trip (simulate -> files -> train/eval)

void write_trace_csv(const SimulatedTrace& trace, const std::string& sensors_path,
                     const std::string& truth_path, const std::string& gps_path);
SimulatedTrace read_trace_csv(const std::string& sensors_path, const std::string& truth_path,
                              const std::string& gps_path);

}  // namespace deepsense
