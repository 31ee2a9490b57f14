#include "deepsense/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace deepsense {

void SyntheticIMUConfig::validate() const {
    for (double r : {accel_rate_hz, gyro_rate_hz, mag_rate_hz}) {
        if (r <= 0) throw std::invalid_argument("SyntheticIMUConfig: sensor rates must be positive");
    }
    for (double s : {accel_noise_std, accel_bias_std, accel_bias_walk, gyro_noise_std, gyro_bias_std,
                     gyro_bias_walk, mag_noise_std, gps_noise_std, vib_base, vib_per_speed, idle_vib}) {
        if (s < 0) throw std::invalid_argument("SyntheticIMUConfig: noise levels must be >= 0");
    }
    if (gps_period_s <= 0 || grid_spacing <= 0)
        throw std::invalid_argument("SyntheticIMUConfig: gps period and grid spacing must be positive");
}

// ---------------------------------------------------------------------------
// driving profile

namespace {

constexpr double kMaxAccel = 1.2;   // m/s^2 speed-change rate
constexpr double kTurnSpeed = 3.0;  // m/s through intersections
constexpr double kTurnTime = 2.5;   // s for a 90-degree corner
constexpr double kStopHead = 3.2;   // stationary lead-in, >= 3 zero-speed GPS fixes
constexpr double kMinCruise = 5.0;  // m

struct Phase {
    enum Kind { Stop, Ramp, Cruise, Turn } kind;
    double duration;
    double v_from = 0, v_to = 0;  // Ramp
    double v = 0;                 // Cruise / Turn
    double turn_sign = 0;         // Turn: +1 left, -1 right
};

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }
double smoothstep_rate(double u) { return 6.0 * u * (1.0 - u); }

double ramp_distance(double va, double vb) {
    const double dur = std::fabs(vb - va) / kMaxAccel;
    return 0.5 * (va + vb) * dur;
}

/// Plan a zero-speed to zero-speed grid journey of roughly `duration`
/// seconds: straight legs at quantized cruise speeds, 90-degree turns at
/// intersections, stationary head and tail.
std::vector<Phase> plan_phases(std::mt19937_64& rng, double duration, double spacing) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double r = u01(rng);
    const int n_turns = r < 0.35 ? 0 : (r < 0.75 ? 1 : 2);
    const int n_legs = n_turns + 1;

    const std::array<double, 3> speed_menu{4.0, 6.0, 8.0};
    std::vector<double> speeds;
    for (int i = 0; i < n_legs; ++i)
        speeds.push_back(speed_menu[static_cast<size_t>(std::uniform_int_distribution<int>(0, 2)(rng))]);

    double budget = duration - 2.0 * kStopHead - n_turns * kTurnTime;
    std::vector<double> weights;
    double wsum = 0;
    for (int i = 0; i < n_legs; ++i) {
        weights.push_back(0.5 + u01(rng));
        wsum += weights.back();
    }

    std::vector<Phase> phases;
    phases.push_back({Phase::Stop, kStopHead, 0, 0, 0, 0});

    double along = spacing / 2.0;  // start mid-block
    double v_prev = 0;
    for (int leg = 0; leg < n_legs; ++leg) {
        const double v = speeds[static_cast<size_t>(leg)];
        const double leg_time = budget * weights[static_cast<size_t>(leg)] / wsum;
        const double raw_dist = std::max(v * leg_time, spacing);
        const bool turns_after = leg + 1 < n_legs;

        const double d_in = ramp_distance(v_prev, v);
        const double d_out = turns_after ? ramp_distance(v, kTurnSpeed) : ramp_distance(v, 0.0);
        const double turn_lead = 0.5 * kTurnSpeed * kTurnTime;  // arc straddles the corner

        double total;
        if (turns_after) {
            // leg must end exactly turn_lead short of an intersection
            const double min_total = d_in + d_out + kMinCruise;
            double k = std::floor((along + raw_dist + turn_lead) / spacing);
            while (k * spacing - turn_lead - along < min_total) k += 1.0;
            total = k * spacing - turn_lead - along;
        } else {
            total = std::max(raw_dist, d_in + d_out + kMinCruise);
        }

        const double cruise_dist = total - d_in - d_out;
        if (v != v_prev)
            phases.push_back({Phase::Ramp, std::fabs(v - v_prev) / kMaxAccel, v_prev, v, 0, 0});
        phases.push_back({Phase::Cruise, cruise_dist / v, 0, 0, v, 0});
        if (turns_after) {
            phases.push_back({Phase::Ramp, std::fabs(kTurnSpeed - v) / kMaxAccel, v, kTurnSpeed, 0, 0});
            const double sign = u01(rng) < 0.5 ? 1.0 : -1.0;
            phases.push_back({Phase::Turn, kTurnTime, 0, 0, kTurnSpeed, sign});
            along = turn_lead;  // measured on the new road from the intersection
            v_prev = kTurnSpeed;
        } else {
            phases.push_back({Phase::Ramp, v / kMaxAccel, v, 0, 0, 0});
            v_prev = 0;
        }
    }

    double realized = 0;
    for (const auto& p : phases) realized += p.duration;
    phases.push_back({Phase::Stop, std::max(kStopHead, duration - realized), 0, 0, 0, 0});
    return phases;
}

struct ProfileSample {
    double v, dvdt, omega;
};

ProfileSample profile_at(const std::vector<Phase>& phases, double t) {
    double start = 0;
    for (const auto& p : phases) {
        if (t < start + p.duration || &p == &phases.back()) {
            const double u = p.duration > 0 ? std::clamp((t - start) / p.duration, 0.0, 1.0) : 0.0;
            switch (p.kind) {
                case Phase::Stop: return {0, 0, 0};
                case Phase::Cruise: return {p.v, 0, 0};
                case Phase::Ramp:
                    return {p.v_from + (p.v_to - p.v_from) * smoothstep(u),
                            (p.v_to - p.v_from) * smoothstep_rate(u) / p.duration, 0};
                case Phase::Turn:
                    return {p.v, 0, p.turn_sign * (std::numbers::pi / 2.0) * smoothstep_rate(u) / p.duration};
            }
        }
        start += p.duration;
    }
    return {0, 0, 0};
}

}  // namespace

SimulatedTrace simulate_trace(const SyntheticIMUConfig& config, double duration) {
    config.validate();
    if (duration < 10.0) throw std::invalid_argument("simulate_trace: duration must be >= 10 s");
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    auto phases = config.stationary ? std::vector<Phase>{{Phase::Stop, duration, 0, 0, 0, 0}}
                                    : plan_phases(rng, duration, config.grid_spacing);
    double total = 0;
    for (const auto& p : phases) total += p.duration;
    // pad the tail stop onto a 5 s grid so traces bucket into equal interval
    // counts for batching
    const double quantum = 5.0;
    const double padded = quantum * std::ceil((total - 1e-9) / quantum);
    phases.back().duration += padded - total;
    total = padded;

    const double dt = 1.0 / config.accel_rate_hz;
    const auto n = static_cast<int64_t>(std::floor(total / dt)) + 1;

    // start on an axis-aligned road through the origin, mid-block
    const int axis = std::uniform_int_distribution<int>(0, 3)(rng);
    const double theta0 = axis * std::numbers::pi / 2.0;
    const std::array<double, 2> start{config.grid_spacing / 2.0 * std::cos(theta0),
                                      config.grid_spacing / 2.0 * std::sin(theta0)};

    KinematicTrace truth;
    truth.t.resize(static_cast<size_t>(n));
    truth.pos.resize(static_cast<size_t>(n));
    truth.vel.resize(static_cast<size_t>(n));
    truth.acc.resize(static_cast<size_t>(n));
    truth.heading.resize(static_cast<size_t>(n));

    std::vector<ProfileSample> profile(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        truth.t[static_cast<size_t>(i)] = static_cast<double>(i) * dt;
        profile[static_cast<size_t>(i)] = profile_at(phases, truth.t[static_cast<size_t>(i)]);
    }
    truth.heading[0] = theta0;
    for (int64_t i = 1; i < n; ++i)
        truth.heading[static_cast<size_t>(i)] = truth.heading[static_cast<size_t>(i - 1)] +
                                                0.5 * (profile[static_cast<size_t>(i - 1)].omega +
                                                       profile[static_cast<size_t>(i)].omega) * dt;
    for (int64_t i = 0; i < n; ++i) {
        const ProfileSample& ps = profile[static_cast<size_t>(i)];
        const double theta = truth.heading[static_cast<size_t>(i)];
        const double c = std::cos(theta), s = std::sin(theta);
        truth.acc[static_cast<size_t>(i)] = {ps.dvdt * c - ps.v * ps.omega * s,
                                             ps.dvdt * s + ps.v * ps.omega * c};
    }
    truth.vel[0] = {0, 0};
    truth.pos[0] = start;
    for (int64_t i = 1; i < n; ++i) {
        const auto& a0 = truth.acc[static_cast<size_t>(i - 1)];
        const auto& a1 = truth.acc[static_cast<size_t>(i)];
        const auto& v0 = truth.vel[static_cast<size_t>(i - 1)];
        truth.vel[static_cast<size_t>(i)] = {v0[0] + 0.5 * (a0[0] + a1[0]) * dt,
                                             v0[1] + 0.5 * (a0[1] + a1[1]) * dt};
        const auto& v1 = truth.vel[static_cast<size_t>(i)];
        const auto& p0 = truth.pos[static_cast<size_t>(i - 1)];
        truth.pos[static_cast<size_t>(i)] = {p0[0] + 0.5 * (v0[0] + v1[0]) * dt,
                                             p0[1] + 0.5 * (v0[1] + v1[1]) * dt};
    }

    SimulatedTrace out;

    // accelerometer: device frame (x forward, y left, z up), gravity on z,
    // slow bias walk, white noise, speed-keyed road/engine vibration
    {
        SensorSeries acc;
        acc.sensor_id = 0;
        acc.values = Tensor({3, n});
        acc.timestamps = truth.t;
        std::array<double, 3> bias{config.accel_bias_std * gauss(rng), config.accel_bias_std * gauss(rng),
                                   config.accel_bias_std * gauss(rng)};
        const double ph1 = 2 * std::numbers::pi * u01(rng);
        const double ph2 = 2 * std::numbers::pi * u01(rng);
        const double ph3 = 2 * std::numbers::pi * u01(rng);
        const double walk = config.accel_bias_walk * std::sqrt(dt);
        for (int64_t i = 0; i < n; ++i) {
            const double t = truth.t[static_cast<size_t>(i)];
            const double th = truth.heading[static_cast<size_t>(i)];
            const auto& aw = truth.acc[static_cast<size_t>(i)];
            const double speed = std::hypot(truth.vel[static_cast<size_t>(i)][0],
                                            truth.vel[static_cast<size_t>(i)][1]);
            const double ax = std::cos(th) * aw[0] + std::sin(th) * aw[1];
            const double ay = -std::sin(th) * aw[0] + std::cos(th) * aw[1];
            const double amp = config.vib_per_speed * speed + config.vib_base * (1.0 - std::exp(-speed));
            const double wheel = std::sin(2 * std::numbers::pi * (0.5 * speed) * t + ph1);
            const double engine = std::sin(2 * std::numbers::pi * (0.9 * speed) * t + ph2);
            const double road_z = std::sin(2 * std::numbers::pi * (0.5 * speed) * 2.0 * t + ph3);
            const double idle = config.idle_vib * std::sin(2 * std::numbers::pi * 6.0 * t);
            for (int axi = 0; axi < 3; ++axi) bias[static_cast<size_t>(axi)] += walk * gauss(rng);
            acc.values[0 * n + i] = ax + amp * (wheel + 0.5 * engine) + bias[0] +
                                    config.accel_noise_std * gauss(rng);
            acc.values[1 * n + i] = ay + 0.3 * amp * engine + bias[1] + config.accel_noise_std * gauss(rng);
            acc.values[2 * n + i] = config.gravity + 0.8 * amp * road_z + idle + bias[2] +
                                    config.accel_noise_std * gauss(rng);
        }
        out.sensors.push_back(std::move(acc));
    }

    // gyroscope at the same master rate
    {
        SensorSeries gyro;
        gyro.sensor_id = 1;
        gyro.values = Tensor({3, n});
        gyro.timestamps = truth.t;
        double bias = config.gyro_bias_std * gauss(rng);
        const double walk = config.gyro_bias_walk * std::sqrt(dt);
        for (int64_t i = 0; i < n; ++i) {
            const double t = truth.t[static_cast<size_t>(i)];
            const ProfileSample ps = profile_at(phases, t);
            bias += walk * gauss(rng);
            gyro.values[0 * n + i] = config.gyro_noise_std * gauss(rng);
            gyro.values[1 * n + i] = config.gyro_noise_std * gauss(rng);
            gyro.values[2 * n + i] = ps.omega + bias + config.gyro_noise_std * gauss(rng);
        }
        out.sensors.push_back(std::move(gyro));
    }

    // magnetometer, decimated to its own rate
    {
        const auto stride = std::max<int64_t>(1, static_cast<int64_t>(std::llround(config.accel_rate_hz / config.mag_rate_hz)));
        const int64_t m = (n + stride - 1) / stride;
        SensorSeries mag;
        mag.sensor_id = 2;
        mag.values = Tensor({3, m});
        mag.timestamps.resize(static_cast<size_t>(m));
        for (int64_t j = 0; j < m; ++j) {
            const int64_t i = j * stride;
            const double th = truth.heading[static_cast<size_t>(i)];
            mag.timestamps[static_cast<size_t>(j)] = truth.t[static_cast<size_t>(i)];
            mag.values[0 * m + j] =
                config.mag_bias_x + std::cos(th) * config.mag_field + config.mag_noise_std * gauss(rng);
            mag.values[1 * m + j] =
                config.mag_bias_y - std::sin(th) * config.mag_field + config.mag_noise_std * gauss(rng);
            mag.values[2 * m + j] = config.mag_field_z + config.mag_noise_std * gauss(rng);
        }
        out.sensors.push_back(std::move(mag));
    }

    // GPS fixes every gps_period_s from t = 0
    for (double t = 0; t <= truth.t.back() + 1e-9; t += config.gps_period_s) {
        const auto i = static_cast<size_t>(std::min<int64_t>(n - 1, std::llround(t / dt)));
        out.gps_t.push_back(truth.t[i]);
        out.gps.push_back({truth.pos[i][0] + config.gps_noise_std * gauss(rng),
                           truth.pos[i][1] + config.gps_noise_std * gauss(rng)});
    }

    truth.interval_bounds = out.gps_t;
    for (size_t b = 0; b + 1 < out.gps_t.size(); ++b) {
        const auto i0 = static_cast<size_t>(std::llround(out.gps_t[b] / dt));
        const auto i1 = static_cast<size_t>(std::min<int64_t>(n - 1, std::llround(out.gps_t[b + 1] / dt)));
        truth.interval_displacement.push_back(
            {truth.pos[i1][0] - truth.pos[i0][0], truth.pos[i1][1] - truth.pos[i0][1]});
    }
    out.truth = std::move(truth);
    return out;
}

// ---------------------------------------------------------------------------
// Kalman smoothing

namespace {

struct Mat2 {
    double a, b, c, d;  // row-major
    Mat2 operator*(const Mat2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
    }
    Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
    Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
    Mat2 T() const { return {a, c, b, d}; }
    Mat2 inv() const {
        const double det = a * d - b * c;
        return {d / det, -b / det, -c / det, a / det};
    }
};

struct Vec2 {
    double p, v;
};

struct AxisTrack {
    std::vector<Vec2> smoothed;
    std::vector<Mat2> cov;
    std::vector<double> disp_var;  // per interval
};

AxisTrack smooth_axis(const std::vector<double>& times, const std::vector<double>& z, double q, double r) {
    const size_t n = times.size();
    std::vector<Vec2> xf(n), xp(n);
    std::vector<Mat2> pf(n), pp(n);

    xf[0] = {z[0], 0.0};
    pf[0] = {r * r, 0, 0, 25.0};
    xp[0] = xf[0];
    pp[0] = pf[0];
    for (size_t k = 1; k < n; ++k) {
        const double dt = times[k] - times[k - 1];
        const Mat2 F{1, dt, 0, 1};
        const Mat2 Q{q * dt * dt * dt / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt};
        xp[k] = {xf[k - 1].p + dt * xf[k - 1].v, xf[k - 1].v};
        pp[k] = F * pf[k - 1] * F.T() + Q;

        const double S = pp[k].a + r * r;
        const double k0 = pp[k].a / S, k1 = pp[k].c / S;
        const double innov = z[k] - xp[k].p;
        xf[k] = {xp[k].p + k0 * innov, xp[k].v + k1 * innov};
        const Mat2 ikh{1 - k0, 0, -k1, 1};
        pf[k] = ikh * pp[k];
    }

    AxisTrack out;
    out.smoothed.resize(n);
    out.cov.resize(n);
    out.smoothed[n - 1] = xf[n - 1];
    out.cov[n - 1] = pf[n - 1];
    std::vector<Mat2> gains(n);
    for (size_t k = n - 1; k-- > 0;) {
        const double dt = times[k + 1] - times[k];
        const Mat2 F{1, dt, 0, 1};
        const Mat2 G = pf[k] * F.T() * pp[k + 1].inv();
        gains[k] = G;
        const Vec2 dx{out.smoothed[k + 1].p - xp[k + 1].p, out.smoothed[k + 1].v - xp[k + 1].v};
        out.smoothed[k] = {xf[k].p + G.a * dx.p + G.b * dx.v, xf[k].v + G.c * dx.p + G.d * dx.v};
        out.cov[k] = pf[k] + G * (out.cov[k + 1] - pp[k + 1]) * G.T();
    }

    out.disp_var.resize(n - 1);
    for (size_t k = 0; k + 1 < n; ++k) {
        const Mat2 cross = gains[k] * out.cov[k + 1];  // Cov(x_k, x_{k+1})
        const double var = out.cov[k + 1].a + out.cov[k].a - 2.0 * cross.a;
        out.disp_var[k] = std::max(var, 1e-6);
    }
    return out;
}

}  // namespace

SmoothedTrack kalman_smooth(const std::vector<double>& times,
                            const std::vector<std::array<double, 2>>& fixes, const KalmanConfig& config) {
    if (times.size() < 2) throw std::invalid_argument("kalman_smooth: needs at least 2 fixes");
    if (times.size() != fixes.size()) throw std::invalid_argument("kalman_smooth: time/fix count mismatch");
    for (size_t i = 1; i < times.size(); ++i)
        if (times[i] <= times[i - 1])
            throw std::invalid_argument("kalman_smooth: timestamps must be strictly increasing");

    std::vector<double> zx(times.size()), zy(times.size());
    for (size_t i = 0; i < fixes.size(); ++i) {
        zx[i] = fixes[i][0];
        zy[i] = fixes[i][1];
    }
    const AxisTrack ax = smooth_axis(times, zx, config.process_noise, config.measurement_std);
    const AxisTrack ay = smooth_axis(times, zy, config.process_noise, config.measurement_std);

    SmoothedTrack out;
    for (size_t i = 0; i < times.size(); ++i) {
        out.positions.push_back({ax.smoothed[i].p, ay.smoothed[i].p});
        out.pos_var.push_back({ax.cov[i].a, ay.cov[i].a});
    }
    for (size_t k = 0; k + 1 < times.size(); ++k) {
        GaussianTarget g;
        g.mean = {ax.smoothed[k + 1].p - ax.smoothed[k].p, ay.smoothed[k + 1].p - ay.smoothed[k].p};
        g.cov = {ax.disp_var[k], 0, 0, ay.disp_var[k]};
        g.validate();
        out.displacements.push_back(g);
    }
    // the zero-speed head interval is pinned exactly
    const double s0 = config.first_interval_std * config.first_interval_std;
    out.displacements.front().mean = {0.0, 0.0};
    out.displacements.front().cov = {s0, 0, 0, s0};
    return out;
}

Sample make_cartrack_sample(const SimulatedTrace& trace, int64_t target_len, int f,
                            const KalmanConfig& kalman) {
    Sample s;
    for (const auto& series : trace.sensors)
        s.sensors.push_back(preprocess_series_at(series, trace.gps_t, target_len, f));
    const SmoothedTrack st = kalman_smooth(trace.gps_t, trace.gps, kalman);
    s.displacement = st.displacements;
    if (static_cast<int64_t>(s.displacement.size()) != s.T())
        throw std::logic_error("make_cartrack_sample: interval count mismatch between tensors and targets");
    return s;
}

// ---------------------------------------------------------------------------
// HHAR CSV

const std::array<std::string, 6> kHharActivities = {"biking",        "sitting",        "standing",
                                                    "walking",       "climbStair-up",  "climbStair-down"};
const std::string kHharUsers = "abcdefghi";

namespace {

std::string normalize_token(std::string s) {
    std::string out;
    for (char c : s) {
        if (c == '_') c = '-';
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

int activity_index(const std::string& raw) {
    const std::string a = normalize_token(raw);
    if (a == "biking" || a == "bike") return 0;
    if (a == "sitting" || a == "sit") return 1;
    if (a == "standing" || a == "stand") return 2;
    if (a == "walking" || a == "walk") return 3;
    if (a == "climbstair-up" || a == "stairsup") return 4;
    if (a == "climbstair-down" || a == "stairsdown") return 5;
    return -1;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

const std::array<std::string, 10> kHharColumns = {"index", "arrival-time", "creation-time", "x", "y",
                                                  "z",     "user",         "model",         "device", "gt"};

}  // namespace

HharLoadResult load_hhar_csv(const std::string& path, HharSensor sensor) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_hhar_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("load_hhar_csv: empty file " + path);

    const auto header = split_csv_line(line);
    bool ok = header.size() == kHharColumns.size();
    for (size_t i = 0; ok && i < kHharColumns.size(); ++i)
        if (normalize_token(header[i]) != kHharColumns[i]) ok = false;
    if (!ok) {
        std::string expected;
        for (size_t i = 0; i < kHharColumns.size(); ++i) expected += (i ? "," : "") + kHharColumns[i];
        throw std::invalid_argument("load_hhar_csv: malformed header in " + path + "; expected columns: " +
                                    expected);
    }

    HharLoadResult out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != kHharColumns.size()) {
            out.dropped_rows += 1;
            continue;
        }
        try {
            HHARRecord r;
            r.sensor = sensor;
            double t = std::stod(f[2]);
            if (std::fabs(t) > 1e12) t /= 1e9;  // nanosecond clocks
            r.t = t;
            r.x = std::stod(f[3]);
            r.y = std::stod(f[4]);
            r.z = std::stod(f[5]);
            const std::string user = normalize_token(f[6]);
            const auto upos = user.size() == 1 ? kHharUsers.find(user[0]) : std::string::npos;
            const int act = activity_index(f[9]);
            if (upos == std::string::npos || act < 0) {
                out.dropped_rows += 1;
                continue;
            }
            r.user = static_cast<int>(upos);
            r.activity = act;
            r.device = f[8];
            out.records.push_back(std::move(r));
        } catch (const std::exception&) {
            out.dropped_rows += 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// sample assembly

MakeSamplesResult make_samples(const std::vector<HHARRecord>& records, double tau, double sample_len,
                               LabelBy label_by, int64_t target_len, int f) {
    if (tau <= 0 || sample_len < tau)
        throw std::invalid_argument("make_samples: require tau > 0 and sample_len >= tau");

    std::map<std::pair<int, std::string>, std::vector<const HHARRecord*>> groups;
    for (const auto& r : records) groups[{r.user, r.device}].push_back(&r);

    MakeSamplesResult out;
    const auto expected_T = static_cast<int64_t>(std::llround(sample_len / tau));

    for (auto& [key, rows] : groups) {
        std::sort(rows.begin(), rows.end(), [](const HHARRecord* a, const HHARRecord* b) {
            if (a->t != b->t) return a->t < b->t;
            if (a->sensor != b->sensor) return a->sensor < b->sensor;
            if (a->x != b->x) return a->x < b->x;
            if (a->y != b->y) return a->y < b->y;
            return a->z < b->z;
        });

        // activity runs
        size_t run_start = 0;
        while (run_start < rows.size()) {
            size_t run_end = run_start;
            while (run_end < rows.size() && rows[run_end]->activity == rows[run_start]->activity) ++run_end;

            const double t0 = rows[run_start]->t;
            const double t1 = rows[run_end - 1]->t;
            // a window is usable while its data covers all but the droppable
            // tail (< tau/2) of the final interval
            for (double ws = t0; ws + sample_len - tau / 2.0 <= t1 + 1e-9; ws += sample_len) {
                std::array<std::vector<const HHARRecord*>, 2> per_sensor;
                for (size_t i = run_start; i < run_end; ++i) {
                    const HHARRecord* r = rows[i];
                    if (r->t >= ws && r->t < ws + sample_len)
                        per_sensor[r->sensor == HharSensor::Accelerometer ? 0 : 1].push_back(r);
                }
                if (per_sensor[0].empty() || per_sensor[1].empty()) {
                    out.skipped_windows += 1;
                    continue;
                }
                Sample sample;
                bool good = true;
                for (int sidx = 0; sidx < 2 && good; ++sidx) {
                    const auto& sr = per_sensor[static_cast<size_t>(sidx)];
                    SensorSeries series;
                    series.sensor_id = sidx;
                    const auto m = static_cast<int64_t>(sr.size());
                    series.values = Tensor({3, m});
                    series.timestamps.resize(static_cast<size_t>(m));
                    for (int64_t i = 0; i < m; ++i) {
                        series.values[0 * m + i] = sr[static_cast<size_t>(i)]->x;
                        series.values[1 * m + i] = sr[static_cast<size_t>(i)]->y;
                        series.values[2 * m + i] = sr[static_cast<size_t>(i)]->z;
                        series.timestamps[static_cast<size_t>(i)] = sr[static_cast<size_t>(i)]->t;
                    }
                    try {
                        FreqTensor ft = preprocess_series(series, tau, target_len, f);
                        if (ft.T() != expected_T) {
                            good = false;  // sparse coverage produced a short tensor
                        } else {
                            sample.sensors.push_back(std::move(ft));
                        }
                    } catch (const std::invalid_argument&) {
                        good = false;  // too few samples in some interval
                    }
                }
                if (!good) {
                    out.skipped_windows += 1;
                    continue;
                }
                sample.label = label_by == LabelBy::Activity ? rows[run_start]->activity : key.first;
                sample.group = key.first;
                out.samples.push_back(std::move(sample));
            }
            run_start = run_end;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// splits

SplitResult split_leave_one_user_out(const std::vector<Sample>& samples, int64_t user) {
    if (user < 0 || user >= static_cast<int64_t>(kHharUsers.size()))
        throw std::invalid_argument("split: unknown user index " + std::to_string(user));
    SplitResult out;
    for (size_t i = 0; i < samples.size(); ++i)
        (samples[i].group == user ? out.test : out.train).push_back(i);
    return out;
}

SplitResult split_stratified_kfold(const std::vector<Sample>& samples, int k, int fold, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("split: k must be >= 2");
    if (fold < 0 || fold >= k)
        throw std::invalid_argument("split: fold " + std::to_string(fold) + " out of range for k = " +
                                    std::to_string(k));
    std::map<int64_t, std::vector<size_t>> by_label;
    for (size_t i = 0; i < samples.size(); ++i) by_label[samples[i].label].push_back(i);

    SplitResult out;
    std::mt19937_64 rng(seed);
    for (auto& [label, idx] : by_label) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t j = 0; j < idx.size(); ++j)
            (static_cast<int>(j % static_cast<size_t>(k)) == fold ? out.test : out.train).push_back(idx[j]);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

// ---------------------------------------------------------------------------
// synthetic two-class set

DeepSenseConfig synthetic_two_class_config() {
    DeepSenseConfig c;
    c.K = 2;
    c.d = {2, 2};
    c.f = 4;
    c.T = 4;
    c.tau = 0.25;
    c.task.kind = TaskKind::Classification;
    c.task.output_dim = 2;
    return c;
}

std::vector<Sample> synthetic_two_class_dataset(int n, uint64_t seed) {
    const DeepSenseConfig c = synthetic_two_class_config();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    std::vector<Sample> out;
    const int64_t m = 16;
    for (int i = 0; i < n; ++i) {
        const int64_t label = i % 2;
        Sample s;
        for (int64_t k = 0; k < c.K; ++k) {
            IntervalSet iv;
            const double ph = phase(rng);
            for (int64_t t = 0; t < c.T; ++t) {
                Window w;
                w.values = Tensor({2, m});
                w.times.resize(static_cast<size_t>(m));
                for (int64_t j = 0; j < m; ++j)
                    w.times[static_cast<size_t>(j)] =
                        static_cast<double>(t) * c.tau + static_cast<double>(j) * c.tau / static_cast<double>(m);
                const double freq = label == 0 ? 2.0 : 5.0;
                for (int64_t r = 0; r < 2; ++r)
                    for (int64_t j = 0; j < m; ++j)
                        w.values[r * m + j] = std::sin(2.0 * std::numbers::pi * freq *
                                                           static_cast<double>(j) / static_cast<double>(m) +
                                                       ph + static_cast<double>(r)) +
                                              noise(rng);
                w.width = c.tau;
                iv.windows.push_back(std::move(w));
            }
            s.sensors.push_back(assemble_tensor(iv, static_cast<int>(c.f), static_cast<int>(k)));
        }
        s.label = label;
        s.group = label;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// trace CSV

namespace {

void write_series_rows(std::ofstream& out, const char* name, const SensorSeries& s) {
    const int64_t n = s.samples();
    char buf[160];
    for (int64_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%s,%.10g,%.10g,%.10g\n", s.timestamps[static_cast<size_t>(i)],
                      name, s.values[0 * n + i], s.values[1 * n + i], s.values[2 * n + i]);
        out << buf;
    }
}

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open " + path);
    return in;
}

}  // namespace

void write_trace_csv(const SimulatedTrace& trace, const std::string& sensors_path,
                     const std::string& truth_path, const std::string& gps_path) {
    {
        std::ofstream out(sensors_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + sensors_path);
        out << "t,sensor,x,y,z\n";
        write_series_rows(out, "accel", trace.sensors.at(0));
        write_series_rows(out, "gyro", trace.sensors.at(1));
        write_series_rows(out, "mag", trace.sensors.at(2));
    }
    {
        // truth decimated to the interval boundaries
        std::ofstream out(truth_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + truth_path);
        out << "t,px,py,vx,vy\n";
        char buf[160];
        const double dt = trace.truth.t[1] - trace.truth.t[0];
        for (double bt : trace.truth.interval_bounds) {
            const auto i = static_cast<size_t>(
                std::min<int64_t>(static_cast<int64_t>(trace.truth.t.size()) - 1, std::llround(bt / dt)));
            std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%.10g\n", trace.truth.t[i],
                          trace.truth.pos[i][0], trace.truth.pos[i][1], trace.truth.vel[i][0],
                          trace.truth.vel[i][1]);
            out << buf;
        }
    }
    {
        std::ofstream out(gps_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + gps_path);
        out << "t,x,y\n";
        char buf[120];
        for (size_t i = 0; i < trace.gps_t.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", trace.gps_t[i], trace.gps[i][0],
                          trace.gps[i][1]);
            out << buf;
        }
    }
}

SimulatedTrace read_trace_csv(const std::string& sensors_path, const std::string& truth_path,
                              const std::string& gps_path) {
    SimulatedTrace trace;
    {
        auto in = open_or_throw(sensors_path);
        std::string line;
        std::getline(in, line);
        if (normalize_token(line) != "t,sensor,x,y,z")
            throw std::invalid_argument(sensors_path + ": expected header t,sensor,x,y,z");
        std::map<std::string, std::vector<std::array<double, 4>>> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 5) throw std::invalid_argument(sensors_path + ": malformed row: " + line);
            rows[f[1]].push_back({std::stod(f[0]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
        }
        int id = 0;
        for (const char* name : {"accel", "gyro", "mag"}) {
            const auto it = rows.find(name);
            if (it == rows.end()) throw std::invalid_argument(sensors_path + ": missing sensor " + name);
            const auto& rs = it->second;
            SensorSeries s;
            s.sensor_id = id++;
            const auto n = static_cast<int64_t>(rs.size());
            s.values = Tensor({3, n});
            s.timestamps.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                s.timestamps[static_cast<size_t>(i)] = rs[static_cast<size_t>(i)][0];
                s.values[0 * n + i] = rs[static_cast<size_t>(i)][1];
                s.values[1 * n + i] = rs[static_cast<size_t>(i)][2];
                s.values[2 * n + i] = rs[static_cast<size_t>(i)][3];
            }
            trace.sensors.push_back(std::move(s));
        }
    }
    {
        auto in = open_or_throw(truth_path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 5) throw std::invalid_argument(truth_path + ": malformed row: " + line);
            trace.truth.t.push_back(std::stod(f[0]));
            trace.truth.pos.push_back({std::stod(f[1]), std::stod(f[2])});
            trace.truth.vel.push_back({std::stod(f[3]), std::stod(f[4])});
        }
    }
    {
        auto in = open_or_throw(gps_path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 3) throw std::invalid_argument(gps_path + ": malformed row: " + line);
            trace.gps_t.push_back(std::stod(f[0]));
            trace.gps.push_back({std::stod(f[1]), std::stod(f[2])});
        }
    }
    trace.truth.interval_bounds = trace.gps_t;
    for (size_t b = 0; b + 1 < trace.truth.pos.size(); ++b)
        trace.truth.interval_displacement.push_back(
            {trace.truth.pos[b + 1][0] - trace.truth.pos[b][0],
             trace.truth.pos[b + 1][1] - trace.truth.pos[b][1]});
    return trace;
}

}  // namespace deepsense
