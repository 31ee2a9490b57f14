#include "deepsense/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace deepsense;

namespace {

double path_length(const KinematicTrace& t) {
    double len = 0;
    for (size_t i = 1; i < t.pos.size(); ++i)
        len += std::hypot(t.pos[i][0] - t.pos[i - 1][0], t.pos[i][1] - t.pos[i - 1][1]);
    return len;
}

}  // namespace

TEST(Simulator, SeededRunsIdentical) {
    SyntheticIMUConfig cfg;
    cfg.seed = 12;
    const auto a = simulate_trace(cfg, 30.0);
    const auto b = simulate_trace(cfg, 30.0);
    EXPECT_EQ(a.truth.pos.back(), b.truth.pos.back());
    EXPECT_EQ(a.sensors[0].values.vec(), b.sensors[0].values.vec());
    EXPECT_EQ(a.gps, b.gps);
    cfg.seed = 13;
    const auto c = simulate_trace(cfg, 30.0);
    EXPECT_NE(a.sensors[0].values.vec(), c.sensors[0].values.vec());
}

TEST(Simulator, ZeroSpeedEndpointsWithGpsConfirmation) {
    SyntheticIMUConfig cfg;
    cfg.seed = 3;
    const auto tr = simulate_trace(cfg, 70.0);
    EXPECT_LT(std::hypot(tr.truth.vel.front()[0], tr.truth.vel.front()[1]), 1e-3);
    EXPECT_LT(std::hypot(tr.truth.vel.back()[0], tr.truth.vel.back()[1]), 1e-3);
    // at least three consecutive zero-displacement GPS gaps at both ends
    const auto& d = tr.truth.interval_displacement;
    ASSERT_GE(d.size(), 6u);
    for (size_t i = 0; i < 3; ++i) {
        EXPECT_LT(std::hypot(d[i][0], d[i][1]), 0.02) << "head interval " << i;
        EXPECT_LT(std::hypot(d[d.size() - 1 - i][0], d[d.size() - 1 - i][1]), 0.02)
            << "tail interval " << i;
    }
}

TEST(Simulator, AccelerationDoubleIntegralMatchesDisplacement) {
    SyntheticIMUConfig cfg;
    cfg.seed = 9;
    const auto tr = simulate_trace(cfg, 60.0);
    const double dt = tr.truth.t[1] - tr.truth.t[0];
    std::array<double, 2> v{0, 0}, p{tr.truth.pos[0][0], tr.truth.pos[0][1]};
    for (size_t i = 1; i < tr.truth.t.size(); ++i) {
        for (int a = 0; a < 2; ++a) {
            const double vn = v[static_cast<size_t>(a)] +
                              0.5 * (tr.truth.acc[i - 1][static_cast<size_t>(a)] +
                                     tr.truth.acc[i][static_cast<size_t>(a)]) * dt;
            p[static_cast<size_t>(a)] += 0.5 * (v[static_cast<size_t>(a)] + vn) * dt;
            v[static_cast<size_t>(a)] = vn;
        }
    }
    EXPECT_LT(std::hypot(p[0] - tr.truth.pos.back()[0], p[1] - tr.truth.pos.back()[1]), 1e-3);
}

TEST(Simulator, NoiselessAccelerometerRecoversTrajectory) {
    SyntheticIMUConfig cfg;
    cfg.seed = 5;
    cfg.accel_noise_std = cfg.accel_bias_std = cfg.accel_bias_walk = 0;
    cfg.gyro_noise_std = cfg.gyro_bias_std = cfg.gyro_bias_walk = 0;
    cfg.mag_noise_std = 0;
    cfg.gps_noise_std = 0;
    cfg.vib_base = cfg.vib_per_speed = cfg.idle_vib = 0;
    const auto tr = simulate_trace(cfg, 60.0);

    const auto& acc = tr.sensors[0];
    const int64_t n = acc.samples();
    const double dt = acc.timestamps[1] - acc.timestamps[0];
    std::array<double, 2> v{0, 0}, p{tr.truth.pos[0][0], tr.truth.pos[0][1]};
    std::array<double, 2> aw_prev{0, 0};
    for (int64_t i = 1; i < n; ++i) {
        const double th = tr.truth.heading[static_cast<size_t>(i)];
        const double ax = acc.values[0 * n + i], ay = acc.values[1 * n + i];
        const std::array<double, 2> aw{std::cos(th) * ax - std::sin(th) * ay,
                                       std::sin(th) * ax + std::cos(th) * ay};
        for (int a = 0; a < 2; ++a) {
            const double vn = v[static_cast<size_t>(a)] +
                              0.5 * (aw_prev[static_cast<size_t>(a)] + aw[static_cast<size_t>(a)]) * dt;
            p[static_cast<size_t>(a)] += 0.5 * (v[static_cast<size_t>(a)] + vn) * dt;
            v[static_cast<size_t>(a)] = vn;
        }
        aw_prev = aw;
    }
    const double len = path_length(tr.truth);
    ASSERT_GT(len, 50.0);
    EXPECT_LT(std::hypot(p[0] - tr.truth.pos.back()[0], p[1] - tr.truth.pos.back()[1]), 0.001 * len);
}

TEST(Simulator, StationaryTraceHasZeroDisplacements) {
    SyntheticIMUConfig cfg;
    cfg.seed = 7;
    cfg.stationary = true;
    const auto tr = simulate_trace(cfg, 20.0);
    for (const auto& d : tr.truth.interval_displacement) EXPECT_EQ(std::hypot(d[0], d[1]), 0.0);
    EXPECT_EQ(path_length(tr.truth), 0.0);
}

TEST(Simulator, DurationBoundsRejected) {
    SyntheticIMUConfig cfg;
    EXPECT_THROW(simulate_trace(cfg, 5.0), std::invalid_argument);
}

TEST(Kalman, NoiselessStraightLineIsFixedPoint) {
    std::vector<double> t;
    std::vector<std::array<double, 2>> fixes;
    for (int i = 0; i <= 30; ++i) {
        t.push_back(i);
        fixes.push_back({3.0 * i, -1.5 * i});
    }
    KalmanConfig kc;
    kc.measurement_std = 1e-6;
    const auto st = kalman_smooth(t, fixes, kc);
    ASSERT_EQ(st.displacements.size(), 30u);
    for (size_t k = 1; k < st.displacements.size(); ++k) {
        EXPECT_NEAR(st.displacements[k].mean[0], 3.0, 1e-9);
        EXPECT_NEAR(st.displacements[k].mean[1], -1.5, 1e-9);
    }
}

TEST(Kalman, SmootherBeatsRawFixesOverManySeeds) {
    // 100 seeded constant-velocity-ish tracks with 5 m GPS noise
    double raw_err = 0, smooth_err = 0;
    int64_t count = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, 5.0);
        std::uniform_real_distribution<double> u(-8, 8);
        const double vx = u(rng), vy = u(rng);
        std::vector<double> t;
        std::vector<std::array<double, 2>> truth, fixes;
        for (int i = 0; i <= 60; ++i) {
            t.push_back(i);
            truth.push_back({vx * i, vy * i});
            fixes.push_back({truth.back()[0] + g(rng), truth.back()[1] + g(rng)});
        }
        KalmanConfig kc;
        kc.measurement_std = 5.0;
        const auto st = kalman_smooth(t, fixes, kc);
        for (size_t i = 0; i < t.size(); ++i) {
            raw_err += std::hypot(fixes[i][0] - truth[i][0], fixes[i][1] - truth[i][1]);
            smooth_err += std::hypot(st.positions[i][0] - truth[i][0], st.positions[i][1] - truth[i][1]);
            ++count;
        }
        for (const auto& d : st.displacements) EXPECT_NO_THROW(d.validate());
    }
    EXPECT_LT(smooth_err / count, raw_err / count);
}

TEST(Kalman, CovarianceNeverWorseThanRawDifference) {
    SyntheticIMUConfig cfg;
    cfg.seed = 21;
    const auto tr = simulate_trace(cfg, 60.0);
    KalmanConfig kc;
    const auto st = kalman_smooth(tr.gps_t, tr.gps, kc);
    const double raw_trace = 2.0 * 2.0 * kc.measurement_std * kc.measurement_std;
    for (size_t k = 1; k < st.displacements.size(); ++k) {
        const auto& c = st.displacements[k].cov;
        EXPECT_LE(c[0] + c[3], raw_trace) << "interval " << k;
    }
}

TEST(Kalman, BadInputsRejected) {
    KalmanConfig kc;
    EXPECT_THROW(kalman_smooth({0.0}, {{0, 0}}, kc), std::invalid_argument);
    EXPECT_THROW(kalman_smooth({0.0, 0.0}, {{0, 0}, {1, 1}}, kc), std::invalid_argument);
}

TEST(CarTrackSample, TensorsAlignWithTargets) {
    SyntheticIMUConfig cfg;
    cfg.seed = 31;
    const auto tr = simulate_trace(cfg, 40.0);
    const Sample s = make_cartrack_sample(tr, 64, 8, KalmanConfig{});
    ASSERT_EQ(s.sensors.size(), 3u);
    EXPECT_EQ(s.sensors[0].data.dim(0), 3);
    EXPECT_EQ(s.sensors[0].data.dim(1), 16);
    EXPECT_EQ(s.T(), static_cast<int64_t>(tr.gps_t.size()) - 1);
    EXPECT_EQ(static_cast<int64_t>(s.displacement.size()), s.T());
    EXPECT_EQ(s.displacement[0].mean[0], 0.0);
}

// ---------------------------------------------------------------------------

namespace {

void write_hhar_fixture(const std::string& path, int rows, double rate_hz, const std::string& activity,
                        const std::string& user = "a") {
    std::ofstream out(path, std::ios::trunc);
    out << "Index,Arrival_Time,Creation_Time,x,y,z,User,Model,Device,gt\n";
    const long long epoch_ns = 1424696633908046000LL;  // epoch-nanosecond clock
    for (int i = 0; i < rows; ++i) {
        const double t = i / rate_hz;
        out << i << "," << static_cast<long long>(t * 1e3) << ","
            << epoch_ns + static_cast<long long>(t * 1e9) << "," << 0.1 * i << "," << std::sin(0.5 * i)
            << ",9.8," << user << ",nexus4,nexus4_1," << activity << "\n";
    }
}

}  // namespace

TEST(HharCsv, WellFormedFileRoundTrips) {
    const std::string path = "hhar_fixture_ok.csv";
    write_hhar_fixture(path, 100, 100.0, "stand");
    const auto res = load_hhar_csv(path, HharSensor::Gyroscope);
    EXPECT_EQ(res.records.size(), 100u);
    EXPECT_EQ(res.dropped_rows, 0);
    EXPECT_EQ(res.records[0].user, 0);
    EXPECT_EQ(res.records[0].activity, 2);  // standing
    EXPECT_EQ(res.records[0].sensor, HharSensor::Gyroscope);
    EXPECT_NEAR(res.records[99].t - res.records[0].t, 0.99, 1e-6);
    EXPECT_NEAR(res.records[42].x, 4.2, 1e-9);
    std::remove(path.c_str());
}

TEST(HharCsv, UnknownActivityDroppedAndCounted) {
    const std::string path = "hhar_fixture_mixed.csv";
    {
        std::ofstream out(path, std::ios::trunc);
        out << "Index,Arrival_Time,Creation_Time,x,y,z,User,Model,Device,gt\n";
        out << "0,0,0,1,2,3,a,m,d,walk\n";
        out << "1,1,1000000,1,2,3,a,m,d,flying\n";   // unknown activity
        out << "2,2,2000000,1,2,3,z,m,d,walk\n";     // unknown user
        out << "3,3,3000000,1,2,a,m,d,walk\n";       // missing field
        out << "4,4,4000000,1,2,3,a,m,d,bike\n";
    }
    const auto res = load_hhar_csv(path, HharSensor::Accelerometer);
    EXPECT_EQ(res.records.size(), 2u);
    EXPECT_EQ(res.dropped_rows, 3);
    std::remove(path.c_str());
}

TEST(HharCsv, EmptyDataSectionIsEmptyResult) {
    const std::string path = "hhar_fixture_empty.csv";
    {
        std::ofstream out(path, std::ios::trunc);
        out << "index,arrival-time,creation-time,x,y,z,user,model,device,gt\n";
    }
    const auto res = load_hhar_csv(path, HharSensor::Accelerometer);
    EXPECT_TRUE(res.records.empty());
    EXPECT_EQ(res.dropped_rows, 0);
    std::remove(path.c_str());
}

TEST(HharCsv, MalformedHeaderListsExpectedColumns) {
    const std::string path = "hhar_fixture_badhdr.csv";
    {
        std::ofstream out(path, std::ios::trunc);
        out << "time,x,y,z\n";
    }
    try {
        load_hhar_csv(path, HharSensor::Accelerometer);
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("creation-time"), std::string::npos);
    }
    std::remove(path.c_str());
}

namespace {

std::vector<HHARRecord> synthetic_records(double seconds, double rate, int user, int activity,
                                          const std::string& device, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.3);
    std::vector<HHARRecord> out;
    const auto n = static_cast<int64_t>(seconds * rate);
    for (int sensor = 0; sensor < 2; ++sensor)
        for (int64_t i = 0; i < n; ++i) {
            HHARRecord r;
            r.user = user;
            r.device = device;
            r.activity = activity;
            r.sensor = sensor == 0 ? HharSensor::Accelerometer : HharSensor::Gyroscope;
            r.t = static_cast<double>(i) / rate;
            r.x = std::sin(2.0 * (sensor + 1) * r.t) + g(rng);
            r.y = std::cos(3.0 * r.t) + g(rng);
            r.z = 9.8 + g(rng);
            out.push_back(r);
        }
    return out;
}

}  // namespace

TEST(MakeSamples, FiftySecondsGiveTenSamplesOfTwenty) {
    const auto recs = synthetic_records(50.0, 100.0, 0, 3, "dev1", 1);
    const auto res = make_samples(recs, 0.25, 5.0, LabelBy::Activity);
    EXPECT_EQ(res.samples.size(), 10u);
    for (const auto& s : res.samples) {
        ASSERT_EQ(s.sensors.size(), 2u);
        EXPECT_EQ(s.sensors[0].data.shape(), (std::vector<int64_t>{3, 20, 20}));
        EXPECT_EQ(s.sensors[1].data.shape(), (std::vector<int64_t>{3, 20, 20}));
        EXPECT_EQ(s.label, 3);
        EXPECT_EQ(s.group, 0);
        EXPECT_EQ(s.T(), 20);
    }
}

TEST(MakeSamples, ShuffledInputGivesIdenticalSamples) {
    auto recs = synthetic_records(20.0, 100.0, 2, 1, "dev2", 5);
    const auto base = make_samples(recs, 0.25, 5.0, LabelBy::User);
    std::mt19937_64 rng(99);
    std::shuffle(recs.begin(), recs.end(), rng);
    const auto shuffled = make_samples(recs, 0.25, 5.0, LabelBy::User);
    ASSERT_EQ(base.samples.size(), shuffled.samples.size());
    for (size_t i = 0; i < base.samples.size(); ++i) {
        EXPECT_EQ(base.samples[i].sensors[0].data.vec(), shuffled.samples[i].sensors[0].data.vec());
        EXPECT_EQ(base.samples[i].label, 2);  // user label
    }
}

TEST(MakeSamples, WindowMissingOneSensorSkippedAndCounted) {
    auto recs = synthetic_records(10.0, 100.0, 1, 0, "dev3", 7);
    // strip the gyroscope from the second 5-second window
    recs.erase(std::remove_if(recs.begin(), recs.end(),
                              [](const HHARRecord& r) {
                                  return r.sensor == HharSensor::Gyroscope && r.t >= 5.0;
                              }),
               recs.end());
    const auto res = make_samples(recs, 0.25, 5.0, LabelBy::Activity);
    EXPECT_EQ(res.samples.size(), 1u);
    EXPECT_EQ(res.skipped_windows, 1);
}

TEST(MakeSamples, ActivityChangeSplitsRuns) {
    auto a = synthetic_records(10.0, 100.0, 0, 0, "dev", 1);
    auto b = synthetic_records(10.0, 100.0, 0, 4, "dev", 2);
    for (auto& r : b) r.t += 10.0;
    a.insert(a.end(), b.begin(), b.end());
    const auto res = make_samples(a, 0.25, 5.0, LabelBy::Activity);
    EXPECT_EQ(res.samples.size(), 4u);
    int act0 = 0, act4 = 0;
    for (const auto& s : res.samples) (s.label == 0 ? act0 : act4) += 1;
    EXPECT_EQ(act0, 2);
    EXPECT_EQ(act4, 2);
}

TEST(Split, LeaveOneUserOut) {
    std::vector<Sample> samples(12);
    for (size_t i = 0; i < samples.size(); ++i) {
        samples[i].group = static_cast<int64_t>(i % 3);
        samples[i].label = static_cast<int64_t>(i % 2);
    }
    const auto sp = split_leave_one_user_out(samples, 1);
    EXPECT_EQ(sp.test.size(), 4u);
    EXPECT_EQ(sp.train.size(), 8u);
    for (size_t i : sp.test) EXPECT_EQ(samples[i].group, 1);
    for (size_t i : sp.train) EXPECT_NE(samples[i].group, 1);
    EXPECT_THROW(split_leave_one_user_out(samples, 42), std::invalid_argument);
}

TEST(Split, StratifiedKfoldPartitionLaws) {
    std::vector<Sample> samples(103);
    for (size_t i = 0; i < samples.size(); ++i) samples[i].label = static_cast<int64_t>(i % 6);

    std::vector<int> seen(samples.size(), 0);
    for (int fold = 0; fold < 10; ++fold) {
        const auto sp = split_stratified_kfold(samples, 10, fold, 7);
        EXPECT_EQ(sp.train.size() + sp.test.size(), samples.size());
        for (size_t i : sp.test) seen[i] += 1;
        // stratification: per-label counts in the test fold differ by <= 1
        // from the expected share
        std::array<int64_t, 6> counts{};
        for (size_t i : sp.test) counts[static_cast<size_t>(samples[i].label)] += 1;
        for (int64_t l = 0; l < 6; ++l) {
            int64_t total = 0;
            for (size_t i = 0; i < samples.size(); ++i)
                if (samples[i].label == l) ++total;
            const double expect = static_cast<double>(total) / 10.0;
            EXPECT_LE(std::fabs(counts[static_cast<size_t>(l)] - expect), 1.0);
        }
    }
    for (int s : seen) EXPECT_EQ(s, 1) << "folds must partition the set";
    EXPECT_THROW(split_stratified_kfold(samples, 10, 10, 7), std::invalid_argument);
}

TEST(SyntheticTwoClass, DeterministicAndShaped) {
    const auto a = synthetic_two_class_dataset(6, 11);
    const auto b = synthetic_two_class_dataset(6, 11);
    ASSERT_EQ(a.size(), 6u);
    EXPECT_EQ(a[0].sensors[0].data.vec(), b[0].sensors[0].data.vec());
    EXPECT_EQ(a[3].label, 1);
    const auto c = synthetic_two_class_config();
    EXPECT_EQ(a[0].sensors[0].data.shape(),
              (std::vector<int64_t>{2, 2 * c.f, c.T}));
}

TEST(TraceCsv, RoundTripPreservesPipelineInputs) {
    SyntheticIMUConfig cfg;
    cfg.seed = 17;
    const auto tr = simulate_trace(cfg, 30.0);
    const std::string s = "trace_test_sensors.csv", t = "trace_test_truth.csv", g = "trace_test_gps.csv";
    write_trace_csv(tr, s, t, g);
    const auto rt = read_trace_csv(s, t, g);

    const Sample sa = make_cartrack_sample(tr, 64, 8, KalmanConfig{});
    const Sample sb = make_cartrack_sample(rt, 64, 8, KalmanConfig{});
    ASSERT_EQ(sa.T(), sb.T());
    for (size_t k = 0; k < 3; ++k) {
        const auto& va = sa.sensors[k].data.vec();
        const auto& vb = sb.sensors[k].data.vec();
        ASSERT_EQ(va.size(), vb.size());
        for (size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(va[i], vb[i], 1e-6) << "sensor " << k;
    }
    // truth endpoints survive
    EXPECT_NEAR(rt.truth.pos.back()[0], tr.truth.pos[static_cast<size_t>(
                    std::llround(tr.gps_t.back() * 100))][0], 1e-6);
    for (const auto& f : {s, t, g}) std::remove(f.c_str());
}
