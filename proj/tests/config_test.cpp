#include "deepsense/run_config.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "deepsense/data.hpp"

using namespace deepsense;

TEST(RunConfig, DefaultsPerTask) {
    const auto hhar = RunConfig::defaults("hhar");
    EXPECT_EQ(hhar.get("model.k"), "2");
    EXPECT_EQ(hhar.get("model.output_dim"), "6");
    EXPECT_EQ(hhar.get("model.task"), "classification");

    const auto ct = RunConfig::defaults("cartrack");
    EXPECT_EQ(ct.get("model.k"), "3");
    EXPECT_EQ(ct.get("model.task"), "regression");
    EXPECT_EQ(ct.get_i64("model.output_dim"), 2);

    EXPECT_THROW(RunConfig::defaults("bogus"), std::invalid_argument);
}

TEST(RunConfig, PrecedenceFlagsOverFileOverDefaults) {
    const std::string path = "runconfig_test.cfg";
    {
        std::ofstream f(path, std::ios::trunc);
        f << "loss.lambda=2\n";
        f << "run.epochs=7\n";
    }
    const auto rc = RunConfig::resolve("synth2", path, {"loss.lambda=3"});
    EXPECT_EQ(rc.get_f64("loss.lambda"), 3.0);  // flag beats file
    EXPECT_EQ(rc.get_i64("run.epochs"), 7);     // file beats default
    EXPECT_EQ(rc.get("opt.lr"), "0.001");       // default survives
    std::remove(path.c_str());
}

TEST(RunConfig, EnvSeedIsLowestPrecedenceSource) {
    setenv("DEEPSENSE_SEED", "99", 1);
    const auto env_only = RunConfig::resolve("synth2", "", {});
    EXPECT_EQ(env_only.get_i64("run.seed"), 99);
    const auto flag = RunConfig::resolve("synth2", "", {"run.seed=5"});
    EXPECT_EQ(flag.get_i64("run.seed"), 5);
    unsetenv("DEEPSENSE_SEED");
}

TEST(RunConfig, RoundTripIsFixedPoint) {
    const auto rc = RunConfig::resolve("cartrack", "", {"model.f=10", "opt.lr=0.01"});
    const std::string text = rc.canonical_text();
    const auto back = RunConfig::from_text(text);
    EXPECT_EQ(back.canonical_text(), text);
}

TEST(RunConfig, UnknownKeyNamed) {
    try {
        RunConfig::resolve("synth2", "", {"model.bogus=1"});
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("model.bogus"), std::string::npos);
    }
}

TEST(RunConfig, ContradictoryTaskHeadRejected) {
    EXPECT_THROW(RunConfig::resolve("hhar", "", {"model.task=regression"}), std::invalid_argument);
    EXPECT_THROW(RunConfig::resolve("cartrack", "", {"loss.kind=xent"}), std::invalid_argument);
}

TEST(RunConfig, TypedAccessorsNameOffendingKey) {
    const auto rc = RunConfig::resolve("synth2", "", {"run.epochs=ten"});
    try {
        rc.get_i64("run.epochs");
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("run.epochs"), std::string::npos);
    }
}

TEST(Samples, BinaryRoundTrip) {
    auto samples = synthetic_two_class_dataset(4, 3);
    samples[0].displacement.push_back({{1.0, -2.0}, {1.0, 0.1, 0.1, 2.0}});
    const std::string path = "samples_roundtrip_test.bin";
    save_samples(samples, path);
    const auto back = load_samples(path);
    ASSERT_EQ(back.size(), samples.size());
    EXPECT_EQ(back[0].label, samples[0].label);
    EXPECT_EQ(back[0].group, samples[0].group);
    EXPECT_EQ(back[0].sensors[1].data.vec(), samples[0].sensors[1].data.vec());
    EXPECT_EQ(back[0].sensors[1].widths, samples[0].sensors[1].widths);
    ASSERT_EQ(back[0].displacement.size(), 1u);
    EXPECT_EQ(back[0].displacement[0].mean[1], -2.0);
    std::remove(path.c_str());
}

TEST(Samples, CorruptionDetected) {
    const auto samples = synthetic_two_class_dataset(2, 5);
    const std::string path = "samples_corrupt_test.bin";
    save_samples(samples, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        const char junk = 0x11;
        f.write(&junk, 1);
    }
    EXPECT_THROW(load_samples(path), std::runtime_error);
    std::remove(path.c_str());
}
