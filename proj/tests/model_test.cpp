#include "deepsense/model.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace deepsense;
using deepsense::test::random_tensor;

namespace {

DeepSenseConfig micro_config(Variant v = Variant::Full, TaskKind task = TaskKind::Classification) {
    DeepSenseConfig c;
    c.K = 2;
    c.d = {2, 2};
    c.f = 4;
    c.T = 3;
    c.tau = 0.25;
    c.n_filters = 8;
    c.gru_hidden = 16;
    c.variant = v;
    c.task.kind = task;
    c.task.output_dim = task == TaskKind::Regression ? 2 : 3;
    return c;
}

DeepSenseConfig hhar_config() {
    DeepSenseConfig c;  // defaults are the HHAR configuration
    c.task.kind = TaskKind::Classification;
    c.task.output_dim = 6;
    return c;
}

ModelInput random_input(const DeepSenseConfig& c, int64_t B, uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelInput in;
    for (int64_t k = 0; k < c.K; ++k)
        in.sensors.push_back(random_tensor({B, c.d[static_cast<size_t>(k)], 2 * c.f, c.T}, rng));
    in.widths = Tensor::full({B, c.T}, c.tau);
    return in;
}

std::vector<double> flatten_params(const DeepSenseModel& m) {
    std::vector<double> all;
    m.visit_params([&](const std::string&, const Tensor& t) {
        all.insert(all.end(), t.vec().begin(), t.vec().end());
    });
    return all;
}

}  // namespace

TEST(Build, SameSeedBitIdentical) {
    const auto c = micro_config();
    const auto a = build(c, 7);
    const auto b = build(c, 7);
    EXPECT_EQ(flatten_params(a), flatten_params(b));
    const auto other = build(c, 8);
    EXPECT_NE(flatten_params(a), flatten_params(other));
}

TEST(Build, HharConfigurationBuilds) {
    const auto m = build(hhar_config(), 1);
    EXPECT_EQ(m.individual.size(), 2u);
    ASSERT_TRUE(m.merge.has_value());
    EXPECT_EQ(m.merge->input_height(), 2);
    EXPECT_EQ(m.gru.layers.size(), 2u);
}

TEST(Build, SingleGruParameterParity) {
    auto c = hhar_config();
    const int64_t full = count_params(c);
    c.variant = Variant::SingleGRU;
    const int64_t single = count_params(c);
    EXPECT_LT(std::llabs(single - full) * 20, full) << "full " << full << " single " << single;
    // micro scale too
    auto mc = micro_config();
    const int64_t mfull = count_params(mc);
    mc.variant = Variant::SingleGRU;
    EXPECT_LT(std::llabs(count_params(mc) - mfull) * 20, mfull);
}

TEST(Build, CountFormulaMatchesBuiltModel) {
    for (Variant v : {Variant::Full, Variant::SingleGRU, Variant::NoIndvConv, Variant::NoMergeConv}) {
        for (TaskKind t : {TaskKind::Classification, TaskKind::Regression}) {
            const auto c = micro_config(v, t);
            const auto m = build(c, 3);
            EXPECT_EQ(count_params(c), count_params(m)) << to_string(v) << "/" << to_string(t);
        }
    }
}

TEST(Build, CountArithmeticExamples) {
    const auto m = build(hhar_config(), 1);
    int64_t conv1 = 0, head = 0;
    m.visit_params([&](const std::string& name, const Tensor& t) {
        if (name == "indv0.conv1.w" || name == "indv0.conv1.b") conv1 += t.numel();
        if (name == "head.w" || name == "head.b") head += t.numel();
    });
    EXPECT_EQ(conv1, 640);     // (64,1,3,3) filters + 64 biases
    EXPECT_EQ(head, 64 * 6 + 6);
    // a 10 -> 3 dense layer with bias counts 33
    auto c = micro_config();
    c.gru_hidden = 10;
    c.task.output_dim = 3;
    const auto m2 = build(c, 1);
    int64_t h2 = 0;
    m2.visit_params([&](const std::string& name, const Tensor& t) {
        if (name.rfind("head.", 0) == 0) h2 += t.numel();
    });
    EXPECT_EQ(h2, 33);
}

TEST(Build, InfeasibleShapeChainNamesLayer) {
    auto c = micro_config();
    c.f = 3;  // 2f = 6 < cov1+cov2+cov3-2 = 7
    try {
        build(c, 1);
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("individual subnet"), std::string::npos);
    }
}

TEST(Forward, AllVariantsBothHeads) {
    for (Variant v : {Variant::Full, Variant::SingleGRU, Variant::NoIndvConv, Variant::NoMergeConv}) {
        for (TaskKind t : {TaskKind::Classification, TaskKind::Regression}) {
            const auto c = micro_config(v, t);
            auto m = build(c, 11);
            Graph g;
            ParamBinder bind(g);
            std::mt19937_64 rng(0);
            auto r = forward(m, g, bind, random_input(c, 4, 5), true, rng);
            ASSERT_EQ(r.interval_features.size(), 3u);
            if (t == TaskKind::Classification) {
                ASSERT_NE(r.probs, nullptr);
                EXPECT_TRUE(r.probs->value.all_finite());
            } else {
                ASSERT_EQ(r.interval_outputs.size(), 3u);
                EXPECT_EQ(r.interval_outputs[0]->value.shape(), (std::vector<int64_t>{4, 2}));
            }
        }
    }
}

TEST(Forward, ClassificationOutputsProbabilitySimplex) {
    const auto c = micro_config();
    auto m = build(c, 13);
    Graph g;
    ParamBinder bind(g);
    std::mt19937_64 rng(0);
    auto r = forward(m, g, bind, random_input(c, 5, 17), false, rng);
    for (int64_t i = 0; i < 5; ++i) {
        double s = 0;
        for (int64_t j = 0; j < 3; ++j) {
            const double p = r.probs->value[i * 3 + j];
            EXPECT_GE(p, 0.0);
            s += p;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Forward, NoIndvConvStacksMeasurementAxis) {
    auto c = micro_config(Variant::NoIndvConv);
    c.d = {3, 3};
    auto m = build(c, 19);
    ASSERT_TRUE(m.merge.has_value());
    EXPECT_EQ(m.merge->input_height(), 6);
    Graph g;
    ParamBinder bind(g);
    std::mt19937_64 rng(0);
    auto r = forward(m, g, bind, random_input(c, 2, 23), false, rng);
    EXPECT_TRUE(r.probs->value.all_finite());
}

TEST(Forward, KMismatchRejected) {
    const auto c = micro_config();
    auto m = build(c, 29);
    auto in = random_input(c, 2, 3);
    in.sensors.pop_back();
    Graph g;
    ParamBinder bind(g);
    std::mt19937_64 rng(0);
    EXPECT_THROW(forward(m, g, bind, in, false, rng), std::invalid_argument);
}

TEST(Forward, RegressionOutputsAreCausal) {
    const auto c = micro_config(Variant::Full, TaskKind::Regression);
    auto m = build(c, 31);
    auto in = random_input(c, 2, 37);
    auto in2 = in;
    // perturb only the final interval of every sensor
    for (auto& s : in2.sensors) {
        const int64_t T = s.dim(3);
        for (int64_t i = 0; i < s.numel() / T; ++i) s[i * T + (T - 1)] += 0.5;
    }
    auto run = [&](const ModelInput& input) {
        auto model = build(c, 31);
        Graph g;
        ParamBinder bind(g);
        std::mt19937_64 rng(0);
        auto r = forward(model, g, bind, input, false, rng);
        std::vector<std::vector<double>> outs;
        for (Node* o : r.interval_outputs) outs.push_back(o->value.vec());
        return outs;
    };
    const auto a = run(in);
    const auto b = run(in2);
    EXPECT_EQ(a[0], b[0]);
    EXPECT_EQ(a[1], b[1]);
    EXPECT_NE(a[2], b[2]);
}

TEST(Forward, RegressionDictionarySharedAcrossIntervals) {
    const auto c = micro_config(Variant::Full, TaskKind::Regression);
    auto m = build(c, 41);
    std::mt19937_64 rng(43);
    const Tensor feat = random_tensor({16}, rng);
    const Tensor y1 = apply_output_head(m, feat);
    const Tensor y2 = apply_output_head(m, feat);
    EXPECT_EQ(y1.vec(), y2.vec());

    // linearity in the injected feature vector
    Tensor scaled = feat;
    for (auto& v : scaled.vec()) v *= 2.5;
    const Tensor ys = apply_output_head(m, scaled);
    for (int64_t j = 0; j < 2; ++j)
        EXPECT_NEAR(ys[j] - m.head_b[j], 2.5 * (y1[j] - m.head_b[j]), 1e-12);
}

TEST(PredictClass, TieAndShiftRules) {
    const auto c = micro_config();
    auto m = build(c, 47);
    // zero dictionary: logits equal the bias for every input
    for (auto& v : m.head_w.vec()) v = 0.0;
    m.head_b = Tensor({3}, {0.0, 0.0, 0.0});
    const auto in = random_input(c, 3, 7);
    EXPECT_EQ(predict_class(m, in), (std::vector<int64_t>{0, 0, 0})) << "uniform logits tie to class 0";

    m.head_b = Tensor({3}, {1.0, 5.0, 2.0});
    EXPECT_EQ(predict_class(m, in), (std::vector<int64_t>{1, 1, 1}));

    for (auto& v : m.head_b.vec()) v += 100.0;  // softmax shift invariance
    EXPECT_EQ(predict_class(m, in), (std::vector<int64_t>{1, 1, 1}));
}

TEST(PredictClass, RegressionConfigRejected) {
    const auto c = micro_config(Variant::Full, TaskKind::Regression);
    auto m = build(c, 53);
    EXPECT_THROW(predict_class(m, random_input(c, 1, 2)), std::invalid_argument);
}

TEST(Config, ValidationErrors) {
    auto c = micro_config();
    c.d = {2};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = micro_config();
    c.dropout_rate = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = micro_config(Variant::NoIndvConv);
    c.f = 3;  // merge over raw input: 2f = 6 >= cov4+cov5+cov6-2 = 7 fails
    EXPECT_THROW(c.validate(), std::invalid_argument);
}
