// Command-line front end: simulate, preprocess, train, eval, gradcheck.
// Exit codes: 0 success, 1 failed check, 2 configuration error, 3 diverged.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepsense/eval.hpp"
#include "deepsense/run_config.hpp"

namespace fs = std::filesystem;
using namespace deepsense;

namespace {

void write_sidecar(const RunConfig& rc, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/resolved.config", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write sidecar in " + out_dir);
    f << rc.canonical_text();
}

std::vector<SimulatedTrace> load_trace_dir(const std::string& dir) {
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const auto pos = name.find("_sensors.csv");
        if (pos != std::string::npos) stems.push_back(name.substr(0, pos));
    }
    if (stems.empty()) throw std::invalid_argument("no trace_*_sensors.csv files under " + dir);
    std::sort(stems.begin(), stems.end());
    std::vector<SimulatedTrace> traces;
    for (const auto& s : stems)
        traces.push_back(read_trace_csv(dir + "/" + s + "_sensors.csv", dir + "/" + s + "_truth.csv",
                                        dir + "/" + s + "_gps.csv"));
    return traces;
}

SyntheticIMUConfig sim_config_from(const RunConfig& rc) {
    SyntheticIMUConfig sc;
    sc.gps_noise_std = rc.get_f64("sim.gps_noise_std");
    sc.accel_noise_std = rc.get_f64("sim.accel_noise_std");
    sc.accel_bias_std = rc.get_f64("sim.accel_bias_std");
    sc.accel_bias_walk = rc.get_f64("sim.accel_bias_walk");
    sc.gyro_noise_std = rc.get_f64("sim.gyro_noise_std");
    sc.gyro_bias_std = rc.get_f64("sim.gyro_bias_std");
    return sc;
}

std::vector<Sample> cartrack_samples(const RunConfig& rc, const std::vector<SimulatedTrace>& traces) {
    std::vector<Sample> out;
    const auto target_len = rc.get_i64("dsp.target_len");
    const auto f = static_cast<int>(rc.model_config().f);
    const KalmanConfig kc = rc.kalman_config();
    for (const auto& tr : traces) out.push_back(make_cartrack_sample(tr, target_len, f, kc));
    return out;
}

std::vector<Sample> dataset_for_train(const RunConfig& rc, const std::string& data_dir) {
    const std::string& task = rc.get("run.task");
    if (task == "synth2")
        return synthetic_two_class_dataset(static_cast<int>(rc.get_i64("synth.samples")),
                                           static_cast<uint64_t>(rc.get_i64("run.seed")));
    if (task == "cartrack") {
        if (data_dir.empty()) throw std::invalid_argument("cartrack: --data directory required");
        return cartrack_samples(rc, load_trace_dir(data_dir));
    }
    if (data_dir.empty()) throw std::invalid_argument(task + ": --data directory required");
    std::vector<Sample> samples = load_samples(data_dir + "/samples.bin");
    const std::string& scheme = rc.get("split.scheme");
    if (scheme == "none") return samples;
    SplitResult sp;
    if (scheme == "loou")
        sp = split_leave_one_user_out(samples, rc.get_i64("split.user"));
    else if (scheme == "kfold")
        sp = split_stratified_kfold(samples, static_cast<int>(rc.get_i64("split.k")),
                                    static_cast<int>(rc.get_i64("split.fold")),
                                    static_cast<uint64_t>(rc.get_i64("run.seed")));
    else
        throw std::invalid_argument("split.scheme must be none|loou|kfold, got " + scheme);
    std::vector<Sample> train;
    for (size_t i : sp.train) train.push_back(samples[i]);
    return train;
}

int cmd_simulate(const RunConfig& rc, const std::string& out_dir) {
    write_sidecar(rc, out_dir);
    const auto n = rc.get_i64("sim.traces");
    const auto seed = static_cast<uint64_t>(rc.get_i64("run.seed"));
    const double dmin = rc.get_f64("sim.duration_min"), dmax = rc.get_f64("sim.duration_max");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dur(dmin, dmax);
    for (int64_t i = 0; i < n; ++i) {
        SyntheticIMUConfig sc = sim_config_from(rc);
        sc.seed = seed * 1000003ULL + static_cast<uint64_t>(i);
        const SimulatedTrace tr = simulate_trace(sc, dur(rng));
        char stem[64];
        std::snprintf(stem, sizeof stem, "%s/trace_%04lld", out_dir.c_str(),
                      static_cast<long long>(i));
        write_trace_csv(tr, std::string(stem) + "_sensors.csv", std::string(stem) + "_truth.csv",
                        std::string(stem) + "_gps.csv");
    }
    std::cout << "wrote " << n << " traces to " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const RunConfig& rc, const std::string& out_dir, const std::string& accel_csv,
                   const std::string& gyro_csv) {
    const std::string& task = rc.get("run.task");
    if (task != "hhar" && task != "userid")
        throw std::invalid_argument("preprocess handles run.task=hhar|userid, got " + task);
    write_sidecar(rc, out_dir);
    const auto acc = load_hhar_csv(accel_csv, HharSensor::Accelerometer);
    const auto gyr = load_hhar_csv(gyro_csv, HharSensor::Gyroscope);
    std::vector<HHARRecord> all = acc.records;
    all.insert(all.end(), gyr.records.begin(), gyr.records.end());
    const DeepSenseConfig mc = rc.model_config();
    const auto res = make_samples(all, mc.tau, mc.tau * static_cast<double>(mc.T),
                                  task == "hhar" ? LabelBy::Activity : LabelBy::User,
                                  rc.get_i64("dsp.target_len"), static_cast<int>(mc.f));
    save_samples(res.samples, out_dir + "/samples.bin");
    std::cout << "samples: " << res.samples.size() << ", skipped windows: " << res.skipped_windows
              << ", dropped rows: " << acc.dropped_rows + gyr.dropped_rows << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, const std::string& out_dir, const std::string& data_dir) {
    write_sidecar(rc, out_dir);
    std::vector<Sample> data = dataset_for_train(rc, data_dir);
    DeepSenseConfig mc = rc.model_config();
    DeepSenseModel model = build(mc, static_cast<uint64_t>(rc.get_i64("run.seed")));
    const auto log = train(model, data, rc.loss_spec(), rc.train_config());

    save_checkpoint(model, out_dir + "/checkpoint.dsns");
    std::ofstream lf(out_dir + "/loss_log.jsonl", std::ios::trunc);
    for (const auto& e : log) {
        nlohmann::json j;
        j["epoch"] = e.epoch;
        j["split"] = e.split;
        j["loss"] = e.loss;
        j["metric"] = e.metric;
        lf << j.dump() << "\n";
    }
    std::cout << "trained " << log.size() << " epochs on " << data.size() << " samples";
    if (!log.empty()) std::cout << ", final loss " << log.back().loss;
    std::cout << "\n";
    return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& out_dir, const std::string& data_dir,
             const std::string& checkpoint) {
    write_sidecar(rc, out_dir);
    DeepSenseModel model = load_checkpoint(checkpoint);
    const std::string& task = rc.get("run.task");
    const auto seed = static_cast<uint64_t>(rc.get_i64("run.seed"));

    if (task == "cartrack") {
        const auto traces = load_trace_dir(data_dir);
        const auto samples = cartrack_samples(rc, traces);

        std::vector<Trajectory> ds_trajs, base_trajs, truth_trajs;
        std::vector<double> ds_err, base_err;
        double coord_extent = 0;
        for (size_t i = 0; i < traces.size(); ++i) {
            const auto& tr = traces[i];
            Trajectory truth;
            for (size_t b = 0; b < tr.truth.interval_bounds.size(); ++b) truth.push_back(tr.truth.pos[b]);

            const auto preds = predict_displacements(model, samples[i]);
            Trajectory ds{truth.front()};
            for (const auto& d : preds) ds.push_back({ds.back()[0] + d[0], ds.back()[1] + d[1]});

            const Trajectory base =
                sensor_fusion_baseline(tr.sensors[0], tr.sensors[1], tr.sensors[2], 9.81,
                                       tr.truth.interval_bounds, truth.front());

            ds_err.push_back(std::hypot(ds.back()[0] - truth.back()[0], ds.back()[1] - truth.back()[1]));
            base_err.push_back(
                std::hypot(base.back()[0] - truth.back()[0], base.back()[1] - truth.back()[1]));
            for (const auto& traj : {ds, base, truth})
                for (const auto& p : traj)
                    coord_extent = std::max({coord_extent, std::fabs(p[0]), std::fabs(p[1])});

            char name[64];
            std::snprintf(name, sizeof name, "%s/traj_ds_%04zu.csv", out_dir.c_str(), i);
            write_trajectory_csv(ds, tr.truth.interval_bounds, name);
            std::snprintf(name, sizeof name, "%s/traj_baseline_%04zu.csv", out_dir.c_str(), i);
            write_trajectory_csv(base, tr.truth.interval_bounds, name);

            ds_trajs.push_back(std::move(ds));
            base_trajs.push_back(std::move(base));
            truth_trajs.push_back(std::move(truth));
        }

        const GridMap map = GridMap::make(80.0, static_cast<int>(coord_extent / 80.0) + 2);
        TrackMetrics ds_m, base_m;
        std::tie(ds_m.mae, ds_m.ci_half_width) = mae_ci(ds_err);
        std::tie(base_m.mae, base_m.ci_half_width) = mae_ci(base_err);
        ds_m.map_aided_accuracy = map_snap_accuracy(ds_trajs, truth_trajs, map);
        base_m.map_aided_accuracy = map_snap_accuracy(base_trajs, truth_trajs, map);

        const std::string json = track_metrics_json(to_string(model.config.variant), ds_m, base_m,
                                                    static_cast<int64_t>(traces.size()), seed);
        std::ofstream(out_dir + "/metrics.json", std::ios::trunc) << json;
        std::cout << json;
        return 0;
    }

    // classification tasks
    std::vector<Sample> samples;
    if (task == "synth2") {
        samples = synthetic_two_class_dataset(static_cast<int>(rc.get_i64("synth.samples")), seed);
    } else {
        samples = load_samples(data_dir + "/samples.bin");
        const std::string& scheme = rc.get("split.scheme");
        if (scheme != "none") {
            SplitResult sp;
            if (scheme == "loou")
                sp = split_leave_one_user_out(samples, rc.get_i64("split.user"));
            else if (scheme == "kfold")
                sp = split_stratified_kfold(samples, static_cast<int>(rc.get_i64("split.k")),
                                            static_cast<int>(rc.get_i64("split.fold")), seed);
            else
                throw std::invalid_argument("split.scheme must be none|loou|kfold");
            std::vector<Sample> test;
            for (size_t i : sp.test) test.push_back(samples[i]);
            samples = std::move(test);
        }
    }
    if (samples.empty()) throw std::invalid_argument("eval: no samples selected");

    std::vector<int64_t> preds, labels;
    classification_accuracy(model, samples, &preds);
    for (const auto& s : samples) labels.push_back(s.label);
    const ClassMetrics m = classification_metrics(preds, labels, model.config.task.output_dim);
    const std::string json = class_metrics_json(task, to_string(model.config.variant), m,
                                                static_cast<int64_t>(samples.size()), seed);
    std::ofstream(out_dir + "/metrics.json", std::ios::trunc) << json;
    std::cout << json;
    return 0;
}

int cmd_gradcheck(const RunConfig& rc) {
    const auto seed = static_cast<uint64_t>(rc.get_i64("run.seed"));
    const double tol = rc.get_f64("gradcheck.tolerance");
    std::mt19937_64 rng(seed);

    double overall = 0;
    std::string worst;
    for (Variant v : {Variant::Full, Variant::SingleGRU, Variant::NoIndvConv, Variant::NoMergeConv}) {
        for (TaskKind task : {TaskKind::Classification, TaskKind::Regression}) {
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
            c.task.output_dim = 2;

            DeepSenseModel model = build(c, seed + 17);
            std::vector<Sample> batch = synthetic_two_class_dataset(4, rng());
            for (auto& s : batch) {
                // reshape the synthetic set onto this micro geometry
                while (s.sensors[0].T() > c.T) {
                    for (auto& ft : s.sensors) {
                        Tensor cut({ft.d(), ft.data.dim(1), c.T});
                        for (int64_t i = 0; i < ft.d() * ft.data.dim(1); ++i)
                            for (int64_t t = 0; t < c.T; ++t)
                                cut[i * c.T + t] = ft.data[i * ft.T() + t];
                        ft.data = std::move(cut);
                        ft.widths.resize(static_cast<size_t>(c.T));
                    }
                }
                if (task == TaskKind::Regression) {
                    std::uniform_real_distribution<double> u(-2, 2);
                    s.displacement.clear();
                    for (int64_t t = 0; t < c.T; ++t) {
                        GaussianTarget g;
                        g.mean = {u(rng), u(rng)};
                        g.cov = {1.0, 0.2, 0.2, 1.5};
                        s.displacement.push_back(g);
                    }
                }
            }
            LossSpec spec;
            spec.kind = task == TaskKind::Classification ? LossSpec::Kind::CrossEntropy
                                                         : LossSpec::Kind::CarTrack;
            spec.cartrack.lambda = rc.get_f64("loss.lambda");
            spec.cartrack.theta = rc.get_f64("loss.theta");
            const auto report = gradient_check_model(model, batch, spec);
            std::cout << to_string(v) << " / " << to_string(task) << ": max rel err "
                      << report.max_rel_err << " (worst " << report.worst_param << ")\n";
            if (report.max_rel_err > overall) {
                overall = report.max_rel_err;
                worst = to_string(v) + "/" + to_string(task) + ":" + report.worst_param;
            }
        }
    }
    std::cout << "overall max rel err " << overall << " vs tolerance " << tol << " -> "
              << (overall < tol ? "PASS" : "FAIL") << "\n";
    return overall < tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeepSense time-series sensing pipeline"};
    app.require_subcommand(1);

    std::string config_file, out_dir = "out", data_dir, checkpoint, accel_csv, gyro_csv, task;
    std::vector<std::string> sets;
    int64_t seed = -1, epochs = -1, traces = -1;
    std::string variant;
    bool micro = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "key=value config file");
        sub->add_option("--set", sets, "config override key=value (repeatable)")->take_all();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "run seed (overrides config)");
        sub->add_option("--task", task, "cartrack|hhar|userid|synth2");
    };

    CLI::App* sim = app.add_subcommand("simulate", "generate synthetic driving traces");
    add_common(sim);
    sim->add_option("--traces", traces, "number of traces");

    CLI::App* prep = app.add_subcommand("preprocess", "build samples.bin from activity CSVs");
    add_common(prep);
    prep->add_option("--accel", accel_csv, "accelerometer CSV")->required();
    prep->add_option("--gyro", gyro_csv, "gyroscope CSV")->required();

    CLI::App* tr = app.add_subcommand("train", "train a model");
    add_common(tr);
    tr->add_option("--data", data_dir, "input data directory");
    tr->add_option("--epochs", epochs, "training epochs");
    tr->add_option("--variant", variant, "full|singleGRU|noIndvConv|noMergeConv");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--data", data_dir, "input data directory");
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
    add_common(gc);
    gc->add_flag("--micro", micro, "micro configuration (the only supported size)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e, std::cout, std::cerr);
        return 2;
    }

    try {
        std::vector<std::string> overrides = sets;
        if (seed >= 0) overrides.push_back("run.seed=" + std::to_string(seed));
        if (epochs >= 0) overrides.push_back("run.epochs=" + std::to_string(epochs));
        if (traces >= 0) overrides.push_back("sim.traces=" + std::to_string(traces));
        if (!variant.empty()) overrides.push_back("model.variant=" + variant);

        if (sim->parsed()) {
            const RunConfig rc = RunConfig::resolve(task.empty() ? "cartrack" : task, config_file, overrides);
            return cmd_simulate(rc, out_dir);
        }
        if (prep->parsed()) {
            const RunConfig rc = RunConfig::resolve(task.empty() ? "hhar" : task, config_file, overrides);
            return cmd_preprocess(rc, out_dir, accel_csv, gyro_csv);
        }
        if (tr->parsed()) {
            const RunConfig rc = RunConfig::resolve(task, config_file, overrides);
            return cmd_train(rc, out_dir, data_dir);
        }
        if (ev->parsed()) {
            const RunConfig rc = RunConfig::resolve(task, config_file, overrides);
            return cmd_eval(rc, out_dir, data_dir, checkpoint);
        }
        if (gc->parsed()) {
            (void)micro;
            const RunConfig rc = RunConfig::resolve(task.empty() ? "synth2" : task, config_file, overrides);
            return cmd_gradcheck(rc);
        }
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
