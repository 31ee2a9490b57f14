#include "deepsense/run_config.hpp"

#include <zlib.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace deepsense {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "run.task", "run.seed", "run.epochs", "run.batch_size",
        "model.k", "model.d", "model.f", "model.t", "model.tau",
        "model.cov1", "model.cov2", "model.cov3", "model.cov4", "model.cov5", "model.cov6",
        "model.n_filters", "model.gru_hidden", "model.gru_layers", "model.dropout_rate", "model.input_scale",
        "model.variant", "model.task", "model.output_dim",
        "loss.kind", "loss.lambda", "loss.theta",
        "opt.lr", "opt.beta1", "opt.beta2", "opt.eps", "opt.clip_norm",
        "dsp.target_len",
        "kalman.process_noise", "kalman.measurement_std", "kalman.first_interval_std",
        "sim.traces", "sim.duration_min", "sim.duration_max", "sim.gps_noise_std",
        "sim.accel_noise_std", "sim.accel_bias_std", "sim.accel_bias_walk",
        "sim.gyro_noise_std", "sim.gyro_bias_std",
        "split.scheme", "split.user", "split.k", "split.fold",
        "synth.samples",
        "gradcheck.tolerance",
    };
    return keys;
}

void apply_model_defaults(std::map<std::string, std::string>& kv, const DeepSenseConfig& c) {
    std::istringstream is(to_config_text(c));
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
}

}  // namespace

RunConfig RunConfig::defaults(const std::string& task) {
    RunConfig rc;
    auto& kv = rc.kv_;
    kv["run.task"] = task;
    kv["run.seed"] = "0";
    kv["run.epochs"] = "10";
    kv["run.batch_size"] = "16";
    kv["loss.kind"] = "default";
    kv["loss.lambda"] = "1";
    kv["loss.theta"] = "0.5235987755982988";
    kv["opt.lr"] = "0.001";
    kv["opt.beta1"] = "0.9";
    kv["opt.beta2"] = "0.999";
    kv["opt.eps"] = "1e-08";
    kv["opt.clip_norm"] = "5";
    kv["dsp.target_len"] = "64";
    kv["kalman.process_noise"] = "0.6";
    kv["kalman.measurement_std"] = "4";
    kv["kalman.first_interval_std"] = "0.3";
    kv["sim.traces"] = "100";
    kv["sim.duration_min"] = "62";
    kv["sim.duration_max"] = "95";
    kv["sim.gps_noise_std"] = "4";
    kv["sim.accel_noise_std"] = "0.05";
    kv["sim.accel_bias_std"] = "0.1";
    kv["sim.accel_bias_walk"] = "0.01";
    kv["sim.gyro_noise_std"] = "0.01";
    kv["sim.gyro_bias_std"] = "0.01";
    kv["split.scheme"] = "none";
    kv["split.user"] = "0";
    kv["split.k"] = "10";
    kv["split.fold"] = "0";
    kv["synth.samples"] = "20";
    kv["gradcheck.tolerance"] = "0.0001";

    if (task == "hhar" || task == "userid") {
        DeepSenseConfig c;  // the paper's two-sensor activity setup
        c.task.kind = TaskKind::Classification;
        c.task.output_dim = task == "hhar" ? 6 : 9;
        c.input_scale = 1.0 / 32.0;
        apply_model_defaults(kv, c);
        kv["dsp.target_len"] = "32";
    } else if (task == "cartrack") {
        DeepSenseConfig c;
        c.K = 3;
        c.d = {3, 3, 3};
        c.f = 8;
        c.T = 120;
        c.tau = 1.0;
        c.n_filters = 8;
        c.input_scale = 1.0 / 64.0;
        c.dropout_rate = 0.0;  // per-interval regression wants exact features
        c.task.kind = TaskKind::Regression;
        c.task.output_dim = 2;
        apply_model_defaults(kv, c);
        kv["opt.lr"] = "0.01";
        kv["run.epochs"] = "120";
    } else if (task == "synth2") {
        apply_model_defaults(kv, synthetic_two_class_config());
        kv["dsp.target_len"] = "16";
    } else {
        throw std::invalid_argument("run.task: unknown task '" + task +
                                    "' (cartrack|hhar|userid|synth2)");
    }
    return rc;
}

RunConfig RunConfig::resolve(const std::string& task, const std::string& file_path,
                             const std::vector<std::string>& overrides) {
    // the task itself may be overridden by file or flags; find it first
    std::string effective_task = task;
    auto parse_kv = [](const std::string& line) -> std::pair<std::string, std::string> {
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("config: expected key=value, got '" + line + "'");
        return {line.substr(0, eq), line.substr(eq + 1)};
    };

    std::vector<std::pair<std::string, std::string>> file_kv;
    if (!file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) throw std::invalid_argument("config: cannot open file " + file_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            file_kv.push_back(parse_kv(line));
        }
    }
    for (const auto& [k, v] : file_kv)
        if (k == "run.task" && effective_task.empty()) effective_task = v;
    for (const auto& o : overrides) {
        const auto [k, v] = parse_kv(o);
        if (k == "run.task") effective_task = v;
    }
    if (effective_task.empty()) effective_task = "synth2";

    RunConfig rc = defaults(effective_task);
    if (const char* env = std::getenv("DEEPSENSE_SEED")) rc.kv_["run.seed"] = env;
    for (const auto& [k, v] : file_kv) rc.kv_[k] = v;
    for (const auto& o : overrides) {
        const auto [k, v] = parse_kv(o);
        rc.kv_[k] = v;
    }
    rc.kv_["run.task"] = effective_task;
    rc.check_known_keys();
    rc.model_config();  // cross-field validation
    return rc;
}

void RunConfig::check_known_keys() const {
    for (const auto& [k, v] : kv_)
        if (!known_keys().count(k))
            throw std::invalid_argument("config: unknown key '" + k + "'");
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("config: missing key '" + key + "'");
    return it->second;
}

int64_t RunConfig::get_i64(const std::string& key) const {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' is not an integer: " + get(key));
    }
}

double RunConfig::get_f64(const std::string& key) const {
    try {
        size_t pos = 0;
        const double v = std::stod(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' is not a number: " + get(key));
    }
}

bool RunConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

void RunConfig::set(const std::string& key, const std::string& value) {
    kv_[key] = value;
    check_known_keys();
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + "=" + v + "\n";
    return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig rc;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config text: missing '=' in " + line);
        rc.kv_[line.substr(0, eq)] = line.substr(eq + 1);
    }
    rc.check_known_keys();
    return rc;
}

DeepSenseConfig RunConfig::model_config() const {
    std::string text;
    for (const auto& [k, v] : kv_)
        if (k.rfind("model.", 0) == 0) text += k + "=" + v + "\n";
    DeepSenseConfig c = config_from_text(text);
    c.validate();

    const std::string& task = get("run.task");
    if ((task == "hhar" || task == "userid" || task == "synth2") && c.task.kind != TaskKind::Classification)
        throw std::invalid_argument("config: run.task=" + task + " requires model.task=classification");
    if (task == "cartrack" && c.task.kind != TaskKind::Regression)
        throw std::invalid_argument("config: run.task=cartrack requires model.task=regression");
    const std::string& loss = get("loss.kind");
    if (loss == "cartrack" && c.task.kind != TaskKind::Regression)
        throw std::invalid_argument("config: loss.kind=cartrack requires model.task=regression");
    if (loss == "xent" && c.task.kind != TaskKind::Classification)
        throw std::invalid_argument("config: loss.kind=xent requires model.task=classification");
    return c;
}

LossSpec RunConfig::loss_spec() const {
    LossSpec spec;
    const std::string& kind = get("loss.kind");
    const bool regression = model_config().task.kind == TaskKind::Regression;
    if (kind == "default") {
        // paper defaults: cross entropy for classification, the custom
        // CarTrack objective for the tracking task, MSE otherwise
        if (!regression)
            spec.kind = LossSpec::Kind::CrossEntropy;
        else if (get("run.task") == "cartrack")
            spec.kind = LossSpec::Kind::CarTrack;
        else
            spec.kind = LossSpec::Kind::Mse;
    } else if (kind == "xent") {
        spec.kind = LossSpec::Kind::CrossEntropy;
    } else if (kind == "mse") {
        spec.kind = LossSpec::Kind::Mse;
    } else if (kind == "cartrack") {
        spec.kind = LossSpec::Kind::CarTrack;
    } else {
        throw std::invalid_argument("config: loss.kind must be default|xent|mse|cartrack, got " + kind);
    }
    spec.cartrack.lambda = get_f64("loss.lambda");
    spec.cartrack.theta = get_f64("loss.theta");
    spec.cartrack.validate();
    return spec;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig tc;
    tc.opt.lr = get_f64("opt.lr");
    tc.opt.beta1 = get_f64("opt.beta1");
    tc.opt.beta2 = get_f64("opt.beta2");
    tc.opt.eps = get_f64("opt.eps");
    tc.opt.clip_norm = get_f64("opt.clip_norm");
    tc.batch_size = get_i64("run.batch_size");
    tc.epochs = get_i64("run.epochs");
    tc.seed = static_cast<uint64_t>(get_i64("run.seed"));
    return tc;
}

KalmanConfig RunConfig::kalman_config() const {
    KalmanConfig kc;
    kc.process_noise = get_f64("kalman.process_noise");
    kc.measurement_std = get_f64("kalman.measurement_std");
    kc.first_interval_std = get_f64("kalman.first_interval_std");
    return kc;
}

// ---------------------------------------------------------------------------
// samples container

namespace {

constexpr char kSamplesMagic[4] = {'D', 'S', 'S', 'B'};
constexpr uint32_t kSamplesVersion = 1;

void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_i64(std::string& out, int64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_doubles(std::string& out, const double* p, size_t n) {
    out.append(reinterpret_cast<const char*>(p), n * 8);
}

struct Reader {
    const std::string& bytes;
    size_t pos = 0;
    void raw(void* p, size_t n) {
        if (pos + n > bytes.size()) throw std::runtime_error("samples file: truncated");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    int64_t i64() {
        int64_t v;
        raw(&v, 8);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
};

}  // namespace

void save_samples(const std::vector<Sample>& samples, const std::string& path) {
    std::string out;
    out.append(kSamplesMagic, 4);
    const uint32_t ver = kSamplesVersion;
    out.append(reinterpret_cast<const char*>(&ver), 4);
    put_u64(out, samples.size());
    for (const Sample& s : samples) {
        put_i64(out, s.label);
        put_i64(out, s.group);
        put_u64(out, s.sensors.size());
        for (const FreqTensor& ft : s.sensors) {
            put_i64(out, ft.sensor_id);
            put_i64(out, ft.f);
            put_i64(out, ft.data.dim(0));
            put_i64(out, ft.data.dim(1));
            put_i64(out, ft.data.dim(2));
            put_doubles(out, ft.data.data(), static_cast<size_t>(ft.data.numel()));
            put_u64(out, ft.widths.size());
            put_doubles(out, ft.widths.data(), ft.widths.size());
        }
        put_u64(out, s.displacement.size());
        for (const GaussianTarget& g : s.displacement) {
            put_doubles(out, g.mean.data(), 2);
            put_doubles(out, g.cov.data(), 4);
        }
    }
    const auto crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    out.append(reinterpret_cast<const char*>(&crc), 4);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<Sample> load_samples(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 20) throw std::runtime_error("samples file: truncated");

    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    const auto computed = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
    if (stored != computed) throw std::runtime_error("samples file: CRC mismatch");

    Reader r{bytes};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kSamplesMagic, 4) != 0) throw std::runtime_error("samples file: bad magic");
    if (r.u32() != kSamplesVersion) throw std::runtime_error("samples file: unsupported version");

    std::vector<Sample> out(r.u64());
    for (Sample& s : out) {
        s.label = r.i64();
        s.group = r.i64();
        s.sensors.resize(r.u64());
        for (FreqTensor& ft : s.sensors) {
            ft.sensor_id = static_cast<int>(r.i64());
            ft.f = static_cast<int>(r.i64());
            const int64_t d = r.i64(), f2 = r.i64(), T = r.i64();
            ft.data = Tensor({d, f2, T});
            r.raw(ft.data.data(), static_cast<size_t>(ft.data.numel()) * 8);
            ft.widths.resize(r.u64());
            r.raw(ft.widths.data(), ft.widths.size() * 8);
        }
        s.displacement.resize(r.u64());
        for (GaussianTarget& g : s.displacement) {
            r.raw(g.mean.data(), 16);
            r.raw(g.cov.data(), 32);
        }
    }
    return out;
}

}  // namespace deepsense
