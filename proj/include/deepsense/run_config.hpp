#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deepsense/data.hpp"

namespace deepsense {

/// Flat key=value configuration with dotted namespaces. The canonical text
/// form is the sorted key list, one per line; resolve -> serialize ->
/// resolve is a fixed point.
class RunConfig {
public:
    static RunConfig defaults(const std::string& task);

    /// Precedence: flags > file > DEEPSENSE_SEED env > task defaults.
    static RunConfig resolve(const std::string& task, const std::string& file_path,
                             const std::vector<std::string>& overrides);

    const std::string& get(const std::string& key) const;
    int64_t get_i64(const std::string& key) const;
    double get_f64(const std::string& key) const;
    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string canonical_text() const;
    static RunConfig from_text(const std::string& text);

    /// Assemble the typed sub-configs, validating cross-field consistency.
    DeepSenseConfig model_config() const;
    LossSpec loss_spec() const;
    TrainConfig train_config() const;
    KalmanConfig kalman_config() const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    void check_known_keys() const;
    std::map<std::string, std::string> kv_;
};

/// Binary dataset container for preprocessed samples ("DSSB" magic,
/// versioned, CRC-checked).
void save_samples(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_samples(const std::string& path);

}  // namespace deepsense
