#pragma once

#include <vector>

#include "deepsense/tensor.hpp"

namespace deepsense {

/// Raw measurements of one sensor: a d x n value matrix whose columns align
/// 1:1 with the timestamp vector (seconds, nondecreasing).
struct SensorSeries {
    int sensor_id = 0;
    Tensor values;                   // (d, n)
    std::vector<double> timestamps;  // n entries

    int64_t dims() const { return values.dim(0); }
    int64_t samples() const { return values.dim(1); }
    void validate() const;
};

/// One time window cut from a SensorSeries.
struct Window {
    Tensor values;              // (d, m)
    std::vector<double> times;  // m entries
    double width = 0;           // seconds
};

/// Ordered, non-overlapping time windows.
struct IntervalSet {
    std::vector<Window> windows;
    int64_t count() const { return static_cast<int64_t>(windows.size()); }
};

/// Frequency-domain input tensor of one sensor, shape (d, 2f, T). Along the
/// 2f axis entries alternate (magnitude, phase) per retained bin, lowest
/// frequency (DC) first; phases lie in (-pi, pi] and a zero-magnitude bin
/// carries phase 0. Interval widths are kept for downstream concatenation.
struct FreqTensor {
    int sensor_id = 0;
    Tensor data;  // (d, 2f, T)
    int f = 0;
    std::vector<double> widths;  // T entries, seconds

    int64_t d() const { return data.dim(0); }
    int64_t T() const { return data.dim(2); }
};

/// Split a series into consecutive windows of width tau. A trailing partial
/// window shorter than tau/2 is dropped, otherwise kept with its true width.
IntervalSet segment_intervals(const SensorSeries& series, double tau);

/// Split at explicit boundary times (variable interval widths). Window t
/// covers [boundaries[t], boundaries[t+1]).
IntervalSet segment_at_boundaries(const SensorSeries& series, const std::vector<double>& boundaries);

/// DFT of each measurement axis; the f lowest nonnegative-frequency bins
/// (DC included) emitted as interleaved (magnitude, phase) -> (d, 2f).
Tensor dft_window(const Tensor& window, int f);

/// Linear interpolation onto target_len uniformly spaced points spanning the
/// window's time range.
Window resample_window(const Window& window, int64_t target_len);

/// Stack per-window DFTs into a FreqTensor. All windows must already share a
/// common sample count and measurement dimension.
FreqTensor assemble_tensor(const IntervalSet& intervals, int f, int sensor_id = 0);

/// Median window sample count rounded up to the next power of two.
int64_t default_target_len(const IntervalSet& intervals);

/// All nonnegative-frequency bins for a window of m samples.
int max_bins(int64_t m);

/// segment -> resample -> assemble in one call.
FreqTensor preprocess_series(const SensorSeries& series, double tau, int64_t target_len, int f);
FreqTensor preprocess_series_at(const SensorSeries& series, const std::vector<double>& boundaries,
                                int64_t target_len, int f);

}  // namespace deepsense
