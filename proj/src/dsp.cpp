#include "deepsense/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace deepsense {

namespace {

constexpr double kBoundaryEps = 1e-9;

Window cut_window(const SensorSeries& series, size_t first, size_t last_excl, double width) {
    const int64_t d = series.dims();
    const int64_t m = static_cast<int64_t>(last_excl - first);
    Window w;
    w.values = Tensor({d, m});
    for (int64_t r = 0; r < d; ++r)
        for (int64_t c = 0; c < m; ++c)
            w.values[r * m + c] = series.values[r * series.samples() + static_cast<int64_t>(first) + c];
    w.times.assign(series.timestamps.begin() + static_cast<long>(first),
                   series.timestamps.begin() + static_cast<long>(last_excl));
    w.width = width;
    return w;
}

}  // namespace

void SensorSeries::validate() const {
    if (values.rank() != 2) throw std::invalid_argument("SensorSeries: values must be a (d, n) matrix");
    if (dims() < 1 || samples() < 1) throw std::invalid_argument("SensorSeries: requires d >= 1 and n >= 1");
    if (static_cast<int64_t>(timestamps.size()) != samples())
        throw std::invalid_argument("SensorSeries: timestamp count " + std::to_string(timestamps.size()) +
                                    " does not match value columns " + std::to_string(samples()));
    for (size_t i = 1; i < timestamps.size(); ++i)
        if (timestamps[i] < timestamps[i - 1])
            throw std::invalid_argument("SensorSeries: timestamps must be nondecreasing");
}

IntervalSet segment_intervals(const SensorSeries& series, double tau) {
    series.validate();
    if (tau <= 0) throw std::invalid_argument("segment_intervals: tau must be positive");
    const double t0 = series.timestamps.front();
    const double duration = series.timestamps.back() - t0;
    if (duration < tau - kBoundaryEps)
        throw std::invalid_argument("segment_intervals: input shorter than one interval (duration " +
                                    std::to_string(duration) + " s < tau " + std::to_string(tau) + " s)");

    const auto full = static_cast<int64_t>(std::floor(duration / tau + kBoundaryEps));
    const double tail = duration - static_cast<double>(full) * tau;
    const bool keep_tail = tail >= tau / 2.0;

    IntervalSet out;
    const auto n = static_cast<size_t>(series.samples());
    size_t pos = 0;
    for (int64_t t = 0; t < full; ++t) {
        const double end = t0 + static_cast<double>(t + 1) * tau;
        size_t last = pos;
        const bool final_window = (t == full - 1) && !keep_tail;
        while (last < n && (series.timestamps[last] < end - kBoundaryEps ||
                            (final_window && series.timestamps[last] <= end + kBoundaryEps)))
            ++last;
        out.windows.push_back(cut_window(series, pos, last, tau));
        pos = last;
    }
    if (keep_tail) out.windows.push_back(cut_window(series, pos, n, tail));
    return out;
}

IntervalSet segment_at_boundaries(const SensorSeries& series, const std::vector<double>& boundaries) {
    series.validate();
    if (boundaries.size() < 2) throw std::invalid_argument("segment_at_boundaries: need at least two boundaries");
    for (size_t i = 1; i < boundaries.size(); ++i)
        if (boundaries[i] <= boundaries[i - 1])
            throw std::invalid_argument("segment_at_boundaries: boundaries must be strictly increasing");

    IntervalSet out;
    const auto n = static_cast<size_t>(series.samples());
    size_t pos = 0;
    while (pos < n && series.timestamps[pos] < boundaries.front() - kBoundaryEps) ++pos;
    for (size_t b = 0; b + 1 < boundaries.size(); ++b) {
        const double end = boundaries[b + 1];
        const bool last_window = b + 2 == boundaries.size();
        size_t last = pos;
        while (last < n && (series.timestamps[last] < end - kBoundaryEps ||
                            (last_window && series.timestamps[last] <= end + kBoundaryEps)))
            ++last;
        out.windows.push_back(cut_window(series, pos, last, end - boundaries[b]));
        pos = last;
    }
    return out;
}

int max_bins(int64_t m) { return static_cast<int>(m / 2 + 1); }

Tensor dft_window(const Tensor& window, int f) {
    if (window.rank() != 2) throw std::invalid_argument("dft_window: expects a (d, m) matrix");
    const int64_t d = window.dim(0), m = window.dim(1);
    if (m < 1) throw std::invalid_argument("dft_window: empty window");
    if (f < 1 || f > max_bins(m))
        throw std::invalid_argument("dft_window: f = " + std::to_string(f) + " exceeds available bins " +
                                    std::to_string(max_bins(m)) + " for m = " + std::to_string(m));

    // twiddle table w[r] = e^{-2*pi*i*r/m}, indexed by (j*n) mod m
    std::vector<double> wr(static_cast<size_t>(m)), wi(static_cast<size_t>(m));
    for (int64_t r = 0; r < m; ++r) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(m);
        wr[static_cast<size_t>(r)] = std::cos(ang);
        wi[static_cast<size_t>(r)] = std::sin(ang);
    }

    Tensor out({d, 2 * static_cast<int64_t>(f)});
    for (int64_t row = 0; row < d; ++row) {
        const double* x = window.data() + row * m;
        for (int64_t j = 0; j < f; ++j) {
            double re = 0, im = 0;
            for (int64_t n = 0; n < m; ++n) {
                const auto r = static_cast<size_t>((j * n) % m);
                re += x[n] * wr[r];
                im += x[n] * wi[r];
            }
            const double mag = std::hypot(re, im);
            double phase = mag == 0.0 ? 0.0 : std::atan2(im, re);
            if (phase == -std::numbers::pi) phase = std::numbers::pi;  // keep phase in (-pi, pi]
            out[row * 2 * f + 2 * j] = mag;
            out[row * 2 * f + 2 * j + 1] = phase;
        }
    }
    return out;
}

Window resample_window(const Window& window, int64_t target_len) {
    const int64_t d = window.values.dim(0), m = window.values.dim(1);
    if (m < 2) throw std::invalid_argument("resample_window: needs at least 2 samples, got " + std::to_string(m));
    if (target_len < 1) throw std::invalid_argument("resample_window: target length must be positive");

    const double t0 = window.times.front(), t1 = window.times.back();
    Window out;
    out.values = Tensor({d, target_len});
    out.times.resize(static_cast<size_t>(target_len));
    out.width = window.width;

    size_t hi = 1;
    for (int64_t i = 0; i < target_len; ++i) {
        const double t = target_len == 1 ? t0 : t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(target_len - 1);
        out.times[static_cast<size_t>(i)] = t;
        while (hi + 1 < window.times.size() && window.times[hi] < t) ++hi;
        const double ta = window.times[hi - 1], tb = window.times[hi];
        const double alpha = tb > ta ? std::clamp((t - ta) / (tb - ta), 0.0, 1.0) : 0.0;
        for (int64_t r = 0; r < d; ++r) {
            const double va = window.values[r * m + static_cast<int64_t>(hi) - 1];
            const double vb = window.values[r * m + static_cast<int64_t>(hi)];
            out.values[r * target_len + i] = va + alpha * (vb - va);
        }
    }
    return out;
}

int64_t default_target_len(const IntervalSet& intervals) {
    if (intervals.windows.empty()) throw std::invalid_argument("default_target_len: empty interval set");
    std::vector<int64_t> counts;
    counts.reserve(intervals.windows.size());
    for (const auto& w : intervals.windows) counts.push_back(w.values.dim(1));
    std::sort(counts.begin(), counts.end());
    const int64_t median = counts[counts.size() / 2];
    int64_t p = 1;
    while (p < median) p <<= 1;
    return std::max<int64_t>(p, 2);
}

FreqTensor assemble_tensor(const IntervalSet& intervals, int f, int sensor_id) {
    if (intervals.windows.empty()) throw std::invalid_argument("assemble_tensor: empty interval set");
    const int64_t d = intervals.windows.front().values.dim(0);
    const int64_t m = intervals.windows.front().values.dim(1);
    for (const auto& w : intervals.windows) {
        if (w.values.dim(0) != d)
            throw std::invalid_argument("assemble_tensor: inconsistent measurement dimension " +
                                        std::to_string(w.values.dim(0)) + " vs " + std::to_string(d));
        if (w.values.dim(1) != m)
            throw std::invalid_argument("assemble_tensor: windows not resampled to a common length (" +
                                        std::to_string(w.values.dim(1)) + " vs " + std::to_string(m) + ")");
    }

    const int64_t T = intervals.count();
    FreqTensor ft;
    ft.sensor_id = sensor_id;
    ft.f = f;
    ft.data = Tensor({d, 2 * static_cast<int64_t>(f), T});
    ft.widths.reserve(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) {
        const Tensor spec = dft_window(intervals.windows[static_cast<size_t>(t)].values, f);
        for (int64_t r = 0; r < d; ++r)
            for (int64_t c = 0; c < 2 * f; ++c) ft.data[(r * 2 * f + c) * T + t] = spec[r * 2 * f + c];
        ft.widths.push_back(intervals.windows[static_cast<size_t>(t)].width);
    }
    return ft;
}

namespace {

FreqTensor preprocess_impl(const SensorSeries& series, IntervalSet intervals, int64_t target_len, int f) {
    if (target_len <= 0) target_len = default_target_len(intervals);
    for (auto& w : intervals.windows) w = resample_window(w, target_len);
    if (f <= 0) f = max_bins(target_len);
    return assemble_tensor(intervals, f, series.sensor_id);
}

}  // namespace

FreqTensor preprocess_series(const SensorSeries& series, double tau, int64_t target_len, int f) {
    return preprocess_impl(series, segment_intervals(series, tau), target_len, f);
}

FreqTensor preprocess_series_at(const SensorSeries& series, const std::vector<double>& boundaries,
                                int64_t target_len, int f) {
    return preprocess_impl(series, segment_at_boundaries(series, boundaries), target_len, f);
}

}  // namespace deepsense
