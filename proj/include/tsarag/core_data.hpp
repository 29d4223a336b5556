#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"

namespace tsarag {

/// Half-open timestamp interval [begin, end).
struct Interval {
    std::size_t begin{0};
    std::size_t end{0};

    std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
    bool empty() const noexcept { return size() == 0; }
    bool contains(std::size_t t) const noexcept { return t >= begin && t < end; }
    bool operator==(const Interval&) const = default;
};

struct SeriesStats {
    double mean{0.0};
    double std{1.0};
    bool operator==(const SeriesStats&) const = default;
};

/// Binary observed/missing indicator, 1 = observed.
class MaskMatrix {
public:
    MaskMatrix() = default;

    explicit MaskMatrix(Matrix flags) : flags_(std::move(flags)) {
        for (double v : flags_.flat()) {
            detail::require(v == 0.0 || v == 1.0, ErrorKind::NonBinary, "mask entries must be 0 or 1");
        }
    }

    static MaskMatrix all_observed(std::size_t n, std::size_t t) { return MaskMatrix(Matrix(n, t, 1.0)); }

    std::size_t num_series() const noexcept { return flags_.rows(); }
    std::size_t num_timestamps() const noexcept { return flags_.cols(); }
    const Matrix& flags() const noexcept { return flags_; }
    bool observed(std::size_t i, std::size_t t) const { return flags_(i, t) == 1.0; }

    std::size_t missing_count() const {
        std::size_t n = 0;
        for (double v : flags_.flat()) {
            n += v == 0.0 ? 1 : 0;
        }
        return n;
    }

    double missing_fraction() const {
        return flags_.empty() ? 0.0 : static_cast<double>(missing_count()) / static_cast<double>(flags_.size());
    }

    bool operator==(const MaskMatrix&) const = default;

private:
    Matrix flags_;
};

/// N series over T timestamps (row = one series), with optional per-series
/// standardization statistics for mapping back to the original scale.
class SeriesMatrix {
public:
    SeriesMatrix() = default;

    explicit SeriesMatrix(Matrix values, std::vector<std::string> series_ids = {},
                          std::optional<std::vector<SeriesStats>> stats = std::nullopt)
        : values_(std::move(values)), series_ids_(std::move(series_ids)), stats_(std::move(stats)) {
        detail::require(values_.rows() >= 1 && values_.cols() >= 1, ErrorKind::InvalidArgument,
                        "series matrix needs N >= 1 and T >= 1");
        detail::require(all_finite(values_.flat()), ErrorKind::InvalidArgument, "series matrix has non-finite entries");
        if (series_ids_.empty()) {
            for (std::size_t i = 0; i < values_.rows(); ++i) {
                series_ids_.push_back("s" + std::to_string(i));
            }
        }
        detail::require(series_ids_.size() == values_.rows(), ErrorKind::ShapeMismatch,
                        "series id count does not match N");
        if (stats_) {
            detail::require(stats_->size() == values_.rows(), ErrorKind::ShapeMismatch, "stats count does not match N");
            for (const auto& s : *stats_) {
                detail::require(s.std > 0.0, ErrorKind::InvalidArgument, "standardization std must be positive");
            }
        }
    }

    std::size_t num_series() const noexcept { return values_.rows(); }
    std::size_t num_timestamps() const noexcept { return values_.cols(); }
    const Matrix& values() const noexcept { return values_; }
    const std::vector<std::string>& series_ids() const noexcept { return series_ids_; }
    const std::optional<std::vector<SeriesStats>>& stats() const noexcept { return stats_; }
    double operator()(std::size_t i, std::size_t t) const { return values_(i, t); }

    bool operator==(const SeriesMatrix&) const = default;

private:
    Matrix values_;
    std::vector<std::string> series_ids_;
    std::optional<std::vector<SeriesStats>> stats_;
};

/// Paired input/target windows cut from a series matrix. Masks are filled
/// only when the windows were cut with a MaskMatrix.
struct WindowSet {
    std::vector<Matrix> inputs;        // N×tau each
    std::vector<Matrix> targets;       // N×nu each (or 1×nu class labels)
    std::vector<Matrix> input_masks;   // empty, or N×tau each
    std::vector<Matrix> target_masks;  // empty, or N×nu each
    std::size_t tau{0};
    std::size_t nu{0};
    std::vector<std::size_t> anchor_times;

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }
    bool has_masks() const noexcept { return !input_masks.empty(); }
};

struct Split {
    Interval train;
    Interval val;
    Interval test;
    bool operator==(const Split&) const = default;
};

/// Number of windows with stride `stride` that fit in a range of length `length`.
inline std::size_t window_count(std::size_t length, std::size_t tau, std::size_t nu, std::size_t stride) {
    if (length < tau + nu) {
        return 0;
    }
    return (length - tau - nu) / stride + 1;
}

namespace detail {

inline void check_window_args(std::size_t tau, std::size_t nu, std::size_t stride) {
    require(tau >= 1 && nu >= 1 && stride >= 1, ErrorKind::InvalidArgument, "tau, nu and stride must be >= 1");
}

inline void append_window(WindowSet& out, const Matrix& values, const Matrix* mask, std::size_t anchor,
                          std::size_t tau, std::size_t nu) {
    out.inputs.push_back(slice_columns(values, anchor + 1 - tau, anchor + 1));
    out.targets.push_back(slice_columns(values, anchor + 1, anchor + 1 + nu));
    if (mask != nullptr) {
        out.input_masks.push_back(slice_columns(*mask, anchor + 1 - tau, anchor + 1));
        out.target_masks.push_back(slice_columns(*mask, anchor + 1, anchor + 1 + nu));
    }
    out.anchor_times.push_back(anchor);
}

}  // namespace detail

/// Sliding windows fully inside `range`: anchors t run from
/// range.begin+tau-1 to range.end-nu-1; input covers [t-tau+1, t] and target
/// [t+1, t+nu]. Windows that would cross range.end are dropped.
inline WindowSet make_windows(const Matrix& values, Interval range, std::size_t tau, std::size_t nu,
                              std::size_t stride = 1, const Matrix* mask = nullptr) {
    detail::check_window_args(tau, nu, stride);
    detail::require(range.end <= values.cols(), ErrorKind::InvalidArgument, "window range exceeds series length");
    detail::require(mask == nullptr || (mask->rows() == values.rows() && mask->cols() == values.cols()),
                    ErrorKind::ShapeMismatch, "mask shape does not match values");
    if (range.size() < tau + nu) {
        detail::fail(ErrorKind::RangeTooShort, "range of length " + std::to_string(range.size()) +
                                                   " cannot hold tau + nu = " + std::to_string(tau + nu));
    }
    WindowSet out;
    out.tau = tau;
    out.nu = nu;
    for (std::size_t t = range.begin + tau - 1; t + nu < range.end; t += stride) {
        detail::append_window(out, values, mask, t, tau, nu);
    }
    return out;
}

inline WindowSet make_windows(const SeriesMatrix& data, Interval range, std::size_t tau, std::size_t nu,
                              std::size_t stride = 1, const MaskMatrix* mask = nullptr) {
    return make_windows(data.values(), range, tau, nu, stride, mask ? &mask->flags() : nullptr);
}

/// Evaluation windows whose targets lie inside `target_range` while the input
/// context may reach back before target_range.begin (never before 0).
inline WindowSet make_context_windows(const Matrix& values, Interval target_range, std::size_t tau, std::size_t nu,
                                      std::size_t stride = 1, const Matrix* mask = nullptr) {
    detail::check_window_args(tau, nu, stride);
    detail::require(target_range.end <= values.cols(), ErrorKind::InvalidArgument,
                    "window range exceeds series length");
    detail::require(mask == nullptr || (mask->rows() == values.rows() && mask->cols() == values.cols()),
                    ErrorKind::ShapeMismatch, "mask shape does not match values");
    const std::size_t first = std::max(tau - 1, target_range.begin == 0 ? 0 : target_range.begin - 1);
    if (first + nu >= target_range.end) {
        detail::fail(ErrorKind::RangeTooShort, "no evaluation window fits the target range");
    }
    WindowSet out;
    out.tau = tau;
    out.nu = nu;
    for (std::size_t t = first; t + nu < target_range.end; t += stride) {
        detail::append_window(out, values, mask, t, tau, nu);
    }
    return out;
}

inline WindowSet make_context_windows(const SeriesMatrix& data, Interval target_range, std::size_t tau,
                                      std::size_t nu, std::size_t stride = 1, const MaskMatrix* mask = nullptr) {
    return make_context_windows(data.values(), target_range, tau, nu, stride, mask ? &mask->flags() : nullptr);
}

/// z = (x - mean_i) / std_i with population statistics computed only on
/// `fit_range`. When `observed` is given, only observed entries enter the
/// statistics.
inline SeriesMatrix standardize(const SeriesMatrix& data, Interval fit_range, const MaskMatrix* observed = nullptr) {
    detail::require(!fit_range.empty() && fit_range.end <= data.num_timestamps(), ErrorKind::InvalidArgument,
                    "fit range must be nonempty and inside the series");
    const Matrix& x = data.values();
    std::vector<SeriesStats> stats(data.num_series());
    Matrix z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t t = fit_range.begin; t < fit_range.end; ++t) {
            if (observed == nullptr || observed->observed(i, t)) {
                sum += x(i, t);
                ++n;
            }
        }
        if (n == 0) {
            detail::fail(ErrorKind::DegenerateSeries, "series '" + data.series_ids()[i] + "' has no observed values");
        }
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t t = fit_range.begin; t < fit_range.end; ++t) {
            if (observed == nullptr || observed->observed(i, t)) {
                const double d = x(i, t) - mean;
                ss += d * d;
            }
        }
        const double sd = std::sqrt(ss / static_cast<double>(n));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            detail::fail(ErrorKind::DegenerateSeries,
                         "series '" + data.series_ids()[i] + "' is constant over the fit range");
        }
        stats[i] = {mean, sd};
        for (std::size_t t = 0; t < x.cols(); ++t) {
            z(i, t) = (x(i, t) - mean) / sd;
        }
    }
    return SeriesMatrix(std::move(z), data.series_ids(), std::move(stats));
}

/// Maps one standardized value of series i back to the original scale.
inline double unstandardize_value(const SeriesStats& s, double z) { return z * s.std + s.mean; }

inline SeriesMatrix inverse_standardize(const SeriesMatrix& data) {
    if (!data.stats()) {
        detail::fail(ErrorKind::MissingStats, "series matrix carries no standardization stats");
    }
    const auto& stats = *data.stats();
    Matrix x(data.num_series(), data.num_timestamps());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t t = 0; t < x.cols(); ++t) {
            x(i, t) = unstandardize_value(stats[i], data(i, t));
        }
    }
    return SeriesMatrix(std::move(x), data.series_ids());
}

/// Chronological train/val/test split. Boundaries sit at
/// floor(T·r_train/Σ) and floor(T·(r_train+r_val)/Σ); the remainder goes to test.
inline Split chronological_split(std::size_t length, std::array<int, 3> ratio) {
    for (int r : ratio) {
        detail::require(r > 0, ErrorKind::InvalidRatio, "split ratio parts must be positive");
    }
    const auto total = static_cast<std::size_t>(ratio[0] + ratio[1] + ratio[2]);
    detail::require(length >= total, ErrorKind::InvalidRatio,
                    "series length " + std::to_string(length) + " is shorter than the ratio sum");
    const std::size_t b1 = length * static_cast<std::size_t>(ratio[0]) / total;
    const std::size_t b2 = length * static_cast<std::size_t>(ratio[0] + ratio[1]) / total;
    return Split{{0, b1}, {b1, b2}, {b2, length}};
}

}  // namespace tsarag
