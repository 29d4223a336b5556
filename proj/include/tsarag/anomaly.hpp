#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"

namespace tsarag::anomaly {

struct AnomalyScores {
    Matrix per_variable;             // N×T' absolute residuals
    std::vector<double> aggregated;  // T' moving average of the per-timestep max
    std::size_t w_a{1};
};

struct Threshold {
    double value{0.0};
};

/// |truth − pred| elementwise.
inline Matrix score_series(const Matrix& truth, const Matrix& pred) {
    if (truth.rows() != pred.rows() || truth.cols() != pred.cols()) {
        tsarag::detail::fail(ErrorKind::ShapeMismatch, "truth and prediction shapes differ");
    }
    Matrix out(truth.rows(), truth.cols());
    for (std::size_t k = 0; k < truth.size(); ++k) {
        out.flat()[k] = std::abs(truth.flat()[k] - pred.flat()[k]);
    }
    return out;
}

/// m_t = max_i A_{i,t}; output_t is the mean of m over the trailing w_a
/// points ending at t, or over all available points in the first w_a − 1.
inline std::vector<double> aggregate(const Matrix& per_variable, std::size_t w_a) {
    if (w_a < 1) {
        tsarag::detail::fail(ErrorKind::InvalidWindow, "moving-average window must be >= 1");
    }
    const std::size_t len = per_variable.cols();
    std::vector<double> peak(len, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
        double m = per_variable.rows() > 0 ? per_variable(0, t) : 0.0;
        for (std::size_t i = 1; i < per_variable.rows(); ++i) {
            m = std::max(m, per_variable(i, t));
        }
        peak[t] = m;
    }
    std::vector<double> out(len);
    for (std::size_t t = 0; t < len; ++t) {
        const std::size_t first = t + 1 >= w_a ? t + 1 - w_a : 0;
        double s = 0.0;
        for (std::size_t u = first; u <= t; ++u) {
            s += peak[u];
        }
        out[t] = s / static_cast<double>(t + 1 - first);
    }
    return out;
}

inline AnomalyScores make_scores(const Matrix& truth, const Matrix& pred, std::size_t w_a) {
    AnomalyScores s;
    s.per_variable = score_series(truth, pred);
    s.aggregated = aggregate(s.per_variable, w_a);
    s.w_a = w_a;
    return s;
}

/// Th = max over the aggregated validation scores.
inline Threshold compute_threshold(std::span<const double> val_scores) {
    if (val_scores.empty()) {
        tsarag::detail::fail(ErrorKind::EmptyValidation, "threshold needs at least one validation score");
    }
    return {*std::max_element(val_scores.begin(), val_scores.end())};
}

/// flag_t = 1 iff score_t > Th (strict).
inline std::vector<int> flag(std::span<const double> test_scores, Threshold th) {
    std::vector<int> out(test_scores.size());
    for (std::size_t t = 0; t < test_scores.size(); ++t) {
        out[t] = test_scores[t] > th.value ? 1 : 0;
    }
    return out;
}

struct Run {
    std::size_t begin;
    std::size_t end;  // exclusive
};

/// Maximal runs of label 1.
inline std::vector<Run> label_runs(std::span<const int> labels) {
    std::vector<Run> runs;
    std::size_t t = 0;
    while (t < labels.size()) {
        if (labels[t] != 1) {
            ++t;
            continue;
        }
        const std::size_t begin = t;
        while (t < labels.size() && labels[t] == 1) {
            ++t;
        }
        runs.push_back({begin, t});
    }
    return runs;
}

/// Expands any hit inside a labeled anomaly segment to the whole segment.
inline std::vector<int> point_adjust(std::span<const int> flags, std::span<const int> labels) {
    if (flags.size() != labels.size()) {
        tsarag::detail::fail(ErrorKind::ShapeMismatch, "flags and labels differ in length");
    }
    std::vector<int> out(flags.begin(), flags.end());
    for (const Run& r : label_runs(labels)) {
        const bool hit = std::any_of(flags.begin() + static_cast<std::ptrdiff_t>(r.begin),
                                     flags.begin() + static_cast<std::ptrdiff_t>(r.end), [](int f) { return f == 1; });
        if (hit) {
            std::fill(out.begin() + static_cast<std::ptrdiff_t>(r.begin),
                      out.begin() + static_cast<std::ptrdiff_t>(r.end), 1);
        }
    }
    return out;
}

/// Fault runs with at least one raw (unadjusted) flag inside.
inline std::size_t detected_runs(std::span<const int> flags, std::span<const int> labels) {
    if (flags.size() != labels.size()) {
        tsarag::detail::fail(ErrorKind::ShapeMismatch, "flags and labels differ in length");
    }
    std::size_t n = 0;
    for (const Run& r : label_runs(labels)) {
        for (std::size_t t = r.begin; t < r.end; ++t) {
            if (flags[t] == 1) {
                ++n;
                break;
            }
        }
    }
    return n;
}

/// Fault detection rate in percent.
inline double fdr(std::size_t detected, std::size_t total) {
    if (total == 0) {
        tsarag::detail::fail(ErrorKind::NoFaults, "fault detection rate needs at least one fault run");
    }
    tsarag::detail::require(detected <= total, ErrorKind::InvalidArgument, "detected runs exceed total runs");
    return 100.0 * static_cast<double>(detected) / static_cast<double>(total);
}

inline double fdr(std::span<const int> flags, std::span<const int> labels) {
    return fdr(detected_runs(flags, labels), label_runs(labels).size());
}

}  // namespace tsarag::anomaly
