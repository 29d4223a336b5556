#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>

#include "tsarag/error.hpp"

namespace tsarag::metrics {

inline constexpr double kMapeEps = 1e-8;

namespace detail {

inline void check_pair(std::size_t a, std::size_t b) {
    tsarag::detail::require(a == b, ErrorKind::ShapeMismatch,
                            "metric inputs differ in length (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    tsarag::detail::require(a > 0, ErrorKind::ShapeMismatch, "metric inputs are empty");
}

}  // namespace detail

inline double mae(std::span<const double> truth, std::span<const double> pred) {
    detail::check_pair(truth.size(), pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        s += std::abs(truth[i] - pred[i]);
    }
    return s / static_cast<double>(truth.size());
}

inline double rmse(std::span<const double> truth, std::span<const double> pred) {
    detail::check_pair(truth.size(), pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = truth[i] - pred[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(truth.size()));
}

/// Percent; targets with |truth| < eps are excluded.
inline double mape(std::span<const double> truth, std::span<const double> pred, double eps = kMapeEps) {
    detail::check_pair(truth.size(), pred.size());
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (std::abs(truth[i]) >= eps) {
            s += std::abs((truth[i] - pred[i]) / truth[i]);
            ++n;
        }
    }
    if (n == 0) {
        tsarag::detail::fail(ErrorKind::AllTargetsNearZero, "every target is within mape_eps of zero");
    }
    return 100.0 * s / static_cast<double>(n);
}

struct Confusion {
    std::size_t tp{0};
    std::size_t fp{0};
    std::size_t tn{0};
    std::size_t fn{0};

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    bool operator==(const Confusion&) const = default;
};

inline Confusion confusion(std::span<const int> flags, std::span<const int> labels) {
    tsarag::detail::require(flags.size() == labels.size(), ErrorKind::ShapeMismatch, "flags and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        const int f = flags[i];
        const int l = labels[i];
        tsarag::detail::require((f == 0 || f == 1) && (l == 0 || l == 1), ErrorKind::NonBinary,
                                "confusion inputs must be 0/1 at index " + std::to_string(i));
        if (f == 1 && l == 1) {
            ++c.tp;
        } else if (f == 1) {
            ++c.fp;
        } else if (l == 1) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

struct PRF1 {
    double precision{0.0};
    double recall{0.0};
    double f1{0.0};
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// 0/0 resolves to 0 for each of P, R and F1.
inline PRF1 prf1(const Confusion& c) {
    PRF1 out;
    out.precision = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    out.recall = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    out.f1 = safe_ratio(2.0 * out.precision * out.recall, out.precision + out.recall);
    return out;
}

inline double accuracy(std::span<const int> pred, std::span<const int> truth) {
    detail::check_pair(pred.size(), truth.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += pred[i] == truth[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

struct MacroScores {
    double precision{0.0};
    double recall{0.0};
};

/// Macro-averaged one-vs-rest precision and recall over every class that
/// appears in either the predictions or the truth.
inline MacroScores macro_precision_recall(std::span<const int> pred, std::span<const int> truth) {
    detail::check_pair(pred.size(), truth.size());
    std::set<int> classes(pred.begin(), pred.end());
    classes.insert(truth.begin(), truth.end());
    MacroScores out;
    for (int k : classes) {
        std::size_t tp = 0;
        std::size_t fp = 0;
        std::size_t fn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == k && truth[i] == k) {
                ++tp;
            } else if (pred[i] == k) {
                ++fp;
            } else if (truth[i] == k) {
                ++fn;
            }
        }
        out.precision += safe_ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
        out.recall += safe_ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    }
    out.precision /= static_cast<double>(classes.size());
    out.recall /= static_cast<double>(classes.size());
    return out;
}

}  // namespace tsarag::metrics
