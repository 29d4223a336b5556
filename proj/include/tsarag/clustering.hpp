#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"
#include "tsarag/rng.hpp"

namespace tsarag::clustering {

/// Points are the rows of a matrix: for regime labeling, row t is the
/// timestamp column X^t ∈ R^N.
struct ClusterModel {
    Matrix centroids;  // K×N
    double inertia{0.0};

    std::size_t k() const noexcept { return centroids.rows(); }
};

struct KMeansResult {
    ClusterModel model;
    std::vector<int> labels;
    std::size_t iterations{0};
    std::vector<double> inertia_history;  // after every assignment step
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

/// Nearest centroid per point; ties go to the lower index.
inline std::vector<int> assign(const Matrix& points, const Matrix& centroids) {
    tsarag::detail::require(points.cols() == centroids.cols(), ErrorKind::ShapeMismatch,
                            "points and centroids differ in dimension");
    std::vector<int> labels(points.rows());
    for (std::size_t p = 0; p < points.rows(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centroids.rows(); ++c) {
            const double d = squared_distance(points.row(p), centroids.row(c));
            if (d < best) {
                best = d;
                labels[p] = static_cast<int>(c);
            }
        }
    }
    return labels;
}

inline double inertia(const Matrix& points, const Matrix& centroids, const std::vector<int>& labels) {
    double s = 0.0;
    for (std::size_t p = 0; p < points.rows(); ++p) {
        s += squared_distance(points.row(p), centroids.row(static_cast<std::size_t>(labels[p])));
    }
    return s;
}

/// Within-cluster sum of squares of a single cluster at the mean.
inline double single_cluster_inertia(const Matrix& points) {
    std::vector<double> mean(points.cols(), 0.0);
    for (std::size_t p = 0; p < points.rows(); ++p) {
        for (std::size_t k = 0; k < points.cols(); ++k) {
            mean[k] += points(p, k);
        }
    }
    for (double& v : mean) {
        v /= static_cast<double>(points.rows());
    }
    double s = 0.0;
    for (std::size_t p = 0; p < points.rows(); ++p) {
        s += squared_distance(points.row(p), mean);
    }
    return s;
}

namespace detail {

inline Matrix kmeans_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centroids(k, points.cols());
    std::vector<std::uint8_t> chosen(n, 0);
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
    chosen[first] = 1;
    std::vector<double> d2(n);
    for (std::size_t p = 0; p < n; ++p) {
        d2[p] = squared_distance(points.row(p), centroids.row(0));
    }
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            total += chosen[p] ? 0.0 : d2[p];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (std::size_t p = 0; p < n; ++p) {
                if (chosen[p]) {
                    continue;
                }
                pick = p;
                r -= d2[p];
                if (r <= 0.0) {
                    break;
                }
            }
        } else {
            // every remaining point coincides with a centroid: take the next unchosen one
            for (std::size_t p = 0; p < n && pick == n; ++p) {
                if (!chosen[p]) {
                    pick = p;
                }
            }
        }
        chosen[pick] = 1;
        std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
        for (std::size_t p = 0; p < n; ++p) {
            d2[p] = std::min(d2[p], squared_distance(points.row(p), centroids.row(c)));
        }
    }
    return centroids;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iter is reached. An empty cluster is reseeded at the point
/// farthest from its assigned centroid.
inline KMeansResult kmeans_fit(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 300) {
    if (k < 2 || k > points.rows()) {
        tsarag::detail::fail(ErrorKind::InvalidK, "K=" + std::to_string(k) + " must lie in [2, " +
                                                      std::to_string(points.rows()) + "]");
    }
    tsarag::detail::require(max_iter >= 1, ErrorKind::InvalidArgument, "max_iter must be >= 1");
    Rng rng = make_rng(seed, "kmeans");
    KMeansResult out;
    Matrix centroids = detail::kmeans_plus_plus(points, k, rng);
    std::vector<int> labels = assign(points, centroids);
    out.inertia_history.push_back(inertia(points, centroids, labels));

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        out.iterations = iter + 1;
        // update step
        Matrix sums(k, points.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t p = 0; p < points.rows(); ++p) {
            const auto c = static_cast<std::size_t>(labels[p]);
            ++counts[c];
            auto row = sums.row(c);
            for (std::size_t d = 0; d < row.size(); ++d) {
                row[d] += points(p, d);
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                continue;
            }
            for (std::size_t d = 0; d < points.cols(); ++d) {
                centroids(c, d) = sums(c, d) / static_cast<double>(counts[c]);
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) {
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t p = 0; p < points.rows(); ++p) {
                const double d = squared_distance(points.row(p), centroids.row(static_cast<std::size_t>(labels[p])));
                if (d > far_d) {
                    far_d = d;
                    far = p;
                }
            }
            if (far_d <= 0.0) {
                tsarag::detail::fail(ErrorKind::EmptyCluster,
                                     "cluster " + std::to_string(c) + " stays empty: no point left to reseed from");
            }
            std::copy(points.row(far).begin(), points.row(far).end(), centroids.row(c).begin());
            labels[far] = static_cast<int>(c);
        }
        std::vector<int> next = assign(points, centroids);
        out.inertia_history.push_back(inertia(points, centroids, next));
        const bool converged = next == labels;
        labels = std::move(next);
        if (converged) {
            break;
        }
    }
    out.model.centroids = std::move(centroids);
    out.model.inertia = out.inertia_history.back();
    out.labels = std::move(labels);
    return out;
}

/// Mean silhouette (b − a) / max(a, b); points alone in their cluster score 0.
inline double silhouette(const Matrix& points, const std::vector<int>& labels) {
    tsarag::detail::require(labels.size() == points.rows(), ErrorKind::ShapeMismatch, "one label per point expected");
    int max_label = -1;
    for (int l : labels) {
        tsarag::detail::require(l >= 0, ErrorKind::InvalidArgument, "labels must be non-negative");
        max_label = std::max(max_label, l);
    }
    const auto k = static_cast<std::size_t>(max_label + 1);
    std::vector<std::size_t> sizes(k, 0);
    for (int l : labels) {
        ++sizes[static_cast<std::size_t>(l)];
    }
    const auto present = std::count_if(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
    if (present < 2) {
        tsarag::detail::fail(ErrorKind::SingleCluster, "silhouette needs at least two non-empty clusters");
    }
    double total = 0.0;
    std::vector<double> dist_sum(k);
    for (std::size_t p = 0; p < points.rows(); ++p) {
        const auto own = static_cast<std::size_t>(labels[p]);
        if (sizes[own] == 1) {
            continue;
        }
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        for (std::size_t q = 0; q < points.rows(); ++q) {
            if (q != p) {
                dist_sum[static_cast<std::size_t>(labels[q])] += std::sqrt(squared_distance(points.row(p), points.row(q)));
            }
        }
        const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (c != own && sizes[c] > 0) {
                b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
            }
        }
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(points.rows());
}

struct Selection {
    std::size_t k{0};
    std::vector<std::size_t> candidates;
    std::vector<double> scores;  // curvature (elbow) or silhouette, aligned with candidates
};

/// Elbow rule: fits every K in [k_min−1, k_max+1] and returns the K in
/// [k_min, k_max] with the largest discrete curvature
/// I(K−1) − 2·I(K) + I(K+1); ties go to the smaller K.
inline Selection elbow_select(const Matrix& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
    if (k_max < k_min || k_max - k_min + 1 < 3) {
        tsarag::detail::fail(ErrorKind::RangeTooSmall, "elbow selection needs at least three candidate K values");
    }
    tsarag::detail::require(k_min >= 2 && k_max < points.rows(), ErrorKind::InvalidK, "K range must lie in [2, T)");
    std::vector<double> inertias;  // index j ↔ K = k_min − 1 + j
    for (std::size_t k = k_min - 1; k <= k_max + 1; ++k) {
        inertias.push_back(k == 1 ? single_cluster_inertia(points) : kmeans_fit(points, k, seed).model.inertia);
    }
    Selection sel;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const std::size_t j = k - (k_min - 1);
        const double curvature = inertias[j - 1] - 2.0 * inertias[j] + inertias[j + 1];
        sel.candidates.push_back(k);
        sel.scores.push_back(curvature);
        if (curvature > best) {
            best = curvature;
            sel.k = k;
        }
    }
    return sel;
}

/// Highest mean silhouette over [k_min, k_max]; ties go to the smaller K.
inline Selection silhouette_select(const Matrix& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
    tsarag::detail::require(k_min >= 2 && k_min <= k_max && k_max < points.rows(), ErrorKind::InvalidK,
                            "K range must lie in [2, T)");
    Selection sel;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const auto fit = kmeans_fit(points, k, seed);
        const double s = silhouette(points, fit.labels);
        sel.candidates.push_back(k);
        sel.scores.push_back(s);
        if (s > best) {
            best = s;
            sel.k = k;
        }
    }
    return sel;
}

}  // namespace tsarag::clustering
