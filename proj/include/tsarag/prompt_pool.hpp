#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"
#include "tsarag/rng.hpp"

namespace tsarag {

inline constexpr double kMinNorm = 1e-12;

struct PoolShape {
    std::size_t size{32};           // M prompts
    std::size_t top_k{4};           // K retrieved per query
    std::size_t prompt_length{4};   // l rows per value matrix
    std::size_t dim{32};            // d embedding width

    bool operator==(const PoolShape&) const = default;
};

/// Key-value prompt pool. Key m is a d-vector; value m is an l×d matrix
/// stored flattened row-major as row m of `values()`.
class PromptPool {
public:
    PromptPool() = default;

    PromptPool(Matrix keys, Matrix values, std::size_t prompt_length)
        : keys_(std::move(keys)), values_(std::move(values)), prompt_length_(prompt_length) {
        validate();
    }

    /// Random unit keys and N(0, 0.02²) values.
    static PromptPool random(std::size_t size, std::size_t prompt_length, std::size_t dim, Rng& rng) {
        detail::require(size >= 1 && prompt_length >= 1 && dim >= 1, ErrorKind::InvalidArgument,
                        "pool dimensions must be >= 1");
        std::normal_distribution<double> unit(0.0, 1.0);
        Matrix keys(size, dim);
        for (std::size_t m = 0; m < size; ++m) {
            auto k = keys.row(m);
            double n = 0.0;
            while (n <= kMinNorm) {
                for (double& v : k) {
                    v = unit(rng);
                }
                n = norm(k);
            }
            for (double& v : k) {
                v /= n;
            }
        }
        std::normal_distribution<double> small(0.0, 0.02);
        Matrix values(size, prompt_length * dim);
        for (double& v : values.flat()) {
            v = small(rng);
        }
        return PromptPool(std::move(keys), std::move(values), prompt_length);
    }

    std::size_t size() const noexcept { return keys_.rows(); }
    std::size_t prompt_length() const noexcept { return prompt_length_; }
    std::size_t dim() const noexcept { return keys_.cols(); }

    std::span<const double> key(std::size_t m) const { return keys_.row(m); }
    std::span<const double> value(std::size_t m) const { return values_.row(m); }
    const Matrix& keys() const noexcept { return keys_; }
    const Matrix& values() const noexcept { return values_; }
    Matrix& mutable_keys() noexcept { return keys_; }
    Matrix& mutable_values() noexcept { return values_; }

    void validate() const {
        detail::require(keys_.rows() >= 1 && keys_.cols() >= 1 && prompt_length_ >= 1, ErrorKind::InvalidArgument,
                        "pool needs M, l, d >= 1");
        detail::require(values_.rows() == keys_.rows() && values_.cols() == prompt_length_ * keys_.cols(),
                        ErrorKind::ShapeMismatch, "value matrices must be l×d for every key");
        detail::require(all_finite(keys_.flat()) && all_finite(values_.flat()), ErrorKind::InvalidArgument,
                        "pool entries must be finite");
        for (std::size_t m = 0; m < size(); ++m) {
            if (norm(key(m)) <= kMinNorm) {
                detail::fail(ErrorKind::ZeroVector, "key " + std::to_string(m) + " has zero norm");
            }
        }
    }

    bool operator==(const PromptPool&) const = default;

private:
    Matrix keys_;
    Matrix values_;
    std::size_t prompt_length_{0};
};

/// Selected prompt indices in retrieval order (score descending, ties by
/// ascending index) with their cosine scores.
struct Retrieval {
    std::vector<std::size_t> indices;
    std::vector<double> scores;

    std::size_t k() const noexcept { return indices.size(); }
    bool operator==(const Retrieval&) const = default;
};

/// Learned d × (K·l + 1)·d map applied to the concatenated prompt context.
class Projection {
public:
    Projection() = default;

    Projection(Matrix weights, std::size_t top_k, std::size_t prompt_length, std::size_t dim)
        : weights_(std::move(weights)), top_k_(top_k), prompt_length_(prompt_length), dim_(dim) {
        detail::require(weights_.rows() == dim_ && weights_.cols() == input_width(), ErrorKind::ShapeMismatch,
                        "projection must be d × (K·l+1)·d");
        detail::require(all_finite(weights_.flat()), ErrorKind::InvalidArgument, "projection has non-finite entries");
    }

    /// Uniform in ±1/sqrt((K·l+1)·d).
    static Projection random(std::size_t top_k, std::size_t prompt_length, std::size_t dim, Rng& rng) {
        const std::size_t width = (top_k * prompt_length + 1) * dim;
        const double bound = 1.0 / std::sqrt(static_cast<double>(width));
        std::uniform_real_distribution<double> u(-bound, bound);
        Matrix w(dim, width);
        for (double& v : w.flat()) {
            v = u(rng);
        }
        return Projection(std::move(w), top_k, prompt_length, dim);
    }

    std::size_t top_k() const noexcept { return top_k_; }
    std::size_t prompt_length() const noexcept { return prompt_length_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t input_width() const noexcept { return (top_k_ * prompt_length_ + 1) * dim_; }
    const Matrix& weights() const noexcept { return weights_; }
    Matrix& mutable_weights() noexcept { return weights_; }

    bool operator==(const Projection&) const = default;

private:
    Matrix weights_;
    std::size_t top_k_{0};
    std::size_t prompt_length_{0};
    std::size_t dim_{0};
};

/// Cosine similarity γ(query, key).
inline double score(std::span<const double> query, std::span<const double> key) {
    detail::require(query.size() == key.size(), ErrorKind::ShapeMismatch, "score: dimension mismatch");
    const double nq = norm(query);
    const double nk = norm(key);
    if (nq <= kMinNorm || nk <= kMinNorm) {
        detail::fail(ErrorKind::ZeroVector, "cosine similarity of a zero vector");
    }
    return std::clamp(dot(query, key) / (nq * nk), -1.0, 1.0);
}

inline Retrieval retrieve_topk(const PromptPool& pool, std::span<const double> query, std::size_t k) {
    if (k < 1 || k > pool.size()) {
        detail::fail(ErrorKind::KOutOfRange,
                     "K=" + std::to_string(k) + " outside [1, " + std::to_string(pool.size()) + "]");
    }
    detail::require(query.size() == pool.dim(), ErrorKind::ShapeMismatch, "query dimension differs from pool");
    if (norm(query) <= kMinNorm) {
        detail::fail(ErrorKind::ZeroVector, "retrieval query has zero norm");
    }
    std::vector<double> scores(pool.size());
    for (std::size_t m = 0; m < pool.size(); ++m) {
        scores[m] = score(query, pool.key(m));
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                      });
    Retrieval r;
    r.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t idx : r.indices) {
        r.scores.push_back(scores[idx]);
    }
    return r;
}

/// Flattens [v_{j1}; …; v_{jK}; query] row-major into a (K·l+1)·d vector.
inline std::vector<double> concat_prompts(const PromptPool& pool, const Retrieval& retrieval,
                                          std::span<const double> query) {
    detail::require(query.size() == pool.dim(), ErrorKind::ShapeMismatch, "query dimension differs from pool");
    std::vector<double> flat;
    flat.reserve((retrieval.k() * pool.prompt_length() + 1) * pool.dim());
    for (std::size_t idx : retrieval.indices) {
        detail::require(idx < pool.size(), ErrorKind::ShapeMismatch, "retrieval index outside pool");
        const auto v = pool.value(idx);
        flat.insert(flat.end(), v.begin(), v.end());
    }
    flat.insert(flat.end(), query.begin(), query.end());
    return flat;
}

/// W · [v_{j1}; …; v_{jK}; query]
inline std::vector<double> augment(const PromptPool& pool, const Retrieval& retrieval, std::span<const double> query,
                                   const Projection& proj) {
    if (proj.top_k() != retrieval.k() || proj.prompt_length() != pool.prompt_length() || proj.dim() != pool.dim()) {
        detail::fail(ErrorKind::ShapeMismatch, "projection shape does not match (K, l, d) of the retrieval");
    }
    return matvec(proj.weights(), concat_prompts(pool, retrieval, query));
}

/// Same-shaped gradients for keys, values and W, plus which prompts were
/// selected at least once. Only selected prompts are touched by pool_update.
struct PoolGradient {
    Matrix keys;
    Matrix values;
    Matrix weights;
    std::vector<std::uint8_t> selected;

    static PoolGradient zeros(const PromptPool& pool, const Projection& proj) {
        PoolGradient g;
        g.keys = Matrix(pool.keys().rows(), pool.keys().cols());
        g.values = Matrix(pool.values().rows(), pool.values().cols());
        g.weights = Matrix(proj.weights().rows(), proj.weights().cols());
        g.selected.assign(pool.size(), 0);
        return g;
    }

    void mark(const Retrieval& r) {
        for (std::size_t idx : r.indices) {
            selected[idx] = 1;
        }
    }
};

/// In-place SGD step θ ← θ − lr·g on selected keys, selected values and W.
/// Requires exclusive access to pool and projection.
inline void pool_update(PromptPool& pool, Projection& proj, const PoolGradient& grads, double lr) {
    detail::require(lr > 0.0, ErrorKind::InvalidArgument, "learning rate must be positive");
    detail::require(grads.keys.rows() == pool.keys().rows() && grads.keys.cols() == pool.keys().cols() &&
                        grads.values.rows() == pool.values().rows() &&
                        grads.values.cols() == pool.values().cols() &&
                        grads.weights.rows() == proj.weights().rows() &&
                        grads.weights.cols() == proj.weights().cols() && grads.selected.size() == pool.size(),
                    ErrorKind::ShapeMismatch, "gradient shapes do not match pool/projection");
    if (!all_finite(grads.keys.flat()) || !all_finite(grads.values.flat()) || !all_finite(grads.weights.flat())) {
        detail::fail(ErrorKind::NonFiniteGradient, "pool gradient contains NaN or infinity");
    }
    for (std::size_t m = 0; m < pool.size(); ++m) {
        if (grads.selected[m] == 0) {
            continue;
        }
        auto k = pool.mutable_keys().row(m);
        const auto gk = grads.keys.row(m);
        for (std::size_t c = 0; c < k.size(); ++c) {
            k[c] -= lr * gk[c];
        }
        auto v = pool.mutable_values().row(m);
        const auto gv = grads.values.row(m);
        for (std::size_t c = 0; c < v.size(); ++c) {
            v[c] -= lr * gv[c];
        }
    }
    auto w = proj.mutable_weights().flat();
    const auto gw = grads.weights.flat();
    for (std::size_t c = 0; c < w.size(); ++c) {
        w[c] -= lr * gw[c];
    }
}

struct KeyAlignment {
    double loss{0.0};
    std::vector<std::vector<double>> key_grads;  // aligned with retrieval.indices
};

/// L_key = Σ_{j∈J} (1 − γ(query, k_j)) and its gradient with respect to each
/// selected key, holding the query fixed.
inline KeyAlignment key_alignment_loss(std::span<const double> query, const Retrieval& retrieval,
                                       const PromptPool& pool) {
    const double nq = norm(query);
    if (nq <= kMinNorm) {
        detail::fail(ErrorKind::ZeroVector, "alignment query has zero norm");
    }
    KeyAlignment out;
    for (std::size_t idx : retrieval.indices) {
        const auto k = pool.key(idx);
        const double nk = norm(k);
        if (nk <= kMinNorm) {
            detail::fail(ErrorKind::ZeroVector, "key " + std::to_string(idx) + " has zero norm");
        }
        const double cos = dot(query, k) / (nq * nk);
        out.loss += 1.0 - cos;
        // d(1 - cos)/dk = -(q / (|q||k|) - cos · k / |k|²)
        std::vector<double> g(k.size());
        for (std::size_t c = 0; c < k.size(); ++c) {
            g[c] = -(query[c] / (nq * nk) - cos * k[c] / (nk * nk));
        }
        out.key_grads.push_back(std::move(g));
    }
    return out;
}

}  // namespace tsarag
