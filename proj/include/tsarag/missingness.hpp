#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "tsarag/core_data.hpp"
#include "tsarag/error.hpp"
#include "tsarag/rng.hpp"

namespace tsarag::missingness {

enum class Pattern { Point, Block, SpatialBlock, TemporalBlock };

inline std::string_view to_string(Pattern p) {
    switch (p) {
    case Pattern::Point: return "point";
    case Pattern::Block: return "block";
    case Pattern::SpatialBlock: return "spatial";
    case Pattern::TemporalBlock: return "temporal";
    }
    return "point";
}

inline Pattern parse_pattern(std::string_view s) {
    if (s == "point") return Pattern::Point;
    if (s == "block") return Pattern::Block;
    if (s == "spatial") return Pattern::SpatialBlock;
    if (s == "temporal") return Pattern::TemporalBlock;
    tsarag::detail::fail(ErrorKind::InvalidSpec, "unknown missingness pattern '" + std::string(s) + "'");
}

struct MissingSpec {
    Pattern pattern{Pattern::Point};
    double rate{0.1};
    double mean_block_len{8.0};
    std::size_t spatial_width{1};  // timestamp columns covered by one spatial block
    std::uint64_t seed{0};

    bool operator==(const MissingSpec&) const = default;
};

namespace detail {

inline void check_rate(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        tsarag::detail::fail(ErrorKind::InvalidRate, "missing rate must lie in (0, 1)");
    }
}

inline void check_block(std::size_t n, std::size_t t, double p, double mean_len) {
    check_rate(p);
    tsarag::detail::require(n >= 1 && t >= 1, ErrorKind::InvalidArgument, "mask needs N, T >= 1");
    tsarag::detail::require(mean_len >= 1.0, ErrorKind::InvalidSpec, "mean block length must be >= 1");
    if (mean_len > static_cast<double>(t) / 2.0) {
        tsarag::detail::fail(ErrorKind::BlockTooLong, "mean block length exceeds T/2");
    }
}

/// Span lengths uniform on [ceil(l/2), floor(3l/2)], which has mean l.
inline std::uniform_int_distribution<std::size_t> span_distribution(double mean_len, std::size_t cap) {
    auto lo = static_cast<std::size_t>(std::ceil(mean_len / 2.0));
    auto hi = static_cast<std::size_t>(std::floor(3.0 * mean_len / 2.0));
    lo = std::clamp<std::size_t>(lo, 1, cap);
    hi = std::clamp<std::size_t>(hi, lo, cap);
    return std::uniform_int_distribution<std::size_t>(lo, hi);
}

/// Drops rectangles (time span × series span) at uniform positions until
/// the missing fraction first reaches p. Overlap is allowed.
template <class TimeDist, class SeriesDist>
MaskMatrix drop_blocks(std::size_t n, std::size_t t, double p, TimeDist time_span, SeriesDist series_span,
                       std::uint64_t seed) {
    Rng rng = make_rng(seed, "mask");
    Matrix flags(n, t, 1.0);
    const auto target = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n * t)));
    std::size_t missing = 0;
    while (missing < target) {
        const std::size_t w = time_span(rng);
        const std::size_t h = series_span(rng);
        const std::size_t t0 = std::uniform_int_distribution<std::size_t>(0, t - w)(rng);
        const std::size_t s0 = std::uniform_int_distribution<std::size_t>(0, n - h)(rng);
        for (std::size_t i = s0; i < s0 + h; ++i) {
            for (std::size_t u = t0; u < t0 + w; ++u) {
                if (flags(i, u) == 1.0) {
                    flags(i, u) = 0.0;
                    ++missing;
                }
            }
        }
    }
    return MaskMatrix(std::move(flags));
}

}  // namespace detail

/// Each entry independently missing with probability p.
inline MaskMatrix point_mask(std::size_t n, std::size_t t, double p, std::uint64_t seed) {
    detail::check_rate(p);
    Rng rng = make_rng(seed, "mask");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix flags(n, t, 1.0);
    for (double& v : flags.flat()) {
        v = u(rng) < p ? 0.0 : 1.0;
    }
    return MaskMatrix(std::move(flags));
}

/// Rectangular multi-series, multi-period blocks.
inline MaskMatrix block_mask(std::size_t n, std::size_t t, double p, double mean_len, std::uint64_t seed) {
    detail::check_block(n, t, p, mean_len);
    const auto max_height = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(static_cast<double>(n) * mean_len / static_cast<double>(t))));
    return detail::drop_blocks(n, t, p, detail::span_distribution(mean_len, t),
                               std::uniform_int_distribution<std::size_t>(1, std::min(max_height, n)), seed);
}

/// Gaps confined to one series each.
inline MaskMatrix temporal_block_mask(std::size_t n, std::size_t t, double p, double mean_len, std::uint64_t seed) {
    detail::check_block(n, t, p, mean_len);
    return detail::drop_blocks(n, t, p, detail::span_distribution(mean_len, t),
                               std::uniform_int_distribution<std::size_t>(1, 1), seed);
}

/// Gaps across a contiguous range of series at `width` adjacent timestamps.
inline MaskMatrix spatial_block_mask(std::size_t n, std::size_t t, double p, double mean_len, std::uint64_t seed,
                                     std::size_t width = 1) {
    detail::check_block(n, t, p, mean_len);
    tsarag::detail::require(width >= 1 && width <= t, ErrorKind::InvalidSpec, "spatial block width must be in [1, T]");
    return detail::drop_blocks(n, t, p, std::uniform_int_distribution<std::size_t>(width, width),
                               detail::span_distribution(mean_len, n), seed);
}

inline MaskMatrix generate(const MissingSpec& spec, std::size_t n, std::size_t t) {
    switch (spec.pattern) {
    case Pattern::Point: return point_mask(n, t, spec.rate, spec.seed);
    case Pattern::Block: return block_mask(n, t, spec.rate, spec.mean_block_len, spec.seed);
    case Pattern::TemporalBlock: return temporal_block_mask(n, t, spec.rate, spec.mean_block_len, spec.seed);
    case Pattern::SpatialBlock:
        return spatial_block_mask(n, t, spec.rate, spec.mean_block_len, spec.seed, spec.spatial_width);
    }
    return point_mask(n, t, spec.rate, spec.seed);
}

}  // namespace tsarag::missingness
