#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "tsarag/core_data.hpp"

using namespace tsarag;
using Catch::Matchers::WithinAbs;

namespace {

SeriesMatrix ramp(std::size_t n, std::size_t t) {
    Matrix m(n, t);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t u = 0; u < t; ++u) {
            m(i, u) = static_cast<double>(u + 1) + 100.0 * static_cast<double>(i);
        }
    }
    return SeriesMatrix(m);
}

}  // namespace

TEST_CASE("make_windows cuts input/target pairs", "[core]") {
    const SeriesMatrix x(Matrix::from_rows({{1, 2, 3, 4, 5}}));
    const auto ws = make_windows(x, {0, 5}, 2, 1);
    REQUIRE(ws.size() == 3);
    CHECK(ws.inputs[0] == Matrix::from_rows({{1, 2}}));
    CHECK(ws.targets[0] == Matrix::from_rows({{3}}));
    CHECK(ws.inputs[2] == Matrix::from_rows({{3, 4}}));
    CHECK(ws.targets[2] == Matrix::from_rows({{5}}));
    CHECK(ws.anchor_times == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("make_windows boundary and count examples", "[core]") {
    SECTION("T equal to tau + nu gives exactly one window") {
        const auto ws = make_windows(ramp(2, 7), {0, 7}, 4, 3);
        REQUIRE(ws.size() == 1);
    }
    SECTION("N=3, T=100, tau=nu=12 gives 77 windows") {
        const auto ws = make_windows(ramp(3, 100), {0, 100}, 12, 12);
        REQUIRE(ws.size() == 77);
        CHECK(ws.inputs[0].rows() == 3);
        CHECK(ws.inputs[0].cols() == 12);
        CHECK(ws.targets[0].cols() == 12);
    }
    SECTION("short ranges are rejected") {
        REQUIRE_THROWS_AS(make_windows(ramp(1, 10), {0, 3}, 2, 2), Error);
        try {
            make_windows(ramp(1, 10), {0, 3}, 2, 2);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::RangeTooShort);
        }
    }
    SECTION("zero tau is an invalid argument") {
        REQUIRE_THROWS_AS(make_windows(ramp(1, 10), {0, 10}, 0, 2), Error);
    }
}

TEST_CASE("window count matches a brute-force enumeration", "[core][property]") {
    std::mt19937_64 rng(11);
    auto u = [&](int lo, int hi) { return static_cast<std::size_t>(std::uniform_int_distribution<int>(lo, hi)(rng)); };
    const SeriesMatrix data = ramp(1, 200);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t tau = u(1, 20);
        const std::size_t nu = u(1, 20);
        const std::size_t stride = u(1, 7);
        const std::size_t begin = u(0, 60);
        const std::size_t len = u(0, 140);
        const auto expected = oracle::window_anchors(begin, begin + len, tau, nu, stride);
        CHECK(window_count(len, tau, nu, stride) == expected.size());
        if (len >= tau + nu) {
            const auto ws = make_windows(data, {begin, begin + len}, tau, nu, stride);
            CHECK(ws.anchor_times == expected);
            // no target ever reaches range.end
            for (std::size_t a : ws.anchor_times) {
                CHECK(a + nu < begin + len);
            }
        }
    }
}

TEST_CASE("windows carry mask slices when cut with a mask", "[core]") {
    Matrix flags(2, 6, 1.0);
    flags(1, 4) = 0.0;
    const MaskMatrix mask(flags);
    const auto ws = make_windows(ramp(2, 6), {0, 6}, 3, 2, 1, &mask);
    REQUIRE(ws.has_masks());
    CHECK(ws.target_masks[0](1, 1) == 0.0);
    CHECK(ws.target_masks[1](1, 0) == 0.0);
    CHECK(ws.input_masks[1](1, 2) == 1.0);
}

TEST_CASE("context windows reach back before the target range", "[core]") {
    const auto ws = make_context_windows(ramp(1, 30), {20, 30}, 5, 2);
    REQUIRE(!ws.empty());
    CHECK(ws.anchor_times.front() == 19);
    CHECK(ws.anchor_times.back() == 27);
    for (std::size_t a : ws.anchor_times) {
        CHECK(a + 1 >= 20);
        CHECK(a + 2 < 30);
    }
}

TEST_CASE("standardize examples", "[core]") {
    const SeriesMatrix x(Matrix::from_rows({{1, 2, 3}}));
    const auto z = standardize(x, {0, 3});
    CHECK_THAT(z(0, 0), WithinAbs(-1.224744871391589, 1e-9));
    CHECK_THAT(z(0, 1), WithinAbs(0.0, 1e-12));
    CHECK_THAT(z(0, 2), WithinAbs(1.224744871391589, 1e-9));
    REQUIRE(z.stats().has_value());
    CHECK_THAT((*z.stats())[0].mean, WithinAbs(2.0, 1e-12));

    const SeriesMatrix flat(Matrix::from_rows({{4, 4, 4, 4}}));
    try {
        standardize(flat, {0, 4});
        FAIL("constant series accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateSeries);
    }
}

TEST_CASE("standardize gives zero mean and unit std on the fit range", "[core][property]") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(3.0, 7.0);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix m(3, 80);
        for (double& v : m.flat()) {
            v = g(rng);
        }
        const Interval fit{10, 60};
        const auto z = standardize(SeriesMatrix(m), fit);
        for (std::size_t i = 0; i < 3; ++i) {
            double s = 0.0, ss = 0.0;
            for (std::size_t t = fit.begin; t < fit.end; ++t) {
                s += z(i, t);
            }
            const double mean = s / 50.0;
            for (std::size_t t = fit.begin; t < fit.end; ++t) {
                ss += (z(i, t) - mean) * (z(i, t) - mean);
            }
            CHECK_THAT(mean, WithinAbs(0.0, 1e-10));
            CHECK_THAT(std::sqrt(ss / 50.0), WithinAbs(1.0, 1e-10));
        }
        const auto back = inverse_standardize(z);
        for (std::size_t k = 0; k < m.size(); ++k) {
            CHECK_THAT(back.values().flat()[k], WithinAbs(m.flat()[k], 1e-9));
        }
    }
}

TEST_CASE("standardize with a mask ignores missing entries", "[core]") {
    Matrix v = Matrix::from_rows({{1, 1000, 3}});
    Matrix f = Matrix::from_rows({{1, 0, 1}});
    const MaskMatrix mask(f);
    const auto z = standardize(SeriesMatrix(v), {0, 3}, &mask);
    CHECK_THAT((*z.stats())[0].mean, WithinAbs(2.0, 1e-12));
    CHECK_THAT((*z.stats())[0].std, WithinAbs(1.0, 1e-12));
}

TEST_CASE("inverse_standardize example and missing stats", "[core]") {
    const SeriesMatrix z(Matrix::from_rows({{1, -1}}), {"a"}, std::vector<SeriesStats>{{10.0, 4.0}});
    const auto x = inverse_standardize(z);
    CHECK(x(0, 0) == 14.0);
    CHECK(x(0, 1) == 6.0);
    try {
        inverse_standardize(SeriesMatrix(Matrix::from_rows({{1, 2}})));
        FAIL("no stats accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingStats);
    }
}

TEST_CASE("chronological_split examples", "[core]") {
    CHECK(chronological_split(10, {6, 2, 2}) == Split{{0, 6}, {6, 8}, {8, 10}});
    CHECK(chronological_split(10, {7, 1, 2}) == Split{{0, 7}, {7, 8}, {8, 10}});
    const auto s = chronological_split(100, {1, 1, 1});
    CHECK(s.train.end == 33);
    CHECK(s.val.end == 66);
    CHECK(s.test.end == 100);
    try {
        chronological_split(10, {0, 1, 1});
        FAIL("zero ratio accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidRatio);
    }
}

TEST_CASE("split ranges partition [0, T)", "[core][property]") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::array<int, 3> ratio{std::uniform_int_distribution<int>(1, 9)(rng),
                                       std::uniform_int_distribution<int>(1, 9)(rng),
                                       std::uniform_int_distribution<int>(1, 9)(rng)};
        const std::size_t t = std::uniform_int_distribution<std::size_t>(27, 5000)(rng);
        const auto s = chronological_split(t, ratio);
        CHECK(s.train.begin == 0);
        CHECK(s.train.end == s.val.begin);
        CHECK(s.val.end == s.test.begin);
        CHECK(s.test.end == t);
        CHECK(s.train.size() + s.val.size() + s.test.size() == t);
    }
}

TEST_CASE("mask and series validation", "[core]") {
    CHECK_THROWS_AS(MaskMatrix(Matrix::from_rows({{1, 0.5}})), Error);
    CHECK_THROWS_AS(SeriesMatrix(Matrix::from_rows({{1, NAN}})), Error);
    const MaskMatrix m(Matrix::from_rows({{1, 0, 0, 1}}));
    CHECK(m.missing_count() == 2);
    CHECK(m.missing_fraction() == 0.5);
}
