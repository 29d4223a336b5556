#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "tsarag/prompt_pool.hpp"

using namespace tsarag;
using Catch::Matchers::WithinAbs;

namespace {

PromptPool pool_with_keys(const Matrix& keys, std::size_t l = 1) {
    return PromptPool(keys, Matrix(keys.rows(), l * keys.cols(), 0.1), l);
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) {
        x = g(rng);
    }
    return v;
}

}  // namespace

TEST_CASE("score is cosine similarity", "[pool]") {
    const std::vector<double> a{1, 1};
    const std::vector<double> b{1, 0};
    CHECK_THAT(score(a, b), WithinAbs(0.70711, 1e-5));
    const std::vector<double> zero{0, 0};
    try {
        score(zero, b);
        FAIL("zero vector accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ZeroVector);
    }
}

TEST_CASE("score is symmetric and scale invariant", "[pool][property]") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_vector(rng, 7);
        const auto b = random_vector(rng, 7);
        CHECK_THAT(score(a, b), WithinAbs(score(b, a), 1e-12));
        auto scaled = a;
        const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
        for (double& v : scaled) {
            v *= c;
        }
        CHECK_THAT(score(scaled, b), WithinAbs(score(a, b), 1e-9));
    }
}

TEST_CASE("retrieve_topk examples", "[pool]") {
    const auto pool = pool_with_keys(Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
    const std::vector<double> q{1, 0.1, 0};
    const auto r = retrieve_topk(pool, q, 2);
    CHECK(r.indices == std::vector<std::size_t>{0, 1});

    SECTION("ties go to the lower index") {
        const auto tied = pool_with_keys(Matrix::from_rows({{0, 1}, {-1, 0}, {1, 0}, {0, -1}, {1, 1}, {3, 0}}));
        const std::vector<double> q2{1, 0};
        const auto r2 = retrieve_topk(tied, q2, 1);
        CHECK(r2.indices == std::vector<std::size_t>{2});
        const auto r3 = retrieve_topk(tied, q2, 2);
        CHECK(r3.indices == std::vector<std::size_t>{2, 5});
    }
    SECTION("K outside [1, M]") {
        for (std::size_t k : {std::size_t{0}, std::size_t{4}}) {
            try {
                retrieve_topk(pool, q, k);
                FAIL("bad K accepted");
            } catch (const Error& e) {
                CHECK(e.kind() == ErrorKind::KOutOfRange);
            }
        }
    }
    SECTION("zero query") {
        const std::vector<double> zero{0, 0, 0};
        CHECK_THROWS_AS(retrieve_topk(pool, zero, 1), Error);
    }
}

TEST_CASE("retrieve_topk equals the sort oracle", "[pool][property]") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, m)(rng);
        Rng pool_rng(rng());
        auto pool = PromptPool::random(m, 2, d, pool_rng);
        if (trial % 3 == 0 && m > 2) {
            // duplicate keys to exercise the tie rule
            auto keys = pool.keys();
            std::copy(keys.row(0).begin(), keys.row(0).end(), keys.row(m - 1).begin());
            pool = PromptPool(keys, pool.values(), 2);
        }
        const auto q = random_vector(rng, d);
        CHECK(retrieve_topk(pool, q, k).indices == oracle::topk(pool.keys(), q, k));
    }
}

TEST_CASE("augment example and linearity", "[pool]") {
    const PromptPool pool(Matrix::from_rows({{1}}), Matrix::from_rows({{2}}), 1);
    const Projection proj(Matrix::from_rows({{1, 1}}), 1, 1, 1);
    const std::vector<double> q{3};
    const auto r = retrieve_topk(pool, q, 1);
    const auto h = augment(pool, r, q, proj);
    REQUIRE(h.size() == 1);
    CHECK_THAT(h[0], WithinAbs(5.0, 1e-12));

    SECTION("superposition in W") {
        std::mt19937_64 rng(9);
        Rng prng(3);
        const auto p = PromptPool::random(5, 2, 3, prng);
        const auto w1 = Projection::random(2, 2, 3, prng);
        const auto w2 = Projection::random(2, 2, 3, prng);
        Matrix sum = w1.weights();
        for (std::size_t k = 0; k < sum.size(); ++k) {
            sum.flat()[k] = 2.0 * w1.weights().flat()[k] - 0.5 * w2.weights().flat()[k];
        }
        const Projection combo(sum, 2, 2, 3);
        for (int trial = 0; trial < 20; ++trial) {
            const auto query = random_vector(rng, 3);
            const auto rr = retrieve_topk(p, query, 2);
            const auto a = augment(p, rr, query, w1);
            const auto b = augment(p, rr, query, w2);
            const auto c = augment(p, rr, query, combo);
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK_THAT(c[i], WithinAbs(2.0 * a[i] - 0.5 * b[i], 1e-9));
            }
        }
    }
    SECTION("superposition in the concatenated vector") {
        Rng prng(4);
        const auto w = Projection::random(1, 1, 2, prng);
        const PromptPool p1(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.3, -0.2}}), 1);
        const PromptPool p2(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{-1.1, 0.7}}), 1);
        const PromptPool p3(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.3 + 3 * -1.1, -0.2 + 3 * 0.7}}), 1);
        const std::vector<double> q1{0.5, 0.1};
        const std::vector<double> q2{0.2, -0.4};
        const std::vector<double> q3{0.5 + 3 * 0.2, 0.1 + 3 * -0.4};
        const Retrieval only{{0}, {1.0}};
        const auto a = augment(p1, only, q1, w);
        const auto b = augment(p2, only, q2, w);
        const auto c = augment(p3, only, q3, w);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK_THAT(c[i], WithinAbs(a[i] + 3 * b[i], 1e-9));
        }
    }
    SECTION("shape mismatch") {
        const Projection wrong(Matrix(1, 3), 2, 1, 1);
        CHECK_THROWS_AS(augment(pool, r, q, wrong), Error);
    }
}

TEST_CASE("pool_update steps selected prompts only", "[pool]") {
    PromptPool pool(Matrix::from_rows({{1, 0}, {0, 1}}), Matrix(2, 2, 0.0), 1);
    Projection proj(Matrix(2, 4, 0.0), 1, 1, 2);
    auto g = PoolGradient::zeros(pool, proj);
    g.keys(0, 0) = 0.5;
    g.selected[0] = 1;
    pool_update(pool, proj, g, 1.0);
    CHECK(pool.keys()(0, 0) == 0.5);
    CHECK(pool.keys()(0, 1) == 0.0);

    SECTION("unselected prompts never move") {
        Rng rng(8);
        auto p = PromptPool::random(6, 2, 3, rng);
        auto w = Projection::random(2, 2, 3, rng);
        const auto before = p;
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int step = 0; step < 100; ++step) {
            auto grad = PoolGradient::zeros(p, w);
            for (double& v : grad.keys.flat()) {
                v = gauss(rng);
            }
            for (double& v : grad.values.flat()) {
                v = gauss(rng);
            }
            grad.selected[1] = 1;
            grad.selected[4] = 1;
            pool_update(p, w, grad, 0.01);
        }
        for (std::size_t m : {0, 2, 3, 5}) {
            CHECK(std::equal(p.key(m).begin(), p.key(m).end(), before.key(m).begin()));
            CHECK(std::equal(p.value(m).begin(), p.value(m).end(), before.value(m).begin()));
        }
        CHECK(!std::equal(p.key(1).begin(), p.key(1).end(), before.key(1).begin()));
    }
    SECTION("non-finite gradients are rejected") {
        g.values(1, 0) = NAN;
        try {
            pool_update(pool, proj, g, 1.0);
            FAIL("NaN accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NonFiniteGradient);
        }
    }
}

TEST_CASE("key alignment gradient matches finite differences", "[pool][gradient]") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Rng prng(rng());
        auto pool = PromptPool::random(6, 1, 4, prng);
        const auto q = random_vector(rng, 4);
        const auto r = retrieve_topk(pool, q, 3);
        const auto ka = key_alignment_loss(q, r, pool);
        double expected = 0.0;
        for (std::size_t idx : r.indices) {
            expected += 1.0 - oracle::naive_cosine(q, pool.key(idx));
        }
        CHECK_THAT(ka.loss, WithinAbs(expected, 1e-12));
        for (std::size_t j = 0; j < r.k(); ++j) {
            auto key = pool.mutable_keys().row(r.indices[j]);
            const auto numeric = oracle::central_difference(key, [&] { return key_alignment_loss(q, r, pool).loss; });
            CHECK(oracle::max_rel_error(ka.key_grads[j], numeric) < 1e-4);
        }
    }
}

TEST_CASE("random pool follows the initialization rules", "[pool]") {
    Rng rng(2);
    const auto pool = PromptPool::random(16, 4, 32, rng);
    for (std::size_t m = 0; m < 16; ++m) {
        CHECK_THAT(norm(pool.key(m)), WithinAbs(1.0, 1e-12));
    }
    const auto proj = Projection::random(4, 4, 32, rng);
    const double bound = 1.0 / std::sqrt(17.0 * 32.0);
    for (double v : proj.weights().flat()) {
        CHECK(std::abs(v) <= bound);
    }
    CHECK(proj.input_width() == 17 * 32);
}
