#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tsarag/core_data.hpp"
#include "tsarag/predictor.hpp"

using namespace tsarag;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig small_config(bool use_pool = true) {
    ModelConfig c;
    c.tau = 4;
    c.nu = 2;
    c.pool = {4, 2, 2, 3};
    c.use_pool = use_pool;
    c.hyper.seed = 7;
    c.hyper.epochs = 50;
    c.hyper.lr = 0.1;
    return c;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.flat()) {
        v = g(rng);
    }
    return m;
}

/// Solves (XᵀX) β = Xᵀy by Gaussian elimination with partial pivoting.
std::vector<double> least_squares(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
    const std::size_t p = x[0].size();
    std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
    for (std::size_t n = 0; n < x.size(); ++n) {
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                a[i][j] += x[n][i] * x[n][j];
            }
            a[i][p] += x[n][i] * y[n];
        }
    }
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < p; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) {
                piv = r;
            }
        }
        std::swap(a[col], a[piv]);
        for (std::size_t r = 0; r < p; ++r) {
            if (r == col) {
                continue;
            }
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c <= p; ++c) {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    std::vector<double> beta(p);
    for (std::size_t i = 0; i < p; ++i) {
        beta[i] = a[i][p] / a[i][i];
    }
    return beta;
}

}  // namespace

TEST_CASE("embed with an identity matrix returns the input", "[predictor]") {
    auto cfg = small_config(false);
    cfg.pool.dim = 4;
    auto model = make_task_model(cfg);
    model.embed = Matrix(4, 4, 0.0);
    for (std::size_t k = 0; k < 4; ++k) {
        model.embed(k, k) = 1.0;
    }
    const std::vector<double> x{1.5, -2, 0.25, 9};
    CHECK(embed(model, x) == x);
    const std::vector<double> short_input{1, 2};
    CHECK_THROWS_AS(embed(model, short_input), Error);
}

TEST_CASE("zero head predicts the bias", "[predictor]") {
    auto model = make_task_model(small_config());
    model.head.fill(0.0);
    model.bias = {0.75, -1.25};
    std::mt19937_64 rng(1);
    const Matrix window = random_matrix(rng, 3, 4);
    const Matrix y = predict(model, window);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(y(i, 0) == 0.75);
        CHECK(y(i, 1) == -1.25);
    }
}

TEST_CASE("duplicate series rows get identical predictions", "[predictor]") {
    const auto model = make_task_model(small_config());
    const Matrix window = Matrix::from_rows({{1, 2, 3, 4}, {0.5, 0.1, -2, 3}, {1, 2, 3, 4}});
    const Matrix y = predict(model, window);
    CHECK(std::equal(y.row(0).begin(), y.row(0).end(), y.row(2).begin()));
}

TEST_CASE("hand-computed chain with one prompt", "[predictor]") {
    ModelConfig cfg;
    cfg.tau = 2;
    cfg.nu = 1;
    cfg.pool = {1, 1, 1, 2};
    auto model = make_task_model(cfg);
    model.embed = Matrix::from_rows({{1, 0}, {0, 1}});
    model.pool = PromptPool(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.5, -1}}), 1);
    model.proj = Projection(Matrix::from_rows({{1, 0, 1, 0}, {0, 1, 0, 1}}), 1, 1, 2);
    model.head = Matrix::from_rows({{1, 2}});
    model.bias = {0.5};
    // q = [3, 4]; h = v + q = [3.5, 3]; y = 3.5 + 6 + 0.5
    const Matrix y = predict(model, Matrix::from_rows({{3, 4}}));
    CHECK_THAT(y(0, 0), WithinAbs(10.0, 1e-12));
    const auto f = forward(model, std::vector<double>{3, 4});
    CHECK(f.retrieval.indices == std::vector<std::size_t>{0});
    CHECK(f.hidden == std::vector<double>{3.5, 3});
}

TEST_CASE("projected forward pass equals the direct one", "[predictor]") {
    auto cfg = small_config();
    cfg.pool = {6, 3, 2, 5};
    const auto model = make_task_model(cfg);
    const auto pp = project_prompts(model.pool, model.proj);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = random_matrix(rng, 1, 4);
        const auto a = forward(model, x.row(0));
        const auto b = forward(model, x.row(0), &pp);
        for (std::size_t o = 0; o < a.output.size(); ++o) {
            CHECK_THAT(b.output[o], WithinAbs(a.output[o], 1e-12));
        }
    }
}

TEST_CASE("predict is deterministic and channel independent", "[predictor][property]") {
    const auto model = make_task_model(small_config());
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix window = random_matrix(rng, 5, 4);
        const Matrix a = predict(model, window);
        CHECK(a == predict(model, window));
        std::vector<std::size_t> perm{3, 0, 4, 1, 2};
        Matrix permuted(5, 4);
        for (std::size_t i = 0; i < 5; ++i) {
            std::copy(window.row(perm[i]).begin(), window.row(perm[i]).end(), permuted.row(i).begin());
        }
        const Matrix b = predict(model, permuted);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(std::equal(b.row(i).begin(), b.row(i).end(), a.row(perm[i]).begin()));
        }
    }
}

TEST_CASE("classifier emits step-major logits", "[predictor]") {
    auto cfg = small_config();
    cfg.num_classes = 3;
    const auto model = make_task_model(cfg);
    std::mt19937_64 rng(2);
    const Matrix window = random_matrix(rng, 2, 4);
    const Matrix logits = predict(model, window);
    CHECK(logits.rows() == 1);
    CHECK(logits.cols() == 6);
    const auto labels = predict_labels(model, window);
    REQUIRE(labels.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        const auto step = logits.row(0).subspan(s * 3, 3);
        CHECK(labels[s] == std::max_element(step.begin(), step.end()) - step.begin());
    }
    CHECK_THROWS_AS(predict_labels(make_task_model(small_config()), window), Error);
}

TEST_CASE("mask channel encoding", "[predictor]") {
    auto cfg = small_config();
    cfg.channels = 2;
    const auto model = make_task_model(cfg);
    const Matrix window = Matrix::from_rows({{1, 2, 3, 4}});
    const Matrix mask = Matrix::from_rows({{1, 0, 1, 1}});
    const auto rows = encode_window(model, window, &mask);
    CHECK(rows[0] == std::vector<double>{1, 0, 3, 4, 1, 0, 1, 1});
    CHECK_THROWS_AS(encode_window(model, window, nullptr), Error);
}

TEST_CASE("analytic gradients match finite differences", "[predictor][gradient]") {
    for (int variant = 0; variant < 4; ++variant) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            auto inst = gradcheck::make_instance(seed * 101 + static_cast<std::uint64_t>(variant), variant);
            const auto task = gradcheck::check_task_loss(inst);
            INFO("variant " << variant << " seed " << seed);
            CHECK(task.embed < 1e-4);
            CHECK(task.head < 1e-4);
            CHECK(task.bias < 1e-4);
            CHECK(task.weights < 1e-4);
            CHECK(task.values < 1e-4);
            CHECK(task.keys < 1e-4);
            if (!inst.pairs.empty()) {
                const auto dpo = gradcheck::check_dpo_loss(inst, 0.7);
                CHECK(dpo.worst() < 1e-4);
            }
        }
    }
}

TEST_CASE("training examples", "[predictor][train]") {
    SECTION("constant target is fit within 50 epochs") {
        auto cfg = small_config();
        cfg.hyper.lr = 0.5;
        auto model = make_task_model(cfg);
        const Matrix x(2, 60, 1.0);
        const auto ws = make_windows(x, {0, 60}, 4, 2);
        const auto report = train(model, ws, {}, LossKind::Mse);
        CHECK(report.train_loss.size() == 50);
        CHECK(report.final_train_loss < 1e-3);
    }
    SECTION("lr = 0 leaves every parameter unchanged") {
        auto cfg = small_config();
        cfg.hyper.lr = 0.0;
        auto model = make_task_model(cfg);
        const auto before = model;
        Matrix x(1, 40);
        for (std::size_t t = 0; t < 40; ++t) {
            x(0, t) = std::sin(0.3 * static_cast<double>(t));
        }
        train(model, make_windows(x, {0, 40}, 4, 2), {}, LossKind::Mse);
        CHECK(model.embed == before.embed);
        CHECK(model.head == before.head);
        CHECK(model.bias == before.bias);
        CHECK(model.pool == before.pool);
        CHECK(model.proj == before.proj);
    }
    SECTION("sine: loss decreases and validation loss is tracked") {
        auto model = make_task_model(small_config());
        Matrix x(1, 120);
        for (std::size_t t = 0; t < 120; ++t) {
            x(0, t) = std::sin(2.0 * M_PI * static_cast<double>(t) / 12.0);
        }
        const auto report =
            train(model, make_windows(x, {0, 80}, 4, 2), make_context_windows(x, {80, 120}, 4, 2), LossKind::Mse);
        CHECK(report.final_train_loss < report.train_loss.front());
        CHECK(report.val_loss.size() == 50);
        CHECK(report.val_loss.back() < report.val_loss.front());
    }
    SECTION("divergence is reported") {
        auto cfg = small_config();
        cfg.hyper.lr = 1e6;
        auto model = make_task_model(cfg);
        Matrix x(1, 40);
        for (std::size_t t = 0; t < 40; ++t) {
            x(0, t) = 10.0 * std::sin(0.3 * static_cast<double>(t));
        }
        try {
            train(model, make_windows(x, {0, 40}, 4, 2), {}, LossKind::Mse);
            FAIL("diverging run accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NonFiniteLoss);
        }
    }
    SECTION("empty window set and wrong loss kind") {
        auto model = make_task_model(small_config());
        CHECK_THROWS_AS(train(model, WindowSet{}, {}, LossKind::Mse), Error);
        Matrix x(1, 20, 1.0);
        try {
            train(model, make_windows(x, {0, 20}, 4, 2), {}, LossKind::CrossEntropy);
            FAIL("cross entropy on a regression head accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::WrongHeadKind);
        }
    }
}

TEST_CASE("single-prompt model reaches the least-squares loss", "[predictor][train]") {
    // With K = M = 1 the chain is affine in the input, so full-batch descent
    // should approach the closed-form least-squares fit.
    ModelConfig cfg;
    cfg.tau = 3;
    cfg.nu = 1;
    cfg.pool = {1, 1, 1, 4};
    cfg.hyper.seed = 3;
    cfg.hyper.lambda_key = 1e-9;
    cfg.hyper.lr = 0.05;
    cfg.hyper.epochs = 4000;
    auto model = make_task_model(cfg);

    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(1, 200);
    x(0, 0) = g(rng);
    for (std::size_t t = 1; t < 200; ++t) {
        x(0, t) = 0.6 * x(0, t - 1) + 0.5 * g(rng) + 0.3;
    }
    const auto ws = make_windows(x, {0, 200}, 3, 1);
    std::vector<std::vector<double>> design;
    std::vector<double> y;
    for (std::size_t w = 0; w < ws.size(); ++w) {
        design.push_back({ws.inputs[w](0, 0), ws.inputs[w](0, 1), ws.inputs[w](0, 2), 1.0});
        y.push_back(ws.targets[w](0, 0));
    }
    const auto beta = least_squares(design, y);
    double ls_loss = 0.0;
    for (std::size_t n = 0; n < y.size(); ++n) {
        double pred = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            pred += beta[j] * design[n][j];
        }
        ls_loss += (pred - y[n]) * (pred - y[n]);
    }
    ls_loss /= static_cast<double>(y.size());

    const auto report = train(model, ws, {}, LossKind::Mse);
    CHECK(report.final_train_loss >= ls_loss * (1.0 - 1e-9));
    CHECK(report.final_train_loss <= ls_loss * 1.05);
}

TEST_CASE("DPO loss examples", "[predictor][dpo]") {
    const std::vector<double> pred{0.0, 0.0};
    const std::vector<double> plus{1.0, 0.0};
    const std::vector<double> minus{0.0, -1.0};
    CHECK_THAT(dpo_pair_loss(pred, plus, minus, 0.2), WithinAbs(std::log(2.0), 1e-12));
    const std::vector<double> far{5.0, 5.0};
    CHECK_THAT(dpo_pair_loss(pred, plus, far, 0.0), WithinAbs(std::log(2.0), 1e-12));
    CHECK(dpo_pair_loss(plus, plus, far, 1.0) < std::log(2.0));

    SECTION("beta = 0 gives zero gradient") {
        auto model = make_task_model(small_config());
        std::mt19937_64 rng(6);
        PreferencePair p;
        p.inputs = encode_window(model, random_matrix(rng, 2, 4), nullptr);
        p.preferred = random_matrix(rng, 2, 2);
        p.dispreferred = random_matrix(rng, 2, 2);
        std::vector<PreferencePair> pairs{p};
        auto g = Gradients::zeros(model);
        CHECK_THAT(dpo_objective(model, pairs, 0.0, &g, true), WithinAbs(std::log(2.0), 1e-12));
        for (double v : g.head.flat()) {
            CHECK(v == 0.0);
        }
        for (double v : g.pool.weights.flat()) {
            CHECK(v == 0.0);
        }
    }
}

TEST_CASE("corrupt_target replaces an exact share of entries", "[predictor][dpo]") {
    Rng rng(5);
    const Matrix target(2, 5, 100.0);
    const Matrix out = corrupt_target(target, 0.5, rng);
    std::size_t changed = 0;
    for (double v : out.flat()) {
        changed += v != 100.0 ? 1 : 0;
    }
    CHECK(changed == 5);

    SECTION("only observed entries are touched") {
        Matrix observed(2, 5, 1.0);
        observed(0, 0) = observed(0, 1) = observed(1, 4) = observed(1, 3) = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix o = corrupt_target(target, 0.5, rng, &observed);
            std::size_t n = 0;
            for (std::size_t k = 0; k < o.size(); ++k) {
                if (observed.flat()[k] == 0.0) {
                    CHECK(o.flat()[k] == 100.0);
                } else {
                    n += o.flat()[k] != 100.0 ? 1 : 0;
                }
            }
            CHECK(n == 3);
        }
    }
}

TEST_CASE("dpo_align steps head and projection only", "[predictor][dpo]") {
    auto cfg = small_config();
    cfg.hyper.dpo_epochs = 3;
    auto model = make_task_model(cfg);
    Matrix x(2, 60);
    for (std::size_t t = 0; t < 60; ++t) {
        x(0, t) = std::sin(0.4 * static_cast<double>(t));
        x(1, t) = std::cos(0.25 * static_cast<double>(t));
    }
    const auto ws = make_windows(x, {0, 60}, 4, 2);
    const auto before = model;
    const auto report = dpo_align(model, ws, 0.2, 0.5);
    CHECK(report.train_loss.size() == 3);
    CHECK(model.embed == before.embed);
    CHECK(model.pool == before.pool);
    CHECK(!(model.head == before.head));
    CHECK(!(model.proj == before.proj));

    auto cls_cfg = small_config();
    cls_cfg.num_classes = 2;
    auto cls = make_task_model(cls_cfg);
    try {
        dpo_align(cls, ws, 0.2, 0.5);
        FAIL("classifier alignment accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::WrongHeadKind);
    }
}

TEST_CASE("a window with every input missing falls back to the bias", "[predictor]") {
    auto cfg = small_config();
    cfg.channels = 2;
    auto model = make_task_model(cfg);
    model.bias = {0.25, -0.5};
    const Matrix window = Matrix::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}});
    const Matrix mask = Matrix::from_rows({{0, 0, 0, 0}, {1, 1, 0, 1}});
    const Matrix y = predict(model, window, &mask);
    CHECK(y(0, 0) == 0.25);
    CHECK(y(0, 1) == -0.5);
    CHECK(y(1, 0) != 0.25);

    // such rows still train without error
    Matrix values(2, 40, 1.0);
    Matrix flags(2, 40, 1.0);
    for (std::size_t t = 0; t < 40; ++t) {
        values(1, t) = std::sin(0.5 * static_cast<double>(t));
        if (t < 20) {
            flags(0, t) = 0.0;
        }
    }
    const auto ws = make_windows(values, {0, 40}, 4, 2, 1, &flags);
    CHECK_NOTHROW(train(model, ws, {}, LossKind::MaskedMse));
}
