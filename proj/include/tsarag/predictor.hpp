#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsarag/core_data.hpp"
#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"
#include "tsarag/prompt_pool.hpp"
#include "tsarag/rng.hpp"

namespace tsarag {

enum class LossKind { Mse, MaskedMse, CrossEntropy };

struct Hyper {
    double lr{0.5};
    std::size_t epochs{400};
    double lambda_key{0.1};
    double beta{0.2};
    std::uint64_t seed{0};
    // preference alignment
    std::size_t dpo_epochs{3};
    double dpo_lr{1e-3};
    double mask_frac{0.5};

    bool operator==(const Hyper&) const = default;
};

/// Shape of one task model. channels is 1 for value-only input and 2 when a
/// mask row is appended; num_classes > 0 turns the head into per-step logits.
struct ModelConfig {
    std::size_t tau{12};
    std::size_t nu{12};
    std::size_t channels{1};
    std::size_t num_classes{0};
    PoolShape pool{};
    bool use_pool{true};
    Hyper hyper{};

    bool operator==(const ModelConfig&) const = default;
};

/// Linear chain: input (c·tau) → E → query (d) → top-K prompts → W → hidden (d) → H, b → output.
/// With use_pool off the query feeds the head directly.
struct TaskModel {
    ModelConfig config;
    Matrix embed;  // d × c·tau
    PromptPool pool;
    Projection proj;
    Matrix head;  // out × d
    std::vector<double> bias;

    bool is_classifier() const noexcept { return config.num_classes > 0; }
    std::size_t input_width() const noexcept { return config.channels * config.tau; }
    std::size_t output_width() const noexcept {
        return is_classifier() ? config.nu * config.num_classes : config.nu;
    }
    std::size_t dim() const noexcept { return config.pool.dim; }

    void validate() const {
        const auto& c = config;
        detail::require(c.tau >= 1 && c.nu >= 1, ErrorKind::InvalidArgument, "tau and nu must be >= 1");
        detail::require(c.channels == 1 || c.channels == 2, ErrorKind::InvalidArgument, "channels must be 1 or 2");
        detail::require(c.num_classes == 0 || c.num_classes >= 2, ErrorKind::InvalidArgument,
                        "a classifier needs at least 2 classes");
        detail::require(c.pool.top_k >= 1 && c.pool.top_k <= c.pool.size, ErrorKind::KOutOfRange,
                        "pool top_k must be in [1, M]");
        detail::require(c.hyper.lr >= 0.0 && c.hyper.lambda_key > 0.0 && c.hyper.beta >= 0.0,
                        ErrorKind::InvalidArgument, "hyperparameters out of range (lr >= 0, lambda_key > 0, beta >= 0)");
        detail::require(embed.rows() == dim() && embed.cols() == input_width(), ErrorKind::ShapeMismatch,
                        "embedding must be d × c·tau");
        detail::require(pool.dim() == dim() && pool.size() == c.pool.size &&
                            pool.prompt_length() == c.pool.prompt_length,
                        ErrorKind::ShapeMismatch, "pool does not match the configured shape");
        detail::require(proj.dim() == dim() && proj.top_k() == c.pool.top_k &&
                            proj.prompt_length() == c.pool.prompt_length,
                        ErrorKind::ShapeMismatch, "projection does not match the configured shape");
        detail::require(head.rows() == output_width() && head.cols() == dim() && bias.size() == output_width(),
                        ErrorKind::ShapeMismatch, "head must be out × d with out biases");
    }
};

inline TaskModel make_task_model(const ModelConfig& config) {
    TaskModel m;
    m.config = config;
    const std::size_t d = config.pool.dim;
    Rng pool_rng = make_rng(config.hyper.seed, "pool");
    m.pool = PromptPool::random(config.pool.size, config.pool.prompt_length, d, pool_rng);
    m.proj = Projection::random(config.pool.top_k, config.pool.prompt_length, d, pool_rng);

    Rng rng = make_rng(config.hyper.seed, "model");
    const double eb = 1.0 / std::sqrt(static_cast<double>(config.channels * config.tau));
    std::uniform_real_distribution<double> ue(-eb, eb);
    m.embed = Matrix(d, config.channels * config.tau);
    for (double& v : m.embed.flat()) {
        v = ue(rng);
    }
    const double hb = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> uh(-hb, hb);
    m.head = Matrix(m.output_width(), d);
    for (double& v : m.head.flat()) {
        v = uh(rng);
    }
    m.bias.assign(m.output_width(), 0.0);
    m.validate();
    return m;
}

/// E · input
inline std::vector<double> embed(const TaskModel& model, std::span<const double> input) {
    if (input.size() != model.input_width()) {
        detail::fail(ErrorKind::ShapeMismatch, "embed: expected input of length " +
                                                   std::to_string(model.input_width()) + ", got " +
                                                   std::to_string(input.size()));
    }
    return matvec(model.embed, input);
}

/// W_k·v_m for every retrieval slot k and prompt m. With these cached, a
/// forward pass through the projection costs K·d additions plus the d×d
/// query block instead of a full d×(K·l+1)·d product.
struct ProjectedPrompts {
    std::size_t size{0};
    std::size_t dim{0};
    std::vector<double> data;  // [k][m][d]

    std::span<const double> at(std::size_t k, std::size_t m) const {
        return std::span<const double>(data).subspan((k * size + m) * dim, dim);
    }
};

inline ProjectedPrompts project_prompts(const PromptPool& pool, const Projection& proj) {
    const std::size_t block = pool.prompt_length() * pool.dim();
    ProjectedPrompts out{pool.size(), pool.dim(), std::vector<double>(proj.top_k() * pool.size() * pool.dim())};
    for (std::size_t k = 0; k < proj.top_k(); ++k) {
        for (std::size_t m = 0; m < pool.size(); ++m) {
            const auto v = pool.value(m);
            for (std::size_t r = 0; r < pool.dim(); ++r) {
                out.data[(k * pool.size() + m) * pool.dim() + r] = dot(proj.weights().row(r).subspan(k * block, block), v);
            }
        }
    }
    return out;
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Forward {
    std::vector<double> input;
    std::vector<double> query;
    Retrieval retrieval;          // empty when the pool is bypassed or the query is zero
    std::vector<double> context;  // [v_j1; …; v_jK; query]; empty when bypassed or projected
    std::vector<double> hidden;
    std::vector<double> output;
};

inline Forward forward(const TaskModel& model, std::span<const double> input,
                       const ProjectedPrompts* projected = nullptr) {
    Forward f;
    f.input.assign(input.begin(), input.end());
    f.query = embed(model, input);
    if (model.config.use_pool && norm(f.query) <= kMinNorm) {
        // nothing to match against (e.g. a window with every input missing):
        // skip retrieval and let the head fall back to its bias
        f.hidden.assign(model.dim(), 0.0);
    } else if (model.config.use_pool) {
        f.retrieval = retrieve_topk(model.pool, f.query, model.config.pool.top_k);
        if (projected != nullptr) {
            const std::size_t offset = model.proj.top_k() * model.pool.prompt_length() * model.dim();
            f.hidden.resize(model.dim());
            for (std::size_t r = 0; r < model.dim(); ++r) {
                f.hidden[r] = dot(model.proj.weights().row(r).subspan(offset, model.dim()), f.query);
            }
            for (std::size_t k = 0; k < f.retrieval.k(); ++k) {
                const auto p = projected->at(k, f.retrieval.indices[k]);
                for (std::size_t r = 0; r < p.size(); ++r) {
                    f.hidden[r] += p[r];
                }
            }
        } else {
            f.context = concat_prompts(model.pool, f.retrieval, f.query);
            f.hidden = matvec(model.proj.weights(), f.context);
        }
    } else {
        f.hidden = f.query;
    }
    f.output = matvec(model.head, f.hidden);
    for (std::size_t o = 0; o < f.output.size(); ++o) {
        f.output[o] += model.bias[o];
    }
    return f;
}

/// Builds model inputs for a window: one row per series (values, plus the
/// mask row with missing values zero-filled when channels == 2). Classifiers
/// get a single row, the mean over series.
inline std::vector<std::vector<double>> encode_window(const TaskModel& model, const Matrix& window,
                                                      const Matrix* mask) {
    const auto& c = model.config;
    if (window.cols() != c.tau || window.rows() == 0) {
        detail::fail(ErrorKind::ShapeMismatch, "window must have tau = " + std::to_string(c.tau) + " columns");
    }
    if ((c.channels == 2) != (mask != nullptr)) {
        detail::fail(ErrorKind::ShapeMismatch, c.channels == 2 ? "model expects a mask channel"
                                                                : "model does not take a mask channel");
    }
    if (mask != nullptr && (mask->rows() != window.rows() || mask->cols() != window.cols())) {
        detail::fail(ErrorKind::ShapeMismatch, "mask shape differs from window");
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(window.rows());
    for (std::size_t i = 0; i < window.rows(); ++i) {
        std::vector<double> row(model.input_width());
        for (std::size_t t = 0; t < c.tau; ++t) {
            if (mask != nullptr) {
                const double m = (*mask)(i, t);
                row[t] = m == 1.0 ? window(i, t) : 0.0;
                row[c.tau + t] = m;
            } else {
                row[t] = window(i, t);
            }
        }
        rows.push_back(std::move(row));
    }
    if (model.is_classifier()) {
        std::vector<double> mean(model.input_width(), 0.0);
        for (const auto& r : rows) {
            for (std::size_t k = 0; k < mean.size(); ++k) {
                mean[k] += r[k];
            }
        }
        for (double& v : mean) {
            v /= static_cast<double>(rows.size());
        }
        rows.assign(1, std::move(mean));
    }
    return rows;
}

/// Regression: N×nu predictions. Classifier: 1×(nu·num_classes) logits,
/// step-major (logits of step s occupy columns [s·Kc, (s+1)·Kc)).
inline Matrix predict(const TaskModel& model, const Matrix& window, const Matrix* mask = nullptr) {
    const auto rows = encode_window(model, window, mask);
    Matrix out(rows.size(), model.output_width());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto f = forward(model, rows[i]);
        std::copy(f.output.begin(), f.output.end(), out.row(i).begin());
    }
    return out;
}

/// Argmax class per horizon step.
inline std::vector<int> predict_labels(const TaskModel& model, const Matrix& window, const Matrix* mask = nullptr) {
    detail::require(model.is_classifier(), ErrorKind::WrongHeadKind, "predict_labels needs a classification head");
    const Matrix logits = predict(model, window, mask);
    const std::size_t kc = model.config.num_classes;
    std::vector<int> labels(model.config.nu);
    for (std::size_t s = 0; s < model.config.nu; ++s) {
        const auto step = logits.row(0).subspan(s * kc, kc);
        labels[s] = static_cast<int>(std::max_element(step.begin(), step.end()) - step.begin());
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingSample {
    std::vector<double> input;
    std::vector<double> target;  // nu values, or nu class indices for classifiers
    std::vector<double> weight;  // per-target weight (observed mask for masked_mse); empty = all ones
};

inline std::vector<TrainingSample> build_samples(const TaskModel& model, const WindowSet& windows, LossKind loss) {
    if (loss == LossKind::MaskedMse) {
        detail::require(windows.has_masks(), ErrorKind::InvalidArgument, "masked_mse needs windows cut with a mask");
    }
    const bool use_mask_channel = model.config.channels == 2;
    if (use_mask_channel) {
        detail::require(windows.has_masks(), ErrorKind::ShapeMismatch, "model expects a mask channel");
    }
    std::vector<TrainingSample> samples;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const Matrix* in_mask = use_mask_channel ? &windows.input_masks[w] : nullptr;
        auto rows = encode_window(model, windows.inputs[w], in_mask);
        const Matrix& target = windows.targets[w];
        detail::require(target.cols() == model.config.nu, ErrorKind::ShapeMismatch, "target width differs from nu");
        if (model.is_classifier()) {
            detail::require(target.rows() == 1, ErrorKind::ShapeMismatch, "classifier targets are 1×nu labels");
            samples.push_back({std::move(rows[0]), std::vector<double>(target.row(0).begin(), target.row(0).end()), {}});
            continue;
        }
        detail::require(target.rows() == rows.size(), ErrorKind::ShapeMismatch, "target rows differ from series count");
        for (std::size_t i = 0; i < rows.size(); ++i) {
            TrainingSample s;
            s.input = std::move(rows[i]);
            s.target.assign(target.row(i).begin(), target.row(i).end());
            if (loss == LossKind::MaskedMse) {
                const auto m = windows.target_masks[w].row(i);
                s.weight.assign(m.begin(), m.end());
            }
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

struct Gradients {
    Matrix embed;
    PoolGradient pool;
    Matrix head;
    std::vector<double> bias;

    static Gradients zeros(const TaskModel& model) {
        Gradients g;
        g.embed = Matrix(model.embed.rows(), model.embed.cols());
        g.pool = PoolGradient::zeros(model.pool, model.proj);
        g.head = Matrix(model.head.rows(), model.head.cols());
        g.bias.assign(model.bias.size(), 0.0);
        return g;
    }

    bool finite() const {
        return all_finite(embed.flat()) && all_finite(pool.keys.flat()) && all_finite(pool.values.flat()) &&
               all_finite(pool.weights.flat()) && all_finite(head.flat()) && all_finite(bias);
    }
};

struct LossValue {
    double task{0.0};
    double key{0.0};  // mean alignment surrogate per sample
    double total{0.0};
};

namespace detail {

/// Backpropagates d(loss)/d(output) through head, projection and embedding,
/// accumulating into grads. Retrieval is treated as a constant selection.
inline void backprop(const TaskModel& model, const Forward& f, std::span<const double> grad_out, Gradients& grads,
                     bool through_embedding = true) {
    add_outer(grads.head, grad_out, f.hidden);
    for (std::size_t o = 0; o < grad_out.size(); ++o) {
        grads.bias[o] += grad_out[o];
    }
    const std::vector<double> grad_hidden = matvec_transposed(model.head, grad_out);
    std::vector<double> grad_query;
    if (model.config.use_pool && f.retrieval.indices.empty()) {
        return;  // zero query: hidden did not depend on W, the values or E
    }
    if (model.config.use_pool) {
        add_outer(grads.pool.weights, grad_hidden, f.context);
        if (!through_embedding) {
            return;
        }
        const std::vector<double> grad_context = matvec_transposed(model.proj.weights(), grad_hidden);
        const std::size_t block = model.pool.prompt_length() * model.pool.dim();
        for (std::size_t k = 0; k < f.retrieval.k(); ++k) {
            auto gv = grads.pool.values.row(f.retrieval.indices[k]);
            for (std::size_t c = 0; c < block; ++c) {
                gv[c] += grad_context[k * block + c];
            }
        }
        grads.pool.mark(f.retrieval);
        grad_query.assign(grad_context.end() - static_cast<std::ptrdiff_t>(model.dim()), grad_context.end());
    } else {
        if (!through_embedding) {
            return;
        }
        grad_query = grad_hidden;
    }
    add_outer(grads.embed, grad_query, f.input);
}

/// Per-(slot, prompt) sums of d(loss)/d(hidden), the only per-sample
/// quantity the W_k and value gradients depend on.
struct SlotGradients {
    std::size_t size{0};
    std::size_t dim{0};
    std::vector<double> data;  // [k][m][d]
    std::vector<std::uint8_t> used;

    SlotGradients(std::size_t top_k, std::size_t pool_size, std::size_t d)
        : size(pool_size), dim(d), data(top_k * pool_size * d, 0.0), used(top_k * pool_size, 0) {}
};

/// Backpropagation for a pass made with ProjectedPrompts. Gradients of the
/// value blocks of W and of the values are deferred to finish_projected.
inline void backprop_projected(const TaskModel& model, const Forward& f, std::span<const double> grad_out,
                               Gradients& grads, SlotGradients& slots) {
    add_outer(grads.head, grad_out, f.hidden);
    for (std::size_t o = 0; o < grad_out.size(); ++o) {
        grads.bias[o] += grad_out[o];
    }
    const std::size_t d = model.dim();
    const std::vector<double> grad_hidden = matvec_transposed(model.head, grad_out);
    const std::size_t offset = model.proj.top_k() * model.pool.prompt_length() * d;
    std::vector<double> grad_query(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const double gh = grad_hidden[r];
        if (gh == 0.0) {
            continue;
        }
        auto gw = grads.pool.weights.row(r).subspan(offset, d);
        const auto w = model.proj.weights().row(r).subspan(offset, d);
        for (std::size_t c = 0; c < d; ++c) {
            gw[c] += gh * f.query[c];
            grad_query[c] += gh * w[c];
        }
    }
    for (std::size_t k = 0; k < f.retrieval.k(); ++k) {
        const std::size_t slot = k * slots.size + f.retrieval.indices[k];
        slots.used[slot] = 1;
        double* acc = slots.data.data() + slot * d;
        for (std::size_t r = 0; r < d; ++r) {
            acc[r] += grad_hidden[r];
        }
    }
    grads.pool.mark(f.retrieval);
    add_outer(grads.embed, grad_query, f.input);
}

inline void finish_projected(const TaskModel& model, const SlotGradients& slots, Gradients& grads) {
    const std::size_t d = model.dim();
    const std::size_t block = model.pool.prompt_length() * d;
    for (std::size_t k = 0; k < model.proj.top_k(); ++k) {
        for (std::size_t m = 0; m < slots.size; ++m) {
            const std::size_t slot = k * slots.size + m;
            if (!slots.used[slot]) {
                continue;
            }
            const auto g = std::span<const double>(slots.data).subspan(slot * d, d);
            const auto v = model.pool.value(m);
            auto gv = grads.pool.values.row(m);
            for (std::size_t r = 0; r < d; ++r) {
                auto gw = grads.pool.weights.row(r).subspan(k * block, block);
                const auto w = model.proj.weights().row(r).subspan(k * block, block);
                const double gr = g[r];
                for (std::size_t c = 0; c < block; ++c) {
                    gw[c] += gr * v[c];
                    gv[c] += gr * w[c];
                }
            }
        }
    }
}

inline double log_softmax_at(std::span<const double> logits, std::size_t k, std::vector<double>* probs) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) {
        z += std::exp(v - mx);
    }
    const double lse = mx + std::log(z);
    if (probs != nullptr) {
        probs->resize(logits.size());
        for (std::size_t c = 0; c < logits.size(); ++c) {
            (*probs)[c] = std::exp(logits[c] - lse);
        }
    }
    return logits[k] - lse;
}

}  // namespace detail

/// L_task + lambda_key · L_key over the samples. L_task is mean squared error
/// (over observed targets for masked_mse) or mean per-step cross entropy.
/// L_key is the mean per-sample alignment surrogate. Fills grads when given.
inline LossValue evaluate_loss(const TaskModel& model, std::span<const TrainingSample> samples, LossKind loss,
                               Gradients* grads = nullptr) {
    detail::require(!samples.empty(), ErrorKind::EmptyWindowSet, "no training samples");
    if ((loss == LossKind::CrossEntropy) != model.is_classifier()) {
        detail::fail(ErrorKind::WrongHeadKind, "loss kind does not match the head");
    }
    double denom = 0.0;
    for (const auto& s : samples) {
        if (loss == LossKind::MaskedMse) {
            denom += std::accumulate(s.weight.begin(), s.weight.end(), 0.0);
        } else {
            denom += static_cast<double>(s.target.size());
        }
    }
    const double n_samples = static_cast<double>(samples.size());
    const double lambda = model.config.hyper.lambda_key;

    LossValue out;
    std::vector<double> grad_out(model.output_width());
    std::vector<double> probs;
    const bool pooled = model.config.use_pool;
    const ProjectedPrompts projected = pooled ? project_prompts(model.pool, model.proj) : ProjectedPrompts{};
    detail::SlotGradients slots(pooled ? model.proj.top_k() : 0, model.pool.size(), model.dim());
    for (const auto& s : samples) {
        const Forward f = forward(model, s.input, pooled ? &projected : nullptr);
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
        if (loss == LossKind::CrossEntropy) {
            const std::size_t kc = model.config.num_classes;
            for (std::size_t step = 0; step < model.config.nu; ++step) {
                const auto label = static_cast<std::size_t>(s.target[step]);
                detail::require(label < kc, ErrorKind::InvalidArgument, "class label outside [0, num_classes)");
                const auto logits = std::span<const double>(f.output).subspan(step * kc, kc);
                out.task -= detail::log_softmax_at(logits, label, &probs);
                for (std::size_t c = 0; c < kc; ++c) {
                    grad_out[step * kc + c] = (probs[c] - (c == label ? 1.0 : 0.0)) / denom;
                }
            }
        } else if (denom > 0.0) {
            for (std::size_t o = 0; o < s.target.size(); ++o) {
                const double w = s.weight.empty() ? 1.0 : s.weight[o];
                const double e = f.output[o] - s.target[o];
                out.task += w * e * e;
                grad_out[o] = 2.0 * w * e / denom;
            }
        }
        if (model.config.use_pool && f.retrieval.k() > 0) {
            const KeyAlignment ka = key_alignment_loss(f.query, f.retrieval, model.pool);
            out.key += ka.loss;
            if (grads != nullptr) {
                for (std::size_t k = 0; k < f.retrieval.k(); ++k) {
                    auto gk = grads->pool.keys.row(f.retrieval.indices[k]);
                    for (std::size_t c = 0; c < gk.size(); ++c) {
                        gk[c] += lambda * ka.key_grads[k][c] / n_samples;
                    }
                }
            }
        }
        if (grads != nullptr) {
            if (pooled) {
                detail::backprop_projected(model, f, grad_out, *grads, slots);
            } else {
                detail::backprop(model, f, grad_out, *grads);
            }
        }
    }
    if (grads != nullptr && pooled) {
        detail::finish_projected(model, slots, *grads);
    }
    out.task = denom > 0.0 ? out.task / denom : 0.0;
    out.key /= n_samples;
    out.total = out.task + lambda * out.key;
    return out;
}

struct TrainReport {
    std::vector<double> train_loss;  // task loss at the start of each epoch
    std::vector<double> val_loss;    // task loss after each epoch's step (empty without validation windows)
    std::vector<double> epoch_seconds;
    double final_train_loss{std::numeric_limits<double>::quiet_NaN()};
};

namespace detail {

inline void apply_step(TaskModel& model, const Gradients& g, double lr, bool update_embedding) {
    if (lr == 0.0) {
        return;
    }
    if (update_embedding) {
        auto e = model.embed.flat();
        const auto ge = g.embed.flat();
        for (std::size_t k = 0; k < e.size(); ++k) {
            e[k] -= lr * ge[k];
        }
    }
    auto h = model.head.flat();
    const auto gh = g.head.flat();
    for (std::size_t k = 0; k < h.size(); ++k) {
        h[k] -= lr * gh[k];
    }
    for (std::size_t k = 0; k < model.bias.size(); ++k) {
        model.bias[k] -= lr * g.bias[k];
    }
    if (model.config.use_pool) {
        pool_update(model.pool, model.proj, g.pool, lr);
    }
}

}  // namespace detail

/// Full-batch gradient descent for hyper.epochs epochs on
/// L_task + lambda_key · L_key. Requires exclusive access to the model.
inline TrainReport train(TaskModel& model, const WindowSet& windows, const WindowSet& val, LossKind loss) {
    if (windows.empty()) {
        detail::fail(ErrorKind::EmptyWindowSet, "training window set is empty");
    }
    model.validate();
    const auto samples = build_samples(model, windows, loss);
    const auto val_samples = val.empty() ? std::vector<TrainingSample>{} : build_samples(model, val, loss);
    const double lr = model.config.hyper.lr;

    TrainReport report;
    for (std::size_t epoch = 0; epoch < model.config.hyper.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        Gradients g = Gradients::zeros(model);
        const LossValue lv = evaluate_loss(model, samples, loss, &g);
        if (!std::isfinite(lv.total) || !g.finite()) {
            detail::fail(ErrorKind::NonFiniteLoss,
                         "training diverged at epoch " + std::to_string(epoch) + "; lower the learning rate");
        }
        report.train_loss.push_back(lv.task);
        detail::apply_step(model, g, lr, true);
        if (!val_samples.empty()) {
            const double v = evaluate_loss(model, val_samples, loss).task;
            if (!std::isfinite(v)) {
                detail::fail(ErrorKind::NonFiniteLoss, "validation loss diverged at epoch " + std::to_string(epoch));
            }
            report.val_loss.push_back(v);
        }
        report.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    const double final_loss = evaluate_loss(model, samples, loss).task;
    if (!std::isfinite(final_loss)) {
        detail::fail(ErrorKind::NonFiniteLoss, "training diverged; lower the learning rate");
    }
    report.final_train_loss = final_loss;
    return report;
}

// ---------------------------------------------------------------------------
// Preference alignment

/// -log σ(β·(‖ŷ−y⁻‖² − ‖ŷ−y⁺‖²)) for one preference pair.
inline double dpo_pair_loss(std::span<const double> prediction, std::span<const double> preferred,
                            std::span<const double> dispreferred, double beta) {
    double margin = 0.0;
    for (std::size_t k = 0; k < prediction.size(); ++k) {
        const double dm = prediction[k] - dispreferred[k];
        const double dp = prediction[k] - preferred[k];
        margin += dm * dm - dp * dp;
    }
    const double x = -beta * margin;  // softplus(-β·margin)
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

/// Copy of target with exactly round(frac · n) entries, chosen uniformly,
/// replaced by unit-normal noise. n counts all entries, or only the entries
/// flagged 1 in `observed` when given; the others are left untouched.
inline Matrix corrupt_target(const Matrix& target, double frac, Rng& rng, const Matrix* observed = nullptr) {
    detail::require(observed == nullptr || (observed->rows() == target.rows() && observed->cols() == target.cols()),
                    ErrorKind::ShapeMismatch, "observed mask shape differs from target");
    Matrix out = target;
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < target.size(); ++k) {
        if (observed == nullptr || observed->flat()[k] == 1.0) {
            order.push_back(k);
        }
    }
    std::shuffle(order.begin(), order.end(), rng);
    const auto count = static_cast<std::size_t>(std::llround(frac * static_cast<double>(order.size())));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t k = 0; k < count; ++k) {
        out.flat()[order[k]] = noise(rng);
    }
    return out;
}

struct PreferencePair {
    std::vector<std::vector<double>> inputs;  // one encoded row per series
    Matrix preferred;                         // N×nu
    Matrix dispreferred;                      // N×nu
    std::optional<Matrix> observed;           // target mask; unobserved entries are never corrupted
};

/// Mean DPO loss over pairs. By default gradients flow into the head and W
/// only; `full_chain` also backpropagates into the values and the embedding.
inline double dpo_objective(const TaskModel& model, std::span<const PreferencePair> pairs, double beta,
                            Gradients* grads = nullptr, bool full_chain = false) {
    detail::require(!pairs.empty(), ErrorKind::EmptyWindowSet, "no preference pairs");
    double total = 0.0;
    const double n = static_cast<double>(pairs.size());
    for (const auto& pair : pairs) {
        std::vector<Forward> passes;
        double margin = 0.0;
        for (std::size_t i = 0; i < pair.inputs.size(); ++i) {
            passes.push_back(forward(model, pair.inputs[i]));
            const auto& y = passes.back().output;
            for (std::size_t o = 0; o < y.size(); ++o) {
                const double dm = y[o] - pair.dispreferred(i, o);
                const double dp = y[o] - pair.preferred(i, o);
                margin += dm * dm - dp * dp;
            }
        }
        const double x = -beta * margin;
        total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
        if (grads == nullptr) {
            continue;
        }
        // dL/dmargin = -β·σ(-β·margin); dmargin/dŷ = 2(y⁺ − y⁻)
        const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        const double coef = -beta * sig / n;
        std::vector<double> grad_out(model.output_width());
        for (std::size_t i = 0; i < passes.size(); ++i) {
            for (std::size_t o = 0; o < grad_out.size(); ++o) {
                grad_out[o] = coef * 2.0 * (pair.preferred(i, o) - pair.dispreferred(i, o));
            }
            detail::backprop(model, passes[i], grad_out, *grads, full_chain);
        }
    }
    return total / n;
}

/// Preference alignment against corrupted targets: each epoch redraws the
/// dispreferred targets (mask_frac of entries replaced by unit-normal noise)
/// and takes one gradient step on head and W with hyper.dpo_lr.
inline TrainReport dpo_align(TaskModel& model, const WindowSet& windows, double beta, double mask_frac) {
    if (model.is_classifier()) {
        detail::fail(ErrorKind::WrongHeadKind, "preference alignment applies to regression heads only");
    }
    detail::require(beta >= 0.0, ErrorKind::InvalidArgument, "beta must be >= 0");
    detail::require(mask_frac > 0.0 && mask_frac < 1.0, ErrorKind::InvalidArgument, "mask_frac must be in (0, 1)");
    if (windows.empty()) {
        detail::fail(ErrorKind::EmptyWindowSet, "alignment window set is empty");
    }
    model.validate();
    const bool use_mask_channel = model.config.channels == 2;
    std::vector<PreferencePair> pairs;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        PreferencePair p;
        p.inputs = encode_window(model, windows.inputs[w], use_mask_channel ? &windows.input_masks[w] : nullptr);
        p.preferred = windows.targets[w];
        if (windows.has_masks()) {
            p.observed = windows.target_masks[w];
        }
        pairs.push_back(std::move(p));
    }
    Rng rng = make_rng(model.config.hyper.seed, "dpo");
    TrainReport report;
    for (std::size_t epoch = 0; epoch < model.config.hyper.dpo_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        for (auto& p : pairs) {
            p.dispreferred = corrupt_target(p.preferred, mask_frac, rng, p.observed ? &*p.observed : nullptr);
        }
        Gradients g = Gradients::zeros(model);
        const double loss = dpo_objective(model, pairs, beta, &g);
        if (!std::isfinite(loss) || !g.finite()) {
            detail::fail(ErrorKind::NonFiniteLoss, "preference alignment diverged");
        }
        report.train_loss.push_back(loss);
        detail::apply_step(model, g, model.config.hyper.dpo_lr, /*update_embedding=*/false);
        report.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    report.final_train_loss = report.train_loss.empty() ? 0.0 : report.train_loss.back();
    return report;
}

}  // namespace tsarag
