#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tsarag/anomaly.hpp"
#include "tsarag/clustering.hpp"
#include "tsarag/core_data.hpp"
#include "tsarag/error.hpp"
#include "tsarag/metrics.hpp"
#include "tsarag/predictor.hpp"
#include "tsarag/remote.hpp"
#include "tsarag/task.hpp"

namespace tsarag::agents {

// ---------------------------------------------------------------------------
// Requests, responses, traces

struct TaskRequest {
    std::string text;
    std::string data_ref;
    std::map<std::string, double> params;  // tau, nu, w_a, K overrides
};

struct TraceStep {
    std::string thought;
    std::string action;
    std::string observation;
    bool operator==(const TraceStep&) const = default;
};

struct SeriesPoint {
    std::size_t t{0};
    std::string series_id;
    double value{0.0};  // prediction (forecast) or imputed value (impute)
    double truth{0.0};
    bool operator==(const SeriesPoint&) const = default;
};

struct SeriesPayload {
    std::vector<SeriesPoint> points;
    bool operator==(const SeriesPayload&) const = default;
};

struct AnomalyPayload {
    std::vector<std::size_t> t;
    std::vector<double> score;
    std::vector<int> flag;   // raw flags, before point adjustment
    std::vector<int> label;  // empty when unlabeled
    double threshold{0.0};
    bool operator==(const AnomalyPayload&) const = default;
};

struct ClassifyPayload {
    std::vector<std::size_t> t;
    std::vector<int> predicted;
    std::vector<int> label;
    std::size_t num_classes{0};
    bool operator==(const ClassifyPayload&) const = default;
};

using Payload = std::variant<SeriesPayload, AnomalyPayload, ClassifyPayload>;

struct TaskResponse {
    TaskKind kind{TaskKind::Forecast};
    Payload payload;
    std::map<std::string, double> metrics;
    std::vector<TraceStep> trace;
    bool operator==(const TaskResponse&) const = default;
};

inline bool payload_matches_kind(const TaskResponse& r) {
    switch (r.kind) {
    case TaskKind::Forecast:
    case TaskKind::Impute: return std::holds_alternative<SeriesPayload>(r.payload);
    case TaskKind::Anomaly: return std::holds_alternative<AnomalyPayload>(r.payload);
    case TaskKind::Classify: return std::holds_alternative<ClassifyPayload>(r.payload);
    }
    return false;
}

// ---------------------------------------------------------------------------
// Routing

struct RoutingRule {
    TaskKind kind;
    std::vector<std::string_view> keywords;
};

/// Case-insensitive substring rules; exactly one category may fire.
inline const std::array<RoutingRule, 4>& routing_rules() {
    static const std::array<RoutingRule, 4> rules = {{
        {TaskKind::Anomaly, {"anomal", "fault", "outlier", "attack", "intrusion"}},
        {TaskKind::Impute, {"imput", "missing", "fill", "gap"}},
        {TaskKind::Classify, {"classif", "regime", "cluster", "label"}},
        {TaskKind::Forecast, {"forecast", "predict", "horizon", "future"}},
    }};
    return rules;
}

inline std::vector<TaskKind> matching_tasks(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::vector<TaskKind> hits;
    for (const auto& rule : routing_rules()) {
        for (auto kw : rule.keywords) {
            if (lower.find(kw) != std::string::npos) {
                hits.push_back(rule.kind);
                break;
            }
        }
    }
    return hits;
}

inline TaskKind route(const TaskRequest& req) {
    detail::require(!req.text.empty(), ErrorKind::InvalidArgument, "request text is empty");
    const auto hits = matching_tasks(req.text);
    if (hits.empty()) {
        detail::fail(ErrorKind::UnknownTask, "no sub-agent matches request '" + req.text + "'");
    }
    if (hits.size() > 1) {
        std::string names;
        for (TaskKind k : hits) {
            names += (names.empty() ? "" : ", ") + std::string(to_string(k));
        }
        detail::fail(ErrorKind::AmbiguousRequest, "request '" + req.text + "' matches several sub-agents: " + names);
    }
    return hits.front();
}

// ---------------------------------------------------------------------------
// Sub-agent models

struct TaskSetup {
    TaskKind kind{TaskKind::Forecast};
    std::size_t tau{12};
    std::size_t nu{12};
    std::size_t channels{1};
    std::size_t num_classes{0};
};

/// What a sub-agent runs on: standardized windows in, standardized
/// predictions out (N×nu), or a 1×nu row of class labels for Classify.
class SubAgentModel {
public:
    virtual ~SubAgentModel() = default;
    virtual void prepare(const TaskSetup& setup) = 0;
    /// nullopt when the model has nothing to train.
    virtual std::optional<TrainReport> fit(const WindowSet& train, const WindowSet& val, LossKind loss) = 0;
    virtual std::optional<TrainReport> align(const WindowSet& /*train*/) { return std::nullopt; }
    virtual Matrix predict(const Matrix& window, const Matrix* mask, std::size_t anchor) const = 0;
    virtual std::string describe() const = 0;
};

/// Parameters carried between tasks when sub-agents share a pool, or when a
/// single universal agent serves every task.
struct SharedBackbone {
    bool share_embedding{false};
    std::optional<Matrix> embed;
    std::optional<PromptPool> pool;
    std::optional<Projection> proj;
};

/// In-process TaskModel. With force_mask_channel every task sees the
/// two-channel (values, mask) encoding, which is how the universal agent
/// handles imputation and the other tasks with one input layout.
class LocalModel : public SubAgentModel {
public:
    explicit LocalModel(ModelConfig base, SharedBackbone* shared = nullptr, bool force_mask_channel = false)
        : base_(std::move(base)), shared_(shared), force_mask_channel_(force_mask_channel) {}

    void prepare(const TaskSetup& setup) override {
        ModelConfig cfg = base_;
        cfg.tau = setup.tau;
        cfg.nu = setup.nu;
        cfg.channels = force_mask_channel_ ? 2 : setup.channels;
        cfg.num_classes = setup.num_classes;
        model_ = make_task_model(cfg);
        if (shared_ != nullptr) {
            if (shared_->pool && shared_->pool->dim() == model_->pool.dim() &&
                shared_->pool->size() == model_->pool.size() &&
                shared_->pool->prompt_length() == model_->pool.prompt_length() && shared_->proj &&
                shared_->proj->top_k() == model_->proj.top_k()) {
                model_->pool = *shared_->pool;
                model_->proj = *shared_->proj;
            }
            if (shared_->share_embedding && shared_->embed && shared_->embed->rows() == model_->embed.rows() &&
                shared_->embed->cols() == model_->embed.cols()) {
                model_->embed = *shared_->embed;
            }
        }
    }

    std::optional<TrainReport> fit(const WindowSet& train, const WindowSet& val, LossKind loss) override {
        auto report = tsarag::train(require_model(), with_masks(train), with_masks(val), loss);
        publish();
        return report;
    }

    std::optional<TrainReport> align(const WindowSet& train) override {
        TaskModel& m = require_model();
        if (m.is_classifier()) {
            return std::nullopt;
        }
        const WindowSet windows = with_masks(train);
        auto report = dpo_align(m, windows, m.config.hyper.beta, m.config.hyper.mask_frac);
        publish();
        return report;
    }

    Matrix predict(const Matrix& window, const Matrix* mask, std::size_t /*anchor*/) const override {
        const TaskModel& m = model();
        Matrix ones;
        if (m.config.channels == 2 && mask == nullptr) {
            ones = Matrix(window.rows(), window.cols(), 1.0);
            mask = &ones;
        } else if (m.config.channels == 1) {
            mask = nullptr;
        }
        if (m.is_classifier()) {
            const auto labels = predict_labels(m, window, mask);
            Matrix out(1, labels.size());
            for (std::size_t s = 0; s < labels.size(); ++s) {
                out(0, s) = labels[s];
            }
            return out;
        }
        return tsarag::predict(m, window, mask);
    }

    std::string describe() const override {
        std::ostringstream os;
        const auto& c = model_ ? model_->config : base_;
        os << "local linear predictor (d=" << c.pool.dim << ", M=" << c.pool.size << ", K=" << c.pool.top_k
           << ", l=" << c.pool.prompt_length << (c.use_pool ? "" : ", pool bypassed") << ")";
        return os.str();
    }

    const TaskModel& model() const {
        detail::require(model_.has_value(), ErrorKind::InvalidArgument, "model used before prepare()");
        return *model_;
    }

private:
    TaskModel& require_model() {
        detail::require(model_.has_value(), ErrorKind::InvalidArgument, "model used before prepare()");
        return *model_;
    }

    WindowSet with_masks(const WindowSet& ws) const {
        if (model_->config.channels != 2 || ws.has_masks()) {
            return ws;
        }
        WindowSet out = ws;
        for (std::size_t w = 0; w < ws.size(); ++w) {
            out.input_masks.emplace_back(ws.inputs[w].rows(), ws.inputs[w].cols(), 1.0);
            out.target_masks.emplace_back(ws.targets[w].rows(), ws.targets[w].cols(), 1.0);
        }
        return out;
    }

    void publish() {
        if (shared_ == nullptr) {
            return;
        }
        shared_->pool = model_->pool;
        shared_->proj = model_->proj;
        if (shared_->share_embedding) {
            shared_->embed = model_->embed;
        }
    }

    ModelConfig base_;
    SharedBackbone* shared_;
    bool force_mask_channel_;
    std::optional<TaskModel> model_;
};

/// Delegates prediction to a remote model server; nothing is trained locally.
class RemoteModel : public SubAgentModel {
public:
    RemoteModel(std::string endpoint, std::chrono::milliseconds timeout)
        : endpoint_(std::move(endpoint)), timeout_(timeout) {
        remote::parse_endpoint(endpoint_);
    }

    void prepare(const TaskSetup& setup) override { setup_ = setup; }
    std::optional<TrainReport> fit(const WindowSet&, const WindowSet&, LossKind) override { return std::nullopt; }

    Matrix predict(const Matrix& window, const Matrix* mask, std::size_t /*anchor*/) const override {
        Matrix out = remote::remote_predict(endpoint_, setup_.kind, window, mask, setup_.nu, timeout_);
        if (setup_.kind == TaskKind::Classify) {
            for (double& v : out.flat()) {
                v = std::round(v);
            }
        }
        return out;
    }

    std::string describe() const override { return "remote model at " + endpoint_; }

private:
    std::string endpoint_;
    std::chrono::milliseconds timeout_;
    TaskSetup setup_;
};

/// Wraps a plain function, e.g. an oracle that knows the future.
class FunctionModel : public SubAgentModel {
public:
    using Fn = std::function<Matrix(const Matrix& window, const Matrix* mask, std::size_t anchor)>;

    explicit FunctionModel(Fn fn, std::string name = "injected model") : fn_(std::move(fn)), name_(std::move(name)) {}

    void prepare(const TaskSetup&) override {}
    std::optional<TrainReport> fit(const WindowSet&, const WindowSet&, LossKind) override { return std::nullopt; }
    Matrix predict(const Matrix& window, const Matrix* mask, std::size_t anchor) const override {
        return fn_(window, mask, anchor);
    }
    std::string describe() const override { return name_; }

private:
    Fn fn_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Sub-agent pipelines

struct ExecOptions {
    bool train{true};
    bool align{true};
    std::string request;  // request text echoed in the route step
    std::uint64_t seed{0};
    bool cluster_raw{false};
    std::size_t k_min{2};
    std::size_t k_max{6};
};

namespace detail {

using tsarag::detail::fail;
using tsarag::detail::require;

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

inline TraceStep route_step(TaskKind kind, const ExecOptions& opts) {
    return {opts.request.empty() ? "Direct " + std::string(to_string(kind)) + " invocation"
                                 : "Request: \"" + opts.request + "\"",
            "route", std::string(to_string(kind)) + " sub-agent selected"};
}

inline TraceStep train_step(SubAgentModel& model, const WindowSet& train, const WindowSet& val, LossKind loss,
                            const ExecOptions& opts) {
    TraceStep step{"Fit the " + model.describe() + " on " + std::to_string(train.size()) + " training windows",
                   "train", ""};
    if (!opts.train) {
        step.observation = "skipped";
        return step;
    }
    const auto report = model.fit(train, val, loss);
    if (!report) {
        step.observation = "skipped (model is not trained locally)";
        return step;
    }
    step.observation = std::to_string(report->train_loss.size()) + " epochs, train loss " +
                       fmt(report->train_loss.empty() ? 0.0 : report->train_loss.front()) + " -> " +
                       fmt(report->final_train_loss);
    if (!report->val_loss.empty()) {
        step.observation += ", val loss " + fmt(report->val_loss.back());
    }
    return step;
}

inline TraceStep align_step(SubAgentModel& model, const WindowSet& train, const ExecOptions& opts) {
    TraceStep step{"Steer predictions toward preferred targets over corrupted ones", "align", ""};
    if (!opts.align || !opts.train) {
        step.observation = "skipped";
        return step;
    }
    const auto report = model.align(train);
    step.observation = report ? std::to_string(report->train_loss.size()) + " epochs, preference loss " +
                                    fmt(report->train_loss.empty() ? 0.0 : report->train_loss.front()) + " -> " +
                                    fmt(report->final_train_loss)
                              : "skipped (not applicable)";
    return step;
}

inline std::string metrics_line(const std::map<std::string, double>& m) {
    if (m.empty()) {
        return "no labels; metrics not computed";
    }
    std::string s;
    for (const auto& [k, v] : m) {
        s += (s.empty() ? "" : ", ") + k + "=" + fmt(v);
    }
    return s;
}

inline void finish(TaskResponse& resp, const std::string& summary) {
    resp.trace.push_back({"Combine the sub-agent output into the final answer", "synthesize", summary});
}

inline void check_prediction(const Matrix& pred, std::size_t rows, std::size_t cols) {
    if (pred.rows() != rows || pred.cols() != cols) {
        fail(ErrorKind::ShapeMismatch, "sub-agent returned " + std::to_string(pred.rows()) + "×" +
                                           std::to_string(pred.cols()) + ", expected " + std::to_string(rows) + "×" +
                                           std::to_string(cols));
    }
}

inline std::map<std::string, double> series_metrics(const std::vector<SeriesPoint>& points) {
    std::vector<double> truth;
    std::vector<double> pred;
    for (const auto& p : points) {
        truth.push_back(p.truth);
        pred.push_back(p.value);
    }
    return {{"MAE", metrics::mae(truth, pred)},
            {"RMSE", metrics::rmse(truth, pred)},
            {"MAPE", metrics::mape(truth, pred)}};
}

}  // namespace detail

/// Forecast sub-agent: standardize on train, fit, predict non-overlapping
/// test windows (stride nu), score on the original scale.
inline TaskResponse execute_forecast(SubAgentModel& model, const SeriesMatrix& data, const Split& split,
                                     std::size_t tau, std::size_t nu, const ExecOptions& opts = {}) {
    TaskResponse resp;
    resp.kind = TaskKind::Forecast;
    resp.trace.push_back(detail::route_step(resp.kind, opts));

    const SeriesMatrix z = standardize(data, split.train);
    const auto& stats = *z.stats();
    model.prepare({TaskKind::Forecast, tau, nu, 1, 0});
    const WindowSet train = make_windows(z, split.train, tau, nu);
    const WindowSet val = make_context_windows(z, split.val, tau, nu);
    resp.trace.push_back(detail::train_step(model, train, val, LossKind::Mse, opts));
    resp.trace.push_back(detail::align_step(model, train, opts));

    const WindowSet test = make_context_windows(z, split.test, tau, nu, nu);
    SeriesPayload payload;
    for (std::size_t w = 0; w < test.size(); ++w) {
        const std::size_t anchor = test.anchor_times[w];
        const Matrix pred = model.predict(test.inputs[w], nullptr, anchor);
        detail::check_prediction(pred, data.num_series(), nu);
        for (std::size_t i = 0; i < data.num_series(); ++i) {
            for (std::size_t s = 0; s < nu; ++s) {
                const std::size_t t = anchor + 1 + s;
                payload.points.push_back(
                    {t, data.series_ids()[i], unstandardize_value(stats[i], pred(i, s)), data(i, t)});
            }
        }
    }
    resp.trace.push_back({"Forecast " + std::to_string(nu) + " steps for every test window", "predict",
                          std::to_string(test.size()) + " windows, " + std::to_string(payload.points.size()) +
                              " predicted values"});
    resp.metrics = detail::series_metrics(payload.points);
    resp.trace.push_back({"Score predictions on the original scale", "score", detail::metrics_line(resp.metrics)});
    resp.payload = std::move(payload);
    detail::finish(resp, "Forecast response with " + std::to_string(resp.metrics.size()) + " metrics");
    return resp;
}

/// Impute sub-agent (out-of-sample): trains on observed entries of past
/// windows, fills missing entries of future windows. `known`, when given,
/// marks entries whose truth exists; only missing-but-known entries are scored.
inline TaskResponse execute_impute(SubAgentModel& model, const SeriesMatrix& data, const MaskMatrix& mask,
                                   const Split& split, std::size_t tau, std::size_t nu, const ExecOptions& opts = {},
                                   const MaskMatrix* known = nullptr) {
    detail::require(mask.num_series() == data.num_series() && mask.num_timestamps() == data.num_timestamps(),
                    ErrorKind::ShapeMismatch, "mask shape differs from data");
    if (mask.missing_count() == 0) {
        detail::fail(ErrorKind::NoMissingValues, "mask marks every value observed; nothing to impute");
    }
    TaskResponse resp;
    resp.kind = TaskKind::Impute;
    resp.trace.push_back(detail::route_step(resp.kind, opts));

    const SeriesMatrix z = standardize(data, split.train, &mask);
    const auto& stats = *z.stats();
    model.prepare({TaskKind::Impute, tau, nu, 2, 0});
    const Matrix& flags = mask.flags();
    const WindowSet train = make_windows(z.values(), split.train, tau, nu, 1, &flags);
    const WindowSet val = make_context_windows(z.values(), split.val, tau, nu, 1, &flags);
    resp.trace.push_back(detail::train_step(model, train, val, LossKind::MaskedMse, opts));
    resp.trace.push_back(detail::align_step(model, train, opts));

    const WindowSet test = make_context_windows(z.values(), split.test, tau, nu, nu, &flags);
    SeriesPayload payload;
    for (std::size_t w = 0; w < test.size(); ++w) {
        const std::size_t anchor = test.anchor_times[w];
        const Matrix pred = model.predict(test.inputs[w], &test.input_masks[w], anchor);
        detail::check_prediction(pred, data.num_series(), nu);
        for (std::size_t i = 0; i < data.num_series(); ++i) {
            for (std::size_t s = 0; s < nu; ++s) {
                const std::size_t t = anchor + 1 + s;
                if (mask.observed(i, t) || (known != nullptr && !known->observed(i, t))) {
                    continue;
                }
                payload.points.push_back(
                    {t, data.series_ids()[i], unstandardize_value(stats[i], pred(i, s)), data(i, t)});
            }
        }
    }
    if (payload.points.empty()) {
        detail::fail(ErrorKind::NoMissingValues, "no missing entries with known truth fall in the test windows");
    }
    resp.trace.push_back({"Estimate missing entries of each test window from observed history", "predict",
                          std::to_string(payload.points.size()) + " missing values imputed over " +
                              std::to_string(test.size()) + " windows"});
    resp.metrics = detail::series_metrics(payload.points);
    resp.trace.push_back(
        {"Score imputations on missing entries only, original scale", "score", detail::metrics_line(resp.metrics)});
    resp.payload = std::move(payload);
    detail::finish(resp, "Impute response with " + std::to_string(resp.metrics.size()) + " metrics");
    return resp;
}

/// Anomaly sub-agent: one-step forecaster trained on the (assumed normal)
/// train split; threshold is the largest smoothed validation score; test
/// points scoring strictly above it are flagged.
inline TaskResponse execute_anomaly(SubAgentModel& model, const SeriesMatrix& data, const Split& split,
                                    std::size_t tau, std::size_t w_a, const std::vector<int>* labels,
                                    const ExecOptions& opts = {}) {
    detail::require(labels == nullptr || labels->size() == data.num_timestamps(), ErrorKind::ShapeMismatch,
                    "anomaly labels must cover every timestamp");
    constexpr std::size_t nu = 1;
    TaskResponse resp;
    resp.kind = TaskKind::Anomaly;
    resp.trace.push_back(detail::route_step(resp.kind, opts));

    const SeriesMatrix z = standardize(data, split.train);
    model.prepare({TaskKind::Anomaly, tau, nu, 1, 0});
    const WindowSet train = make_windows(z, split.train, tau, nu);
    const WindowSet val = make_context_windows(z, split.val, tau, nu);
    resp.trace.push_back(detail::train_step(model, train, val, LossKind::Mse, opts));
    resp.trace.push_back(detail::align_step(model, train, opts));

    auto residual_scores = [&](const WindowSet& ws) {
        Matrix truth(data.num_series(), ws.size());
        Matrix pred(data.num_series(), ws.size());
        for (std::size_t w = 0; w < ws.size(); ++w) {
            const Matrix p = model.predict(ws.inputs[w], nullptr, ws.anchor_times[w]);
            detail::check_prediction(p, data.num_series(), nu);
            for (std::size_t i = 0; i < data.num_series(); ++i) {
                truth(i, w) = ws.targets[w](i, 0);
                pred(i, w) = p(i, 0);
            }
        }
        return anomaly::make_scores(truth, pred, w_a);
    };

    const auto val_scores = residual_scores(val);
    const auto th = anomaly::compute_threshold(val_scores.aggregated);
    const WindowSet test = make_context_windows(z, split.test, tau, nu);
    const auto test_scores = residual_scores(test);

    AnomalyPayload payload;
    payload.threshold = th.value;
    payload.score = test_scores.aggregated;
    payload.flag = anomaly::flag(test_scores.aggregated, th);
    for (std::size_t w = 0; w < test.size(); ++w) {
        payload.t.push_back(test.anchor_times[w] + 1);
    }
    const auto flagged = std::count(payload.flag.begin(), payload.flag.end(), 1);
    resp.trace.push_back({"Score residuals, smooth with w_a=" + std::to_string(w_a) + " and threshold at the validation maximum",
                          "predict",
                          "threshold " + detail::fmt(th.value) + ", " + std::to_string(flagged) + " of " +
                              std::to_string(payload.flag.size()) + " test points flagged"});
    if (labels != nullptr) {
        for (std::size_t t : payload.t) {
            payload.label.push_back((*labels)[t]);
        }
        const auto adjusted = anomaly::point_adjust(payload.flag, payload.label);
        const auto prf = metrics::prf1(metrics::confusion(adjusted, payload.label));
        resp.metrics = {{"precision", prf.precision}, {"recall", prf.recall}, {"f1", prf.f1}};
        if (!anomaly::label_runs(payload.label).empty()) {
            resp.metrics["fdr"] = anomaly::fdr(payload.flag, payload.label);
        }
    }
    resp.trace.push_back({"Evaluate point-adjusted detections against labels", "score", detail::metrics_line(resp.metrics)});
    resp.payload = std::move(payload);
    detail::finish(resp, "Anomaly response with " + std::to_string(flagged) + " flagged points");
    return resp;
}

/// Classify sub-agent: k-means regimes over timestamp columns of the train
/// split become labels; the model predicts the next nu labels.
inline TaskResponse execute_classify(SubAgentModel& model, const SeriesMatrix& data, const Split& split,
                                     std::size_t tau, std::size_t nu, std::optional<std::size_t> clusters,
                                     const ExecOptions& opts = {}) {
    TaskResponse resp;
    resp.kind = TaskKind::Classify;
    resp.trace.push_back(detail::route_step(resp.kind, opts));

    const SeriesMatrix z = standardize(data, split.train);
    const Matrix& source = opts.cluster_raw ? data.values() : z.values();
    const Matrix all_points = transpose(source);
    const Matrix train_points = transpose(slice_columns(source, split.train.begin, split.train.end));

    std::size_t k = 0;
    std::string selection_note;
    if (clusters) {
        k = *clusters;
        selection_note = "K=" + std::to_string(k) + " requested";
    } else {
        const std::size_t k_max = std::min(opts.k_max, train_points.rows() - 1);
        const auto sel = clustering::elbow_select(train_points, opts.k_min, k_max, opts.seed);
        k = sel.k;
        selection_note = "elbow selected K=" + std::to_string(k);
    }
    const auto fit = clustering::kmeans_fit(train_points, k, opts.seed);
    const auto regime = clustering::assign(all_points, fit.model.centroids);
    Matrix label_row(1, regime.size());
    for (std::size_t t = 0; t < regime.size(); ++t) {
        label_row(0, t) = regime[t];
    }
    resp.trace.push_back({"Label timestamps by k-means regimes on the train split", "cluster",
                          selection_note + ", inertia " + detail::fmt(fit.model.inertia)});

    auto with_labels = [&](WindowSet ws) {
        for (std::size_t w = 0; w < ws.size(); ++w) {
            ws.targets[w] = slice_columns(label_row, ws.anchor_times[w] + 1, ws.anchor_times[w] + 1 + nu);
        }
        return ws;
    };
    model.prepare({TaskKind::Classify, tau, nu, 1, k});
    const WindowSet train = with_labels(make_windows(z, split.train, tau, nu));
    const WindowSet val = with_labels(make_context_windows(z, split.val, tau, nu));
    resp.trace.push_back(detail::train_step(model, train, val, LossKind::CrossEntropy, opts));

    const WindowSet test = make_context_windows(z, split.test, tau, nu, nu);
    ClassifyPayload payload;
    payload.num_classes = k;
    for (std::size_t w = 0; w < test.size(); ++w) {
        const std::size_t anchor = test.anchor_times[w];
        const Matrix pred = model.predict(test.inputs[w], nullptr, anchor);
        detail::check_prediction(pred, 1, nu);
        for (std::size_t s = 0; s < nu; ++s) {
            payload.t.push_back(anchor + 1 + s);
            payload.predicted.push_back(static_cast<int>(pred(0, s)));
            payload.label.push_back(regime[anchor + 1 + s]);
        }
    }
    resp.trace.push_back({"Predict the next " + std::to_string(nu) + " regime labels per test window", "predict",
                          std::to_string(payload.t.size()) + " labels predicted"});
    const auto macro = metrics::macro_precision_recall(payload.predicted, payload.label);
    resp.metrics = {{"accuracy", metrics::accuracy(payload.predicted, payload.label)},
                    {"precision", macro.precision},
                    {"recall", macro.recall}};
    resp.trace.push_back({"Score predicted labels (macro averages)", "score", detail::metrics_line(resp.metrics)});
    resp.payload = std::move(payload);
    detail::finish(resp, "Classify response over " + std::to_string(k) + " regimes");
    return resp;
}

// ---------------------------------------------------------------------------
// Master agent

struct AblationFlags {
    bool no_pool{false};          // bypass prompt augmentation (DPM)
    bool universal_agent{false};  // one shared model for all tasks (SAS)
    bool no_train{false};         // skip training (IT)
    bool no_dpo{false};           // skip preference alignment (DPO)
    bool operator==(const AblationFlags&) const = default;
};

struct TaskParams {
    std::size_t tau{12};
    std::size_t nu{12};
    std::size_t w_a{3};
    std::optional<std::size_t> clusters;
    std::array<int, 3> split_ratio{6, 2, 2};
    bool cluster_raw{false};
    bool operator==(const TaskParams&) const = default;
};

struct SubAgentConfig {
    ModelConfig model;
    TaskParams params;
};

struct Dataset {
    SeriesMatrix data;
    std::optional<MaskMatrix> mask;             // availability mask for imputation
    std::optional<MaskMatrix> known;            // entries whose truth exists
    std::optional<std::vector<int>> anomaly_labels;
};

using DataResolver = std::function<Dataset(const std::string& data_ref)>;
using ModelFactory = std::function<std::unique_ptr<SubAgentModel>(TaskKind)>;

/// Read-only after construction.
struct Registry {
    std::map<TaskKind, SubAgentConfig> specialized;
    std::optional<SubAgentConfig> universal;
    DataResolver resolve;
    ModelFactory factory;  // optional: replaces local models (remote endpoint, injected oracles)
    std::uint64_t seed{0};
};

inline TaskParams apply_overrides(TaskParams p, const std::map<std::string, double>& overrides) {
    for (const auto& [key, value] : overrides) {
        detail::require(value >= 0.0 && std::floor(value) == value, ErrorKind::InvalidArgument,
                        "override '" + key + "' must be a non-negative integer");
        const auto v = static_cast<std::size_t>(value);
        if (key == "tau") {
            p.tau = v;
        } else if (key == "nu") {
            p.nu = v;
        } else if (key == "w_a") {
            p.w_a = v;
        } else if (key == "K") {
            p.clusters = v;
        } else {
            detail::fail(ErrorKind::InvalidArgument, "unknown request parameter '" + key + "'");
        }
    }
    return p;
}

/// Route → delegate → synthesize. `shared` carries pool (and, for the
/// universal agent, embedding) parameters across successive requests.
inline TaskResponse handle(const TaskRequest& req, const Registry& registry, const AblationFlags& ablation,
                           SharedBackbone* shared = nullptr) {
    const TaskKind kind = route(req);
    const SubAgentConfig* config = nullptr;
    if (ablation.universal_agent) {
        detail::require(registry.universal.has_value(), ErrorKind::InvalidArgument,
                        "universal-agent ablation needs a universal sub-agent in the registry");
        config = &*registry.universal;
    } else {
        const auto it = registry.specialized.find(kind);
        detail::require(it != registry.specialized.end(), ErrorKind::InvalidArgument,
                        "no sub-agent registered for " + std::string(to_string(kind)));
        config = &it->second;
    }
    detail::require(static_cast<bool>(registry.resolve), ErrorKind::InvalidArgument, "registry has no data resolver");
    const Dataset ds = registry.resolve(req.data_ref);
    const TaskParams params = apply_overrides(config->params, req.params);
    const Split split = chronological_split(ds.data.num_timestamps(), params.split_ratio);

    ModelConfig mc = config->model;
    mc.use_pool = mc.use_pool && !ablation.no_pool;
    SharedBackbone local_shared;
    SharedBackbone* backbone = shared != nullptr ? shared : &local_shared;
    if (ablation.universal_agent) {
        backbone->share_embedding = true;
    }
    std::unique_ptr<SubAgentModel> model =
        registry.factory ? registry.factory(kind)
                         : std::make_unique<LocalModel>(mc, backbone, ablation.universal_agent);

    ExecOptions opts;
    opts.train = !ablation.no_train;
    opts.align = !ablation.no_dpo;
    opts.request = req.text;
    opts.seed = registry.seed;
    opts.cluster_raw = params.cluster_raw;

    switch (kind) {
    case TaskKind::Forecast: return execute_forecast(*model, ds.data, split, params.tau, params.nu, opts);
    case TaskKind::Impute: {
        detail::require(ds.mask.has_value(), ErrorKind::NoMissingValues, "dataset has no missingness mask");
        return execute_impute(*model, ds.data, *ds.mask, split, params.tau, params.nu, opts,
                              ds.known ? &*ds.known : nullptr);
    }
    case TaskKind::Anomaly:
        return execute_anomaly(*model, ds.data, split, params.tau, params.w_a,
                               ds.anomaly_labels ? &*ds.anomaly_labels : nullptr, opts);
    case TaskKind::Classify:
        return execute_classify(*model, ds.data, split, params.tau, params.nu, params.clusters, opts);
    }
    detail::fail(ErrorKind::UnknownTask, "unhandled task kind");
}

}  // namespace tsarag::agents
