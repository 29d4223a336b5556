#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tsarag/agents.hpp"
#include "tsarag/core_data.hpp"
#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"
#include "tsarag/missingness.hpp"
#include "tsarag/predictor.hpp"
#include "tsarag/prompt_pool.hpp"
#include "tsarag/rng.hpp"
#include "tsarag/task.hpp"

namespace tsarag::dataio {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting and file helpers

/// Shortest-safe round-trip representation ("%.17g").
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        detail::fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        detail::fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    }
    out << content;
    out.flush();
    if (!out) {
        detail::fail(ErrorKind::IoError, "write to '" + path.string() + "' failed");
    }
}

// ---------------------------------------------------------------------------
// CSV

/// Rows are timestamps, columns are series; the header row carries series ids.
struct CsvSeries {
    SeriesMatrix data;
    MaskMatrix mask;  // 0 where the cell was empty (value stored as 0)
};

namespace detail {

using tsarag::detail::fail;
using tsarag::detail::require;

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return fields;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        const auto end = nl == std::string_view::npos ? text.size() : nl;
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

inline bool blank(std::string_view line) { return trim(line).empty(); }

inline double parse_number(std::string_view field, std::size_t line, std::size_t column) {
    if (!field.empty() && field.front() == '+') {
        field.remove_prefix(1);
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw ParseError(ErrorKind::ParseError, line, column, "'" + std::string(field) + "' is not a finite number");
    }
    return v;
}

}  // namespace detail

/// Parses CSV text. Errors carry 1-based line and column numbers.
inline CsvSeries parse_csv(std::string_view text) {
    const auto lines = detail::split_lines(text);
    std::size_t first = 0;
    while (first < lines.size() && detail::blank(lines[first])) {
        ++first;
    }
    if (first == lines.size()) {
        throw ParseError(ErrorKind::ParseError, 1, 1, "file has no header row");
    }
    const auto header = detail::split_fields(lines[first]);
    std::vector<std::string> ids;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c].empty()) {
            throw ParseError(ErrorKind::ParseError, first + 1, c + 1, "empty series id in header");
        }
        ids.emplace_back(header[c]);
    }
    const std::size_t n = ids.size();
    std::size_t last = lines.size();
    while (last > first + 1 && detail::blank(lines[last - 1])) {
        --last;
    }
    std::vector<double> values;
    std::vector<double> flags;
    std::size_t t = 0;
    // interior blank lines are rows: a missing value when there is one series
    for (std::size_t li = first + 1; li < last; ++li) {
        const auto fields = detail::split_fields(lines[li]);
        if (fields.size() != n) {
            throw ParseError(ErrorKind::RaggedRows, li + 1, std::min(fields.size(), n) + 1,
                             "row has " + std::to_string(fields.size()) + " fields, header has " + std::to_string(n));
        }
        for (std::size_t c = 0; c < n; ++c) {
            if (fields[c].empty()) {
                values.push_back(0.0);
                flags.push_back(0.0);
            } else {
                values.push_back(detail::parse_number(fields[c], li + 1, c + 1));
                flags.push_back(1.0);
            }
        }
        ++t;
    }
    if (t == 0) {
        throw ParseError(ErrorKind::ParseError, first + 2, 1, "file has no data rows");
    }
    // stored timestamp-major; transpose to N×T
    const Matrix vt(t, n, std::move(values));
    const Matrix ft(t, n, std::move(flags));
    return {SeriesMatrix(transpose(vt), std::move(ids)), MaskMatrix(transpose(ft))};
}

inline CsvSeries read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

/// Inverse of parse_csv; entries with mask 0 are written as empty cells.
inline std::string format_csv(const SeriesMatrix& data, const MaskMatrix* mask = nullptr) {
    tsarag::detail::require(mask == nullptr || (mask->num_series() == data.num_series() &&
                                                mask->num_timestamps() == data.num_timestamps()),
                            ErrorKind::ShapeMismatch, "mask shape differs from data");
    std::string out;
    for (std::size_t i = 0; i < data.num_series(); ++i) {
        out += (i ? "," : "") + data.series_ids()[i];
    }
    out += '\n';
    for (std::size_t t = 0; t < data.num_timestamps(); ++t) {
        for (std::size_t i = 0; i < data.num_series(); ++i) {
            if (i) {
                out += ',';
            }
            if (mask == nullptr || mask->observed(i, t)) {
                out += format_double(data(i, t));
            }
        }
        out += '\n';
    }
    return out;
}

inline void write_csv(const std::filesystem::path& path, const SeriesMatrix& data, const MaskMatrix* mask = nullptr) {
    write_file(path, format_csv(data, mask));
}

/// Mask files share the data layout with 0/1 cells.
inline std::string format_mask_csv(const MaskMatrix& mask, const std::vector<std::string>& ids) {
    tsarag::detail::require(ids.size() == mask.num_series(), ErrorKind::ShapeMismatch, "one id per series expected");
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += (i ? "," : "") + ids[i];
    }
    out += '\n';
    for (std::size_t t = 0; t < mask.num_timestamps(); ++t) {
        for (std::size_t i = 0; i < mask.num_series(); ++i) {
            out += i ? "," : "";
            out += mask.observed(i, t) ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

inline MaskMatrix parse_mask_csv(std::string_view text) {
    const CsvSeries parsed = parse_csv(text);
    if (parsed.mask.missing_count() != 0) {
        tsarag::detail::fail(ErrorKind::ParseError, "mask file has empty cells");
    }
    return MaskMatrix(parsed.data.values());
}

inline MaskMatrix read_mask_csv(const std::filesystem::path& path) { return parse_mask_csv(read_file(path)); }

/// Per-timestamp integer labels as a two-column (t, label) CSV.
inline std::string format_labels_csv(const std::vector<int>& labels) {
    std::string out = "t,label\n";
    for (std::size_t t = 0; t < labels.size(); ++t) {
        out += std::to_string(t) + "," + std::to_string(labels[t]) + "\n";
    }
    return out;
}

inline std::vector<int> parse_labels_csv(std::string_view text) {
    const CsvSeries parsed = parse_csv(text);
    tsarag::detail::require(parsed.data.series_ids() == std::vector<std::string>{"t", "label"},
                            ErrorKind::ParseError, "label file must have header 't,label'");
    tsarag::detail::require(parsed.mask.missing_count() == 0, ErrorKind::ParseError, "label file has empty cells");
    std::vector<int> labels;
    for (std::size_t t = 0; t < parsed.data.num_timestamps(); ++t) {
        tsarag::detail::require(parsed.data(0, t) == static_cast<double>(t), ErrorKind::ParseError,
                                "label file rows must list t = 0, 1, 2, ... in order");
        const double v = parsed.data(1, t);
        tsarag::detail::require(std::floor(v) == v, ErrorKind::ParseError, "labels must be integers");
        labels.push_back(static_cast<int>(v));
    }
    return labels;
}

inline std::vector<int> read_labels_csv(const std::filesystem::path& path) {
    return parse_labels_csv(read_file(path));
}

// ---------------------------------------------------------------------------
// Payload CSV

/// Task-dependent columns:
///   forecast  t,series_id,prediction,truth
///   impute    t,series_id,imputed,truth
///   anomaly   t,score,flag[,label]
///   classify  t,predicted,label
inline std::string format_payload_csv(const agents::TaskResponse& resp) {
    std::string out;
    if (const auto* sp = std::get_if<agents::SeriesPayload>(&resp.payload)) {
        out = resp.kind == TaskKind::Impute ? "t,series_id,imputed,truth\n" : "t,series_id,prediction,truth\n";
        for (const auto& p : sp->points) {
            out += std::to_string(p.t) + "," + p.series_id + "," + format_double(p.value) + "," +
                   format_double(p.truth) + "\n";
        }
    } else if (const auto* ap = std::get_if<agents::AnomalyPayload>(&resp.payload)) {
        const bool labeled = !ap->label.empty();
        out = labeled ? "t,score,flag,label\n" : "t,score,flag\n";
        for (std::size_t k = 0; k < ap->t.size(); ++k) {
            out += std::to_string(ap->t[k]) + "," + format_double(ap->score[k]) + "," + std::to_string(ap->flag[k]);
            if (labeled) {
                out += "," + std::to_string(ap->label[k]);
            }
            out += "\n";
        }
    } else {
        const auto& cp = std::get<agents::ClassifyPayload>(resp.payload);
        out = "t,predicted,label\n";
        for (std::size_t k = 0; k < cp.t.size(); ++k) {
            out += std::to_string(cp.t[k]) + "," + std::to_string(cp.predicted[k]) + "," +
                   std::to_string(cp.label[k]) + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// TaskResponse JSON
//
// {
//   "kind": "Forecast" | "Impute" | "Anomaly" | "Classify",
//   "payload": {...},             // arrays, see below
//   "metrics": {"name": value},
//   "trace": [{"thought", "action", "observation"}, ...]
// }
// Forecast/Impute payload: {"t", "series_id", "prediction"|"imputed", "truth"}
// Anomaly payload: {"t", "score", "flag", "label" (optional), "threshold"}
// Classify payload: {"t", "predicted", "label", "num_classes"}

inline json response_to_json(const agents::TaskResponse& resp) {
    json doc;
    doc["kind"] = std::string(to_string(resp.kind));
    json payload = json::object();
    if (const auto* sp = std::get_if<agents::SeriesPayload>(&resp.payload)) {
        std::vector<std::size_t> t;
        std::vector<std::string> ids;
        std::vector<double> value;
        std::vector<double> truth;
        for (const auto& p : sp->points) {
            t.push_back(p.t);
            ids.push_back(p.series_id);
            value.push_back(p.value);
            truth.push_back(p.truth);
        }
        payload["t"] = t;
        payload["series_id"] = ids;
        payload[resp.kind == TaskKind::Impute ? "imputed" : "prediction"] = value;
        payload["truth"] = truth;
    } else if (const auto* ap = std::get_if<agents::AnomalyPayload>(&resp.payload)) {
        payload["t"] = ap->t;
        payload["score"] = ap->score;
        payload["flag"] = ap->flag;
        if (!ap->label.empty()) {
            payload["label"] = ap->label;
        }
        payload["threshold"] = ap->threshold;
    } else {
        const auto& cp = std::get<agents::ClassifyPayload>(resp.payload);
        payload["t"] = cp.t;
        payload["predicted"] = cp.predicted;
        payload["label"] = cp.label;
        payload["num_classes"] = cp.num_classes;
    }
    doc["payload"] = std::move(payload);
    doc["metrics"] = resp.metrics;
    json trace = json::array();
    for (const auto& s : resp.trace) {
        trace.push_back({{"thought", s.thought}, {"action", s.action}, {"observation", s.observation}});
    }
    doc["trace"] = std::move(trace);
    return doc;
}

inline agents::TaskResponse response_from_json(const json& doc) {
    try {
        agents::TaskResponse resp;
        resp.kind = parse_task_kind(doc.at("kind").get<std::string>());
        const json& p = doc.at("payload");
        switch (resp.kind) {
        case TaskKind::Forecast:
        case TaskKind::Impute: {
            const auto t = p.at("t").get<std::vector<std::size_t>>();
            const auto ids = p.at("series_id").get<std::vector<std::string>>();
            const auto value =
                p.at(resp.kind == TaskKind::Impute ? "imputed" : "prediction").get<std::vector<double>>();
            const auto truth = p.at("truth").get<std::vector<double>>();
            tsarag::detail::require(ids.size() == t.size() && value.size() == t.size() && truth.size() == t.size(),
                                    ErrorKind::ParseError, "payload arrays differ in length");
            agents::SeriesPayload sp;
            for (std::size_t k = 0; k < t.size(); ++k) {
                sp.points.push_back({t[k], ids[k], value[k], truth[k]});
            }
            resp.payload = std::move(sp);
            break;
        }
        case TaskKind::Anomaly: {
            agents::AnomalyPayload ap;
            ap.t = p.at("t").get<std::vector<std::size_t>>();
            ap.score = p.at("score").get<std::vector<double>>();
            ap.flag = p.at("flag").get<std::vector<int>>();
            if (p.contains("label")) {
                ap.label = p.at("label").get<std::vector<int>>();
            }
            ap.threshold = p.at("threshold").get<double>();
            resp.payload = std::move(ap);
            break;
        }
        case TaskKind::Classify: {
            agents::ClassifyPayload cp;
            cp.t = p.at("t").get<std::vector<std::size_t>>();
            cp.predicted = p.at("predicted").get<std::vector<int>>();
            cp.label = p.at("label").get<std::vector<int>>();
            cp.num_classes = p.at("num_classes").get<std::size_t>();
            resp.payload = std::move(cp);
            break;
        }
        }
        resp.metrics = doc.at("metrics").get<std::map<std::string, double>>();
        for (const auto& s : doc.at("trace")) {
            resp.trace.push_back({s.at("thought").get<std::string>(), s.at("action").get<std::string>(),
                                  s.at("observation").get<std::string>()});
        }
        return resp;
    } catch (const json::exception& e) {
        tsarag::detail::fail(ErrorKind::ParseError, std::string("malformed response document: ") + e.what());
    }
}

inline agents::TaskResponse parse_response(const std::string& text) {
    try {
        return response_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        tsarag::detail::fail(ErrorKind::ParseError, std::string("response is not JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class Generator { SeasonalSines, RegimeSwitch, Ar1Spikes };

inline std::string_view to_string(Generator g) {
    switch (g) {
    case Generator::SeasonalSines: return "seasonal_sines";
    case Generator::RegimeSwitch: return "regime_switch";
    case Generator::Ar1Spikes: return "ar1_spikes";
    }
    return "seasonal_sines";
}

inline Generator parse_generator(std::string_view s) {
    for (Generator g : {Generator::SeasonalSines, Generator::RegimeSwitch, Generator::Ar1Spikes}) {
        if (s == to_string(g)) {
            return g;
        }
    }
    tsarag::detail::fail(ErrorKind::InvalidSpec, "unknown generator '" + std::string(s) + "'");
}

struct SyntheticSpec {
    Generator generator{Generator::SeasonalSines};
    std::size_t n{4};
    std::size_t t{2000};
    double noise{0.1};
    std::uint64_t seed{0};
    // seasonal_sines: series i mixes periods base_period·(1 + i·period_step) and that times sqrt(2)
    double base_period{8.0};
    double period_step{0.5};
    // regime_switch: regimes alternate every regime_length steps
    std::size_t regime_length{100};
    double regime_gap{3.0};
    // ar1_spikes
    double phi{0.3};
    std::size_t segments{10};
    std::size_t segment_length{10};
    double spike_magnitude{6.0};     // in units of the stationary std
    double anomaly_start{0.8};       // anomalies are injected in [anomaly_start·T, T)

    bool operator==(const SyntheticSpec&) const = default;
};

struct SyntheticData {
    SeriesMatrix data;
    std::vector<int> labels;  // regime labels or 0/1 anomaly labels; empty for seasonal_sines
};

namespace detail {

inline void check_spec(const SyntheticSpec& s) {
    tsarag::detail::require(s.n >= 1 && s.t >= 1, ErrorKind::InvalidSpec, "synthetic data needs N, T >= 1");
    tsarag::detail::require(s.noise >= 0.0 && std::isfinite(s.noise), ErrorKind::InvalidSpec,
                            "noise sigma must be >= 0");
}

inline SyntheticData seasonal_sines(const SyntheticSpec& s) {
    tsarag::detail::require(s.base_period > 0.0 && s.period_step >= 0.0, ErrorKind::InvalidSpec,
                            "periods must be positive");
    Rng rng = make_rng(s.seed, "synthetic");
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    Matrix x(s.n, s.t);
    for (std::size_t i = 0; i < s.n; ++i) {
        const double p1 = s.base_period * (1.0 + static_cast<double>(i) * s.period_step);
        const double p2 = p1 * std::sqrt(2.0);
        const double ph1 = phase(rng);
        const double ph2 = phase(rng);
        for (std::size_t t = 0; t < s.t; ++t) {
            const double u = static_cast<double>(t);
            x(i, t) = std::sin(2.0 * std::numbers::pi * u / p1 + ph1) + 0.5 * std::sin(2.0 * std::numbers::pi * u / p2 + ph2) +
                      s.noise * noise(rng);
        }
    }
    return {SeriesMatrix(std::move(x)), {}};
}

inline SyntheticData regime_switch(const SyntheticSpec& s) {
    tsarag::detail::require(s.regime_length >= 1, ErrorKind::InvalidSpec, "regime length must be >= 1");
    Rng rng = make_rng(s.seed, "synthetic");
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> offset(0.5, 1.5);
    Matrix x(s.n, s.t);
    std::vector<int> labels(s.t);
    for (std::size_t t = 0; t < s.t; ++t) {
        labels[t] = static_cast<int>((t / s.regime_length) % 2);
    }
    for (std::size_t i = 0; i < s.n; ++i) {
        const double shift = s.regime_gap * offset(rng);
        for (std::size_t t = 0; t < s.t; ++t) {
            const double u = static_cast<double>(t);
            // regime 0: slow oscillation at level 0; regime 1: faster oscillation at a raised level
            const double seasonal = labels[t] == 0 ? 0.5 * std::sin(2.0 * std::numbers::pi * u / 24.0)
                                                   : 0.5 * std::sin(2.0 * std::numbers::pi * u / 8.0);
            x(i, t) = (labels[t] == 1 ? shift : 0.0) + seasonal + s.noise * noise(rng);
        }
    }
    return {SeriesMatrix(std::move(x)), std::move(labels)};
}

inline SyntheticData ar1_spikes(const SyntheticSpec& s) {
    tsarag::detail::require(std::abs(s.phi) < 1.0, ErrorKind::InvalidSpec, "AR coefficient must satisfy |phi| < 1");
    tsarag::detail::require(s.anomaly_start >= 0.0 && s.anomaly_start < 1.0, ErrorKind::InvalidSpec,
                            "anomaly_start must lie in [0, 1)");
    const auto begin = static_cast<std::size_t>(std::floor(s.anomaly_start * static_cast<double>(s.t)));
    const std::size_t region = s.t - begin;
    const std::size_t slot = s.segments == 0 ? region : region / s.segments;
    tsarag::detail::require(s.segments == 0 || (s.segment_length >= 1 && slot >= 2 * s.segment_length + 1),
                            ErrorKind::InvalidSpec, "anomaly segments do not fit after anomaly_start");
    Rng rng = make_rng(s.seed, "synthetic");
    std::normal_distribution<double> noise(0.0, 1.0);
    const double sigma = s.noise > 0.0 ? s.noise : 1.0;
    const double stationary = sigma / std::sqrt(1.0 - s.phi * s.phi);
    Matrix x(s.n, s.t);
    for (std::size_t i = 0; i < s.n; ++i) {
        double prev = stationary * noise(rng);
        for (std::size_t t = 0; t < s.t; ++t) {
            prev = s.phi * prev + sigma * noise(rng);
            x(i, t) = prev;
        }
    }
    // one segment per slot, at a random offset leaving a gap before the next slot
    std::vector<int> labels(s.t, 0);
    std::uniform_int_distribution<std::size_t> pick_series(0, s.n - 1);
    std::bernoulli_distribution sign(0.5);
    for (std::size_t k = 0; k < s.segments; ++k) {
        const std::size_t slot_begin = begin + k * slot;
        const std::size_t start =
            std::uniform_int_distribution<std::size_t>(slot_begin + 1, slot_begin + slot - s.segment_length - 1)(rng);
        const std::size_t series = pick_series(rng);
        const double shift = (sign(rng) ? 1.0 : -1.0) * s.spike_magnitude * stationary;
        for (std::size_t t = start; t < start + s.segment_length; ++t) {
            x(series, t) += shift;
            labels[t] = 1;
        }
    }
    return {SeriesMatrix(std::move(x)), std::move(labels)};
}

}  // namespace detail

inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    detail::check_spec(spec);
    switch (spec.generator) {
    case Generator::SeasonalSines: return detail::seasonal_sines(spec);
    case Generator::RegimeSwitch: return detail::regime_switch(spec);
    case Generator::Ar1Spikes: return detail::ar1_spikes(spec);
    }
    tsarag::detail::fail(ErrorKind::InvalidSpec, "unknown generator");
}

/// Generator that suits each task when no data file is given.
inline Generator default_generator(TaskKind kind) {
    switch (kind) {
    case TaskKind::Anomaly: return Generator::Ar1Spikes;
    case TaskKind::Classify: return Generator::RegimeSwitch;
    default: return Generator::SeasonalSines;
    }
}

// ---------------------------------------------------------------------------
// Experiment configuration

/// Everything needed to reproduce one CLI run. hyper.seed and missing.seed
/// always mirror `seed`, so one number fans out to every seeded stream.
struct ExperimentConfig {
    TaskKind task{TaskKind::Forecast};
    std::string data_path;    // empty: use `synthetic`
    std::string mask_path;    // impute: availability mask file (else `missing` is generated)
    std::string labels_path;  // anomaly: optional 0/1 label file
    std::optional<SyntheticSpec> synthetic;
    std::size_t tau{12};
    std::size_t nu{12};
    PoolShape pool{};
    Hyper hyper{};
    std::size_t w_a{3};
    missingness::MissingSpec missing{};
    std::array<int, 3> split_ratio{6, 2, 2};
    std::uint64_t seed{0};
    agents::AblationFlags ablation{};
    std::string pool_file;  // when set, the prompt pool is loaded from and saved back to this dump
    std::size_t remote_timeout_ms{10000};
    std::optional<std::size_t> clusters;
    bool cluster_raw{false};
    std::optional<std::string> model_url;
    std::string out_dir{"out"};

    void set_seed(std::uint64_t s) {
        seed = s;
        hyper.seed = s;
        missing.seed = s;
    }

    bool operator==(const ExperimentConfig&) const = default;
};

inline json synthetic_to_json(const SyntheticSpec& s) {
    return {{"generator", std::string(to_string(s.generator))},
            {"n", s.n},
            {"t", s.t},
            {"noise", s.noise},
            {"seed", s.seed},
            {"base_period", s.base_period},
            {"period_step", s.period_step},
            {"regime_length", s.regime_length},
            {"regime_gap", s.regime_gap},
            {"phi", s.phi},
            {"segments", s.segments},
            {"segment_length", s.segment_length},
            {"spike_magnitude", s.spike_magnitude},
            {"anomaly_start", s.anomaly_start}};
}

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

}  // namespace detail

inline SyntheticSpec synthetic_from_json(const json& j, std::uint64_t default_seed) {
    SyntheticSpec s;
    s.seed = default_seed;
    if (j.contains("generator")) {
        s.generator = parse_generator(j.at("generator").get<std::string>());
    }
    detail::read_opt(j, "n", s.n);
    detail::read_opt(j, "t", s.t);
    detail::read_opt(j, "noise", s.noise);
    detail::read_opt(j, "seed", s.seed);
    detail::read_opt(j, "base_period", s.base_period);
    detail::read_opt(j, "period_step", s.period_step);
    detail::read_opt(j, "regime_length", s.regime_length);
    detail::read_opt(j, "regime_gap", s.regime_gap);
    detail::read_opt(j, "phi", s.phi);
    detail::read_opt(j, "segments", s.segments);
    detail::read_opt(j, "segment_length", s.segment_length);
    detail::read_opt(j, "spike_magnitude", s.spike_magnitude);
    detail::read_opt(j, "anomaly_start", s.anomaly_start);
    return s;
}

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["task"] = std::string(wire_name(c.task));
    j["data_path"] = c.data_path;
    j["mask_path"] = c.mask_path;
    j["labels_path"] = c.labels_path;
    j["synthetic"] = c.synthetic ? synthetic_to_json(*c.synthetic) : json(nullptr);
    j["tau"] = c.tau;
    j["nu"] = c.nu;
    j["pool"] = {{"M", c.pool.size}, {"K", c.pool.top_k}, {"l", c.pool.prompt_length}, {"d", c.pool.dim}};
    j["hyper"] = {{"lr", c.hyper.lr},
                  {"epochs", c.hyper.epochs},
                  {"lambda_key", c.hyper.lambda_key},
                  {"beta", c.hyper.beta},
                  {"dpo_epochs", c.hyper.dpo_epochs},
                  {"dpo_lr", c.hyper.dpo_lr},
                  {"mask_frac", c.hyper.mask_frac}};
    j["w_a"] = c.w_a;
    j["missing"] = {{"pattern", std::string(missingness::to_string(c.missing.pattern))},
                    {"rate", c.missing.rate},
                    {"mean_block_len", c.missing.mean_block_len},
                    {"spatial_width", c.missing.spatial_width}};
    j["split"] = c.split_ratio;
    j["seed"] = c.seed;
    j["ablation"] = {{"no_pool", c.ablation.no_pool},
                     {"universal_agent", c.ablation.universal_agent},
                     {"no_train", c.ablation.no_train},
                     {"no_dpo", c.ablation.no_dpo}};
    j["pool_file"] = c.pool_file;
    j["remote_timeout_ms"] = c.remote_timeout_ms;
    j["clusters"] = c.clusters ? json(*c.clusters) : json(nullptr);
    j["cluster_raw"] = c.cluster_raw;
    j["model_url"] = c.model_url ? json(*c.model_url) : json(nullptr);
    j["out_dir"] = c.out_dir;
    return j;
}

/// Range checks shared by the JSON loader and the CLI.
inline void validate_config(const ExperimentConfig& c) {
    auto check = [](bool ok, const std::string& msg) {
        tsarag::detail::require(ok, ErrorKind::InvalidConfig, msg);
    };
    check(c.tau >= 1 && c.nu >= 1, "tau and nu must be >= 1");
    check(c.pool.size >= 1 && c.pool.top_k >= 1 && c.pool.top_k <= c.pool.size, "pool needs 1 <= K <= M");
    check(c.pool.prompt_length >= 1 && c.pool.dim >= 1, "pool needs l, d >= 1");
    check(c.hyper.lr >= 0.0 && std::isfinite(c.hyper.lr), "lr must be >= 0");
    check(c.hyper.lambda_key > 0.0, "lambda_key must be > 0");
    check(c.hyper.beta >= 0.0, "beta must be >= 0");
    check(c.hyper.mask_frac > 0.0 && c.hyper.mask_frac < 1.0, "mask_frac must lie in (0, 1)");
    check(c.hyper.dpo_lr >= 0.0, "dpo_lr must be >= 0");
    check(c.w_a >= 1, "w_a must be >= 1");
    check(c.missing.rate > 0.0 && c.missing.rate < 1.0, "missing rate must lie in (0, 1)");
    check(c.split_ratio[0] > 0 && c.split_ratio[1] > 0 && c.split_ratio[2] > 0, "split ratio parts must be positive");
    check(!c.clusters || *c.clusters >= 2, "clusters must be >= 2");
    check(!c.out_dir.empty(), "output directory must be set");
}

/// Parses a config document. `seed` is mandatory; missing keys keep their
/// defaults. Referenced files must exist when `check_files` is set.
inline ExperimentConfig config_from_json(const json& j, bool check_files = true) {
    ExperimentConfig c;
    try {
        if (!j.is_object()) {
            tsarag::detail::fail(ErrorKind::InvalidConfig, "config must be a JSON object");
        }
        const bool seed_ok = j.contains("seed") && (j.at("seed").is_number_unsigned() ||
                                                    (j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() >= 0));
        if (!seed_ok) {
            tsarag::detail::fail(ErrorKind::InvalidConfig, "config must set a non-negative integer 'seed'");
        }
        c.set_seed(j.at("seed").get<std::uint64_t>());
        if (j.contains("task")) {
            c.task = parse_task_kind(j.at("task").get<std::string>());
        }
        detail::read_opt(j, "data_path", c.data_path);
        detail::read_opt(j, "mask_path", c.mask_path);
        detail::read_opt(j, "labels_path", c.labels_path);
        if (j.contains("synthetic") && !j.at("synthetic").is_null()) {
            c.synthetic = synthetic_from_json(j.at("synthetic"), c.seed);
        }
        detail::read_opt(j, "tau", c.tau);
        detail::read_opt(j, "nu", c.nu);
        if (j.contains("pool")) {
            const json& p = j.at("pool");
            detail::read_opt(p, "M", c.pool.size);
            detail::read_opt(p, "K", c.pool.top_k);
            detail::read_opt(p, "l", c.pool.prompt_length);
            detail::read_opt(p, "d", c.pool.dim);
        }
        if (j.contains("hyper")) {
            const json& h = j.at("hyper");
            detail::read_opt(h, "lr", c.hyper.lr);
            detail::read_opt(h, "epochs", c.hyper.epochs);
            detail::read_opt(h, "lambda_key", c.hyper.lambda_key);
            detail::read_opt(h, "beta", c.hyper.beta);
            detail::read_opt(h, "dpo_epochs", c.hyper.dpo_epochs);
            detail::read_opt(h, "dpo_lr", c.hyper.dpo_lr);
            detail::read_opt(h, "mask_frac", c.hyper.mask_frac);
        }
        detail::read_opt(j, "w_a", c.w_a);
        if (j.contains("missing")) {
            const json& m = j.at("missing");
            if (m.contains("pattern")) {
                c.missing.pattern = missingness::parse_pattern(m.at("pattern").get<std::string>());
            }
            detail::read_opt(m, "rate", c.missing.rate);
            detail::read_opt(m, "mean_block_len", c.missing.mean_block_len);
            detail::read_opt(m, "spatial_width", c.missing.spatial_width);
        }
        detail::read_opt(j, "split", c.split_ratio);
        if (j.contains("ablation")) {
            const json& a = j.at("ablation");
            detail::read_opt(a, "no_pool", c.ablation.no_pool);
            detail::read_opt(a, "universal_agent", c.ablation.universal_agent);
            detail::read_opt(a, "no_train", c.ablation.no_train);
            detail::read_opt(a, "no_dpo", c.ablation.no_dpo);
        }
        detail::read_opt(j, "pool_file", c.pool_file);
        detail::read_opt(j, "remote_timeout_ms", c.remote_timeout_ms);
        if (j.contains("clusters") && !j.at("clusters").is_null()) {
            c.clusters = j.at("clusters").get<std::size_t>();
        }
        detail::read_opt(j, "cluster_raw", c.cluster_raw);
        if (j.contains("model_url") && !j.at("model_url").is_null()) {
            c.model_url = j.at("model_url").get<std::string>();
        }
        detail::read_opt(j, "out_dir", c.out_dir);
    } catch (const json::exception& e) {
        tsarag::detail::fail(ErrorKind::InvalidConfig, std::string("bad config value: ") + e.what());
    }
    validate_config(c);
    if (check_files) {
        for (const std::string* path : {&c.data_path, &c.mask_path, &c.labels_path}) {
            if (!path->empty() && !std::filesystem::exists(*path)) {
                tsarag::detail::fail(ErrorKind::InvalidConfig, "referenced file '" + *path + "' does not exist");
            }
        }
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return config_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        tsarag::detail::fail(ErrorKind::InvalidConfig, "config '" + path.string() + "' is not JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Prompt pool dump
//
// {"format": "tsarag-pool", "version": 1, "M", "l", "d", "K",
//  "keys": [[d]×M], "values": [[l·d]×M], "W": [[(K·l+1)·d]×d]}

inline constexpr int kPoolFormatVersion = 1;

inline json pool_to_json(const PromptPool& pool, const Projection& proj) {
    return {{"format", "tsarag-pool"},
            {"version", kPoolFormatVersion},
            {"M", pool.size()},
            {"l", pool.prompt_length()},
            {"d", pool.dim()},
            {"K", proj.top_k()},
            {"keys", remote::matrix_to_json(pool.keys())},
            {"values", remote::matrix_to_json(pool.values())},
            {"W", remote::matrix_to_json(proj.weights())}};
}

inline std::pair<PromptPool, Projection> pool_from_json(const json& j) {
    try {
        tsarag::detail::require(j.at("format") == "tsarag-pool", ErrorKind::ParseError, "not a pool dump");
        tsarag::detail::require(j.at("version") == kPoolFormatVersion, ErrorKind::ParseError,
                                "unsupported pool dump version");
        const auto l = j.at("l").get<std::size_t>();
        const auto d = j.at("d").get<std::size_t>();
        const auto k = j.at("K").get<std::size_t>();
        auto to_matrix = [](const json& rows) {
            return Matrix::from_rows(rows.get<std::vector<std::vector<double>>>());
        };
        PromptPool pool(to_matrix(j.at("keys")), to_matrix(j.at("values")), l);
        Projection proj(to_matrix(j.at("W")), k, l, d);
        tsarag::detail::require(pool.size() == j.at("M").get<std::size_t>() && pool.dim() == d,
                                ErrorKind::ShapeMismatch, "pool dump header disagrees with its matrices");
        return {std::move(pool), std::move(proj)};
    } catch (const json::exception& e) {
        tsarag::detail::fail(ErrorKind::ParseError, std::string("malformed pool dump: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Results

/// Writes response.json, payload.csv and config.json into `dir` (created if
/// needed). payload.csv depends only on the run's inputs, never on timing.
inline void write_results(const agents::TaskResponse& resp, const ExperimentConfig& config,
                          const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        tsarag::detail::fail(ErrorKind::IoError, "cannot create '" + dir.string() + "': " + ec.message());
    }
    write_file(dir / "response.json", response_to_json(resp).dump(2) + "\n");
    write_file(dir / "payload.csv", format_payload_csv(resp));
    write_file(dir / "config.json", config_to_json(config).dump(2) + "\n");
}

}  // namespace tsarag::dataio
